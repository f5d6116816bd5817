"""Layers with MC parameters, activations, losses and checkpoints.

Layers take standard arrays (or :class:`~mcfloat.autodiff.Var`) as input,
keep their weights as MCTensors and return Vars whose value is the evaluated
sum of an MC result; the MC result itself rides along as ``Var.mc``.  The
only constructor difference from an ordinary linear layer is ``nc``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .eft import Precision
from .linalg import matmul_mcn, reduce_sum
from .mct import MCTensor, add_mcn, approx, div_mcn, exp_mcn, from_float, grow_expn, sub_mcn
from .serialize import load as load_tensor
from .serialize import save as save_tensor

__all__ = [
    "Module", "MCLinear", "MCEmbedding", "MCSequential", "ReLU", "Sigmoid", "GELU", "Tanh",
    "MCReLU", "MCSoftmax", "mc_linear", "mc_embedding", "mc_relu", "mc_softmax", "mc_sub",
    "relu", "sigmoid", "gelu", "mc_gelu", "mse_loss", "bce_loss", "cross_entropy", "save_model",
    "load_model",
]


# ----------------------------------------------------------- functional ops

def mc_linear(x, weight: MCTensor, bias: MCTensor | None = None, plan=None) -> Var:
    """``x @ W^T + b`` with ``W`` of shape (out, in) evaluated in MC arithmetic."""
    x = ad._lift(x)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"input has {x.shape[-1]} features, layer expects {weight.shape[1]}")
    xv = x.value.astype(weight.dtype, copy=False)
    if xv.ndim == 1:
        out = matmul_mcn(weight, xv, plan)
    else:
        out = matmul_mcn(weight, xv.T, plan).T
    w = ad.param(weight)
    parents = [x, w]
    if bias is not None:
        out = add_mcn(out, bias)
        parents.append(ad.param(bias))
    wv = w.value

    def back(g):
        gx = g @ wv
        gw = np.outer(g, xv) if g.ndim == 1 else g.T @ xv
        grads = [gx, gw]
        if bias is not None:
            grads.append(g if g.ndim == 1 else g.sum(axis=0))
        return grads

    return Var(approx(out), parents, back, mc=out)


def mc_embedding(table: MCTensor, indices) -> Var:
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise TypeError("embedding indices must be integers")
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"embedding index out of range [0, {n})")
    rows = MCTensor(table.data[idx])
    t = ad.param(table)
    shape = table.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return Var(approx(rows), (t,), back, mc=rows)


def _as_mc(x: Var, nc: int | None) -> MCTensor:
    if x.mc is not None:
        return x.mc
    return from_float(x.value, nc or 1)


def mc_relu(x) -> Var:
    """Zero every component where the evaluated sum is not positive."""
    x = ad._lift(x)
    mask = x.value > 0
    if x.mc is None:
        return relu(x)
    data = np.where(mask[..., None], x.mc.data, 0).astype(x.mc.dtype, copy=False)
    out = MCTensor(data)
    return Var(approx(out), (x,), lambda g: (g * mask,), mc=out)


def mc_softmax(x, axis: int = -1, nc: int | None = None) -> Var:
    """Softmax with exp, sum and division in MC arithmetic; rows shifted by their max."""
    x = ad._lift(x)
    xm = _as_mc(x, nc)
    axis = axis % x.ndim
    shift = -np.max(x.value, axis=axis, keepdims=True)
    e = exp_mcn(grow_expn(xm, np.broadcast_to(shift, x.shape)))
    s = reduce_sum(e, axis=axis)
    s = MCTensor(np.expand_dims(s.data, axis))
    out = div_mcn(e, s)
    y = approx(out)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return Var(y, (x,), back, mc=out)


def mc_sub(pred, target) -> Var:
    """``pred - target`` with the difference formed in MC arithmetic.

    ``target`` may be an MCTensor; the gradient is that of ordinary subtraction
    with respect to ``pred``.
    """
    pred = ad._lift(pred)
    if not isinstance(target, MCTensor):
        return ad.sub(pred, target)
    r = sub_mcn(_as_mc(pred, target.nc), target)
    return Var(approx(r), (pred,), lambda g: (g,), mc=r)


def relu(x) -> Var:
    x = ad._lift(x)
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Var:
    x = ad._lift(x)
    with np.errstate(over="ignore"):
        y = 1 / (1 + np.exp(-x.value))
    return Var(y, (x,), lambda g: (g * y * (1 - y),))


_GELU_C = math.sqrt(2 / math.pi)


def gelu(x) -> Var:
    """Tanh approximation of GELU."""
    x = ad._lift(x)
    v = x.value
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    y = 0.5 * v * (1 + t)

    def back(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1 + t) + 0.5 * v * (1 - t * t) * dinner),)

    return Var(y, (x,), back)


# activations between MC layers see evaluated sums, so the MC variant is the same map
mc_gelu = gelu


# ------------------------------------------------------------------ losses

def mse_loss(pred, target) -> Var:
    """Mean squared error; an MCTensor target makes the residual an MC difference."""
    r = mc_sub(pred, target)
    return ad.mean(ad.square(r))


def bce_loss(prob, target) -> Var:
    """Binary cross entropy on probabilities, logs clamped at -100."""
    p = ad._lift(prob)
    t = np.asarray(target, dtype=p.dtype).reshape(p.shape)
    pv = p.value
    with np.errstate(divide="ignore"):
        lp = np.maximum(np.log(pv), -100)
        lq = np.maximum(np.log1p(-pv), -100)
    n = pv.size
    loss = -np.mean(t * lp + (1 - t) * lq)
    tiny = float(np.finfo(p.dtype).tiny)

    def back(g):
        denom = np.maximum(pv * (1 - pv), tiny)
        return (g * (pv - t) / denom * (1.0 / n),)

    return Var(np.asarray(loss, dtype=p.dtype), (p,), back)


def cross_entropy(logits, labels) -> Var:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    z = ad._lift(logits)
    labels = np.asarray(labels)
    zv = z.value
    shifted = zv - zv.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(zv.shape[0])
    n = zv.shape[0]
    loss = -np.mean(logp[rows, labels])

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (g * p * (1.0 / n),)

    return Var(np.asarray(loss, dtype=z.dtype), (z,), back)


# ------------------------------------------------------------------ modules

_REGISTRY: dict[str, type] = {}


class Module:
    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        _REGISTRY[cls.__name__] = cls

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def children(self) -> list:
        return []

    def _own_parameters(self):
        return []

    def named_parameters(self, prefix: str = ""):
        for name, p in self._own_parameters():
            yield prefix + name, p
        for i, child in enumerate(self.children()):
            yield from child.named_parameters(f"{prefix}{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def config(self) -> dict:
        return {}

    def describe(self) -> dict:
        d = {"type": type(self).__name__, "config": self.config()}
        kids = self.children()
        if kids:
            d["children"] = [k.describe() for k in kids]
        return d


def _init_uniform(shape, bound, nc, precision, rng) -> MCTensor:
    # bound evaluated in binary64, rounded once into component 0
    w = rng.uniform(-bound, bound, size=shape)
    return from_float(w.astype(Precision.of(precision).dtype), nc)


class MCLinear(Module):
    def __init__(self, in_features: int, out_features: int, nc: int = 2, bias: bool = True,
                 precision="b32", rng=None, plan=None):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.in_features, self.out_features, self.nc = in_features, out_features, nc
        self.precision = Precision.of(precision)
        self.plan = plan
        bound = 1.0 / math.sqrt(in_features) if in_features else 0.0
        self.weight = _init_uniform((out_features, in_features), bound, nc, precision, rng)
        self.bias = _init_uniform((out_features,), bound, nc, precision, rng) if bias else None

    def _own_parameters(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def forward(self, x):
        return mc_linear(x, self.weight, self.bias, self.plan)

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features, "nc": self.nc,
                "bias": self.bias is not None, "precision": self.precision.value}


class MCEmbedding(Module):
    def __init__(self, num_embeddings: int, dim: int, nc: int = 2, precision="b32", rng=None,
                 init=None):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.num_embeddings, self.dim, self.nc = num_embeddings, dim, nc
        self.precision = Precision.of(precision)
        table = rng.standard_normal((num_embeddings, dim)) if init is None else np.asarray(init)
        self.weight = from_float(table.astype(self.precision.dtype), nc)

    def _own_parameters(self):
        return [("weight", self.weight)]

    def forward(self, indices):
        return mc_embedding(self.weight, indices)

    def config(self):
        return {"num_embeddings": self.num_embeddings, "dim": self.dim, "nc": self.nc,
                "precision": self.precision.value}


class MCSequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)
        prev = None
        for layer in self.layers:
            if isinstance(layer, MCLinear):
                if prev is not None and prev != layer.in_features:
                    raise ValueError(f"layer expects {layer.in_features} inputs, previous gives {prev}")
                prev = layer.out_features

    def children(self):
        return self.layers

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)


class _Activation(Module):
    fn = None

    def forward(self, x):
        return type(self).fn(x)


class ReLU(_Activation):
    fn = staticmethod(relu)


class Sigmoid(_Activation):
    fn = staticmethod(sigmoid)


class GELU(_Activation):
    fn = staticmethod(gelu)


class Tanh(_Activation):
    fn = staticmethod(ad.tanh)


class MCReLU(_Activation):
    fn = staticmethod(mc_relu)


class MCSoftmax(Module):
    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, x):
        return mc_softmax(x, self.axis)

    def config(self):
        return {"axis": self.axis}


# -------------------------------------------------------------- checkpoints

def save_model(model: Module, path) -> None:
    """Write ``manifest.json`` plus one binary blob per parameter into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, p in model.named_parameters():
        fname = name.replace(".", "_") + ".mct"
        save_tensor(p, path / fname)
        files[name] = fname
    manifest = {"format": "mcfloat-checkpoint", "version": 1, "topology": model.describe(),
                "parameters": files}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _build(desc: dict) -> Module:
    cls = _REGISTRY[desc["type"]]
    if cls is MCSequential:
        return MCSequential(*[_build(c) for c in desc.get("children", [])])
    return cls(**desc["config"])


def load_model(path) -> Module:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "mcfloat-checkpoint":
        raise ValueError(f"{path} is not a checkpoint directory")
    model = _build(manifest["topology"])
    slots = dict(_param_slots(model))
    for name, fname in manifest["parameters"].items():
        owner, attr = slots[name]
        t = load_tensor(path / fname)
        current = getattr(owner, attr)
        if current is not None and current.data.shape != t.data.shape:
            raise ValueError(f"parameter {name}: checkpoint shape {t.data.shape} != {current.data.shape}")
        setattr(owner, attr, t)
    return model


def _param_slots(module: Module, prefix: str = ""):
    for name, _ in module._own_parameters():
        yield prefix + name, (module, name)
    for i, child in enumerate(module.children()):
        yield from _param_slots(child, f"{prefix}{i}.")
