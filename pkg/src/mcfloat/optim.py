"""Optimizers that accumulate parameter updates in MC arithmetic.

Gradients and side buffers live in working precision; only the final
``param += -lr * u`` is an expansion operation (``grow_expn``), which is where
low-precision training loses small updates.  ``mc_state=True`` keeps the
momentum / Adam moments as 2-component expansions instead.
"""

from __future__ import annotations

import numpy as np

from .mct import MCTensor, approx, from_float, grow_expn, scaling_n

__all__ = ["MCSGD", "MCAdam", "LossScaler"]


def _named(params):
    if hasattr(params, "named_parameters"):
        return list(params.named_parameters())
    out = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            out.append(p)
        else:
            out.append((f"param{i}", p))
    for name, p in out:
        if not isinstance(p, MCTensor):
            raise TypeError(f"parameter {name} is not an MCTensor")
    return out


def apply_update(p: MCTensor, delta: np.ndarray) -> None:
    """``p += delta`` through grow_expn, in place; zero entries leave ``p`` bitwise unchanged."""
    delta = np.asarray(delta, dtype=p.dtype)
    new = grow_expn(p, delta).data
    keep = (delta == 0)[..., None]
    p.data = np.where(keep, p.data, new)


class _Optimizer:
    def __init__(self, params, lr: float, mc_state: bool):
        self.named = _named(params)
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.mc_state = mc_state
        self.state: dict[str, dict] = {name: {} for name, _ in self.named}

    def zero_grad(self):
        for _, p in self.named:
            p.zero_grad()

    def _grads(self):
        for name, p in self.named:
            if p.grad is None:
                raise RuntimeError(f"parameter {name} has no gradient; run backward before step")
            g = np.asarray(p.grad, dtype=p.dtype)
            if g.shape != p.shape:
                raise ValueError(f"gradient of {name} has shape {g.shape}, expected {p.shape}")
            yield name, p, g

    # buffers ---------------------------------------------------------
    def _blend(self, buf, a: float, g):
        """``a * buf + g`` in working precision or as a 2-expansion."""
        if not self.mc_state:
            return g.copy() if buf is None else a * buf + g
        if buf is None:
            return from_float(g, 2)
        return grow_expn(scaling_n(buf, a), g)

    @staticmethod
    def _val(buf):
        return approx(buf) if isinstance(buf, MCTensor) else buf


class MCSGD(_Optimizer):
    """SGD with optional (heavy-ball) momentum: ``b = mu*b + g``, ``p -= lr*b``."""

    def __init__(self, params, lr: float = 0.01, momentum: float = 0.0, mc_state: bool = False):
        super().__init__(params, lr, mc_state)
        self.momentum = momentum

    def step(self):
        for name, p, g in list(self._grads()):
            u = g
            if self.momentum:
                st = self.state[name]
                st["momentum"] = self._blend(st.get("momentum"), self.momentum, g)
                u = self._val(st["momentum"])
            apply_update(p, -self.lr * u)


class MCAdam(_Optimizer):
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 mc_state: bool = False):
        super().__init__(params, lr, mc_state)
        self.betas = tuple(betas)
        self.eps = eps

    def step(self):
        b1, b2 = self.betas
        for name, p, g in list(self._grads()):
            st = self.state[name]
            t = st["step"] = st.get("step", 0) + 1
            m, v = st.get("m"), st.get("v")
            if self.mc_state:
                st["m"] = self._blend(None if m is None else m, b1, (1 - b1) * g)
                st["v"] = self._blend(None if v is None else v, b2, (1 - b2) * g * g)
            else:
                st["m"] = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
                st["v"] = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            # eps below the smallest subnormal would round to zero in binary16
            eps = max(self.eps, float(np.finfo(p.dtype).smallest_subnormal))
            mhat = self._val(st["m"]) / (1 - b1 ** t)
            vhat = self._val(st["v"]) / (1 - b2 ** t)
            u = mhat / (np.sqrt(vhat) + eps)
            apply_update(p, -self.lr * u)


class LossScaler:
    """Dynamic loss scaling for binary16 training.

    Multiply the loss by ``scale`` before backward, then call :meth:`step`:
    non-finite gradients halve the scale and skip the update; after
    ``interval`` clean steps the scale doubles, never beyond ``cap``.
    """

    def __init__(self, scale: float = 2.0 ** 15, interval: int = 200, cap: float = 2.0 ** 15,
                 enabled: bool = True):
        self.enabled = enabled
        self.scale = scale if enabled else 1.0
        self.interval = interval
        self.cap = cap
        self._good = 0
        self.skipped = 0

    def step(self, optimizer: _Optimizer) -> bool:
        if not self.enabled:
            optimizer.step()
            return True
        inv = 1.0 / self.scale
        with np.errstate(over="ignore", invalid="ignore"):
            finite = all(np.all(np.isfinite(p.grad)) for _, p in optimizer.named if p.grad is not None)
        if not finite:
            self.scale /= 2
            self._good = 0
            self.skipped += 1
            return False
        for _, p in optimizer.named:
            if p.grad is not None:
                p.grad = (p.grad * inv).astype(p.dtype, copy=False)
        optimizer.step()
        self._good += 1
        if self._good % self.interval == 0 and self.scale < self.cap:
            self.scale *= 2
        return True
