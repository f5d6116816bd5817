"""Desk-scale experiments behind the command line tool.

Each ``run_*`` function performs one training run and returns plain Python
data; each command function (``linreg``, ``logreg``, ...) runs the set of
baselines and MC variants a study needs and returns a JSON-ready report.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import hyperbolic as hyp
from . import nn
from .eft import Precision, fma_flags
from .linalg import dot_mcn, get_default_plan, matmul_mcn, mv_mcn
from .mct import MCTensor, add_mcn, approx, from_float, mul_mcn, scaling_n
from .optim import LossScaler, MCSGD
from .oracle import rel_errors, sample_magnitude_exact, to_expansion, value_of

COMMANDS = ("err-profile", "linreg", "logreg", "mlp", "embed", "bench")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    precision: str = "b16"
    nc: list = field(default_factory=lambda: [1, 2])
    seed: int = 0
    lr: float | None = None
    epochs: int | None = None
    batch_size: int | None = None
    data: str | None = None
    out: str | None = None
    pairwise_reduction: bool = False
    fma: str | None = None
    mc_state: bool = False

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        try:
            self.precision = Precision.of(self.precision).value
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.nc or any(int(n) < 1 for n in self.nc):
            raise ConfigError(f"nc values must be positive integers, got {self.nc}")
        self.nc = [int(n) for n in self.nc]
        if self.lr is not None and not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.fma not in (None, "on", "off"):
            raise ConfigError(f"--fma takes on or off, got {self.fma!r}")
        if self.data is not None and not Path(self.data).is_file():
            raise ConfigError(f"data file not found: {self.data}")
        return self

    def asdict(self) -> dict:
        return dataclasses.asdict(self)


def _header(cfg: RunConfig) -> dict:
    return {
        "config": cfg.asdict(),
        "version": __version__,
        "fma": fma_flags(),
        "reduction": get_default_plan().strategy.value,
    }


# ------------------------------------------------------------------- data

def bundled(name: str) -> Path:
    return Path(str(resources.files("mcfloat") / "data" / name))


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Numeric CSV, optional header row, label in the last column."""
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or not any(c.strip() for c in row):
                    continue
                try:
                    rows.append([float(c) for c in row])
                except ValueError:
                    if lineno == 1 and not rows:
                        continue  # header
                    raise DataError(f"{path}:{lineno}: non-numeric value") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
        raise DataError(f"{path}: rows must all have the same number (>= 2) of columns")
    a = np.array(rows)
    if not np.all(np.isfinite(a)):
        raise DataError(f"{path}: non-finite values")
    return a[:, :-1], a[:, -1]


def split_standardize(X, y, seed: int, test_frac: float = 0.2):
    """80/20 split, features standardized with training-split statistics (binary64)."""
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(X))
    n_test = int(round(test_frac * len(X)))
    te, tr = idx[:n_test], idx[n_test:]
    mu = X[tr].mean(axis=0)
    sd = X[tr].std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    return Z[tr], y[tr], Z[te], y[te]


def synthetic_binary(n: int = 1000, seed: int = 0):
    """Two-feature binary set: labels from a noisy linear rule."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.0, size=(n, 2))
    logits = 2.0 * X[:, 0] - 1.5 * X[:, 1] + 0.5
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-logits))).astype(np.float64)
    return X, y


# ------------------------------------------------------ float64 evaluation

def param_value(p: MCTensor) -> np.ndarray:
    """Component sum in binary64 (exact for the formats and nc used here)."""
    return p.data.astype(np.float64).sum(axis=-1)


def as_float64(model: nn.Module) -> nn.Module:
    """Copy of ``model`` with single-component binary64 parameters holding its values."""

    def conv(desc):
        cfg = dict(desc["config"])
        if "nc" in cfg:
            cfg["nc"], cfg["precision"] = 1, "b64"
        out = {"type": desc["type"], "config": cfg}
        if "children" in desc:
            out["children"] = [conv(c) for c in desc["children"]]
        return out

    clone = nn._build(conv(model.describe()))
    slots = dict(nn._param_slots(clone))
    for name, p in model.named_parameters():
        owner, attr = slots[name]
        setattr(owner, attr, from_float(param_value(p), 1))
    return clone


def _bce64(p, y) -> float:
    p = np.clip(p, 1e-300, 1 - 1e-16)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


# ---------------------------------------------------------------- linreg

def linreg_data(n: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.normal(-0.5, 0.5, size=(n, 2))
    W_star = rng.normal(-0.5, 0.5, size=(1, 2))
    return X, W_star, rng


def run_linreg(precision, nc: int, seed: int = 0, lr: float = 0.05, epochs: int = 500,
               n: int = 1000, loss_scaling: bool | None = None) -> dict:
    """Full-batch GD on MSE(y, X W^T) with an MC weight.

    Inputs and the true weight are drawn in binary64 and rounded to the
    working format; targets are the exact products stored as ``nc``
    components.  Binary16 runs use dynamic loss scaling by default.  The
    logged loss is the binary64 MSE of the current weight value.
    """
    prec = Precision.of(precision)
    dt = prec.dtype
    X64, W64, rng = linreg_data(n, seed)
    X, Ws = X64.astype(dt), W64.astype(dt)
    y_exact = X.astype(np.float64) @ Ws.astype(np.float64).T  # exact for b16/b32 inputs
    if prec is Precision.B64:
        y = from_float(y_exact, nc)
    else:
        fr = np.array([Fraction(float(v)) for v in y_exact.reshape(-1)], dtype=object)
        y = MCTensor(to_expansion(fr, nc, dt).reshape(n, 1, nc))
    model = nn.MCLinear(2, 1, nc=nc, bias=False, precision=prec, rng=rng)
    opt = MCSGD(model, lr=lr)
    if loss_scaling is None:
        loss_scaling = prec is Precision.B16
    scaler = LossScaler(enabled=loss_scaling)
    Xd = X.astype(np.float64)
    losses = []
    t0 = time.perf_counter()
    with np.errstate(all="ignore"):
        for _ in range(epochs):
            w = param_value(model.weight)
            losses.append(float(np.mean((Xd @ w.T - y_exact) ** 2)))
            opt.zero_grad()
            loss = nn.mse_loss(model(X), y) * scaler.scale
            ad.backward(loss)
            scaler.step(opt)
    w = param_value(model.weight)
    final = float(np.mean((Xd @ w.T - y_exact) ** 2))
    return {"precision": prec.value, "nc": nc, "losses": losses, "final_loss": final,
            "loss_scaling": bool(loss_scaling), "skipped_steps": scaler.skipped,
            "seconds": time.perf_counter() - t0}


def _variants(cfg: RunConfig, baselines):
    runs = [(p, 1) for p in baselines]
    for k in cfg.nc:
        if (cfg.precision, k) not in runs:
            runs.append((cfg.precision, k))
    return runs


def linreg(cfg: RunConfig, n: int = 1000) -> dict:
    lr = cfg.lr or 0.05
    epochs = cfg.epochs or 500
    rep = _header(cfg)
    rep["runs"] = [run_linreg(p, k, cfg.seed, lr, epochs, n)
                   for p, k in _variants(cfg, ("b16", "b32", "b64"))]
    return rep


# ---------------------------------------------------------------- classifiers

def _train_binary(model, Xtr, ytr, Xte, yte, opt, epochs, log_every=10) -> dict:
    dt = model.parameters()[0].dtype
    Xw, yw = Xtr.astype(dt), ytr.astype(dt)
    curve = []
    t0 = time.perf_counter()
    with np.errstate(all="ignore"):
        for ep in range(epochs):
            if ep % log_every == 0:
                curve.append((ep, _bce64(as_float64(model)(Xtr).value.reshape(-1), ytr)))
            opt.zero_grad()
            prob = model(Xw)
            loss = nn.bce_loss(ad.reshape(prob, (-1,)), yw)
            ad.backward(loss)
            opt.step()
        ref = as_float64(model)
        final = _bce64(ref(Xtr).value.reshape(-1), ytr)
        curve.append((epochs, final))
        pred = model(Xte.astype(dt)).value.reshape(-1)
    acc = float(np.mean((pred > 0.5) == (yte > 0.5)))
    return {"curve": curve, "final_loss": final, "test_accuracy": acc,
            "seconds": time.perf_counter() - t0}


def logreg_model(d: int, nc: int, precision, seed: int) -> nn.Module:
    return nn.MCSequential(nn.MCLinear(d, 1, nc=nc, precision=precision, rng=seed), nn.Sigmoid())


def run_logreg(X, y, precision, nc: int, seed: int = 0, lr: float = 3e-3, momentum: float = 0.0,
               epochs: int = 4000, mc_state: bool = False) -> dict:
    Xtr, ytr, Xte, yte = split_standardize(X, y, seed)
    model = logreg_model(X.shape[1], nc, precision, seed + 1)
    opt = MCSGD(model, lr=lr, momentum=momentum, mc_state=mc_state)
    out = _train_binary(model, Xtr, ytr, Xte, yte, opt, epochs)
    out.update(precision=Precision.of(precision).value, nc=nc)
    return out


def _classifier_data(cfg: RunConfig, default):
    if cfg.data is None and default == "synthetic":
        return synthetic_binary(1000, cfg.seed), "synthetic"
    path = cfg.data or str(bundled("cancer.csv"))
    X, y = load_csv(path)
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise DataError(f"{path}: labels must be 0/1 for binary classification")
    return (X, y), path


def logreg(cfg: RunConfig) -> dict:
    (X, y), source = _classifier_data(cfg, "synthetic")
    cancer = source != "synthetic"
    lr = cfg.lr or (1e-4 if cancer else 3e-3)
    momentum = 0.9 if cancer else 0.0
    epochs = cfg.epochs or (3000 if cancer else 4000)
    rep = _header(cfg)
    rep["data"] = source
    rep["runs"] = [run_logreg(X, y, p, k, cfg.seed, lr, momentum, epochs, cfg.mc_state)
                   for p, k in _variants(cfg, ("b32", "b16"))]
    return rep


MLP_HIDDEN = 16


def mlp_model(d: int, nc: int, precision, seed: int, hidden: int = MLP_HIDDEN) -> nn.Module:
    """Three MC linear layers; activations act on evaluated sums."""
    rng = np.random.default_rng(seed)
    return nn.MCSequential(
        nn.MCLinear(d, hidden, nc=nc, precision=precision, rng=rng), nn.ReLU(),
        nn.MCLinear(hidden, hidden, nc=nc, precision=precision, rng=rng), nn.ReLU(),
        nn.MCLinear(hidden, 1, nc=nc, precision=precision, rng=rng), nn.Sigmoid(),
    )


def run_mlp(X, y, precision, nc: int, seed: int = 0, lr: float = 0.01, epochs: int = 200,
            momentum: float = 0.9, mc_state: bool = False, hidden: int = MLP_HIDDEN) -> dict:
    Xtr, ytr, Xte, yte = split_standardize(X, y, seed)
    model = mlp_model(X.shape[1], nc, precision, seed + 1, hidden)
    opt = MCSGD(model, lr=lr, momentum=momentum, mc_state=mc_state)
    out = _train_binary(model, Xtr, ytr, Xte, yte, opt, epochs)
    out.update(precision=Precision.of(precision).value, nc=nc)
    return out


def mlp(cfg: RunConfig) -> dict:
    (X, y), source = _classifier_data(cfg, "cancer")
    rep = _header(cfg)
    rep["data"] = source
    rep["runs"] = [run_mlp(X, y, p, k, cfg.seed, cfg.lr or 0.01, cfg.epochs or 200,
                           mc_state=cfg.mc_state)
                   for p, k in _variants(cfg, ("b32", "b16"))]
    return rep


# ---------------------------------------------------------------- err-profile

def _exact_mc(vals, nc, dt):
    return MCTensor(to_expansion(np.array(vals, dtype=object), nc, dt))


def profile_cell(op: str, m: float, nc: int, precision, rng, samples: int = 400,
                 vary: bool = False) -> float:
    """Median relative error of ``op`` on ``samples`` draws of magnitude ``m``.

    Inputs are high-precision draws of (10 - N(0,1))^m stored as ``nc``
    components; the truth is the exact operation on the high-precision draws.
    In ``vary`` mode the second operand has magnitude 0 (values near 1).
    """
    dt = Precision.of(precision).dtype
    xs = sample_magnitude_exact(m, rng, samples)
    ys = sample_magnitude_exact(0 if vary else m, rng, samples)
    x = _exact_mc(xs, nc, dt)
    if op == "scale":
        yv = np.array([float(v) for v in ys], dtype=np.float64).astype(dt)
        got = scaling_n(x, yv)
        truth = [a * Fraction(float(b)) for a, b in zip(xs, yv)]
    else:
        y = _exact_mc(ys, nc, dt)
        if op == "add":
            got, truth = add_mcn(x, y), [a + b for a, b in zip(xs, ys)]
        elif op == "mul":
            got, truth = mul_mcn(x, y), [a * b for a, b in zip(xs, ys)]
        else:
            raise ValueError(f"unknown op {op!r}")
    return float(np.median(rel_errors(value_of(got), np.array(truth, dtype=object))))


def max_magnitude(precision) -> int:
    """Largest m whose same-magnitude products stay finite."""
    return {"b16": 1, "b32": 8, "b64": 8}[Precision.of(precision).value]


def err_profile(cfg: RunConfig, samples: int = 400, ops=("add", "scale", "mul")) -> dict:
    rng = np.random.default_rng(cfg.seed)
    ms = list(range(max_magnitude(cfg.precision) + 1))
    rep = _header(cfg)
    table = []
    for mode in ("same", "vary"):
        for op in ops:
            for m in ms:
                for k in cfg.nc:
                    e = profile_cell(op, m, k, cfg.precision, rng, samples, vary=mode == "vary")
                    table.append({"mode": mode, "op": op, "m": m, "nc": k, "median_rel_error": e})
    rep["samples"] = samples
    rep["table"] = table
    return rep


# ---------------------------------------------------------------- embed

def run_embed(ds: hyp.EdgeDataset, precision, nc: int, seed: int = 0, lr: float = 3.0,
              epochs: int = 60, batch_size: int = 50, dim: int = 5) -> dict:
    t0 = time.perf_counter()
    table, losses = hyp.train_embedding(ds, dim=dim, nc=nc, precision=precision, lr=lr,
                                        epochs=epochs, batch_size=batch_size, seed=seed)
    dist = hyp.all_distances(table)
    bad = int(np.sum(~np.isfinite(dist)))
    if bad:
        map_, mr = float("nan"), float("nan")
    else:
        map_, mr = hyp.evaluate_map_mr(dist, ds.adjacency)
    return {"precision": Precision.of(precision).value, "nc": nc, "losses": losses.tolist(),
            "map": map_, "mean_rank": mr, "nonfinite_distances": bad,
            "nan_loss": bool(np.any(~np.isfinite(losses))), "table": table,
            "seconds": time.perf_counter() - t0}


def embed_dataset(path=None) -> hyp.EdgeDataset:
    """Transitive closure of a TSV edge list, positives in both directions."""
    path = path or bundled("tree200.tsv")
    try:
        names, edges = hyp.read_edges(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    closure = hyp.transitive_closure(len(names), edges)
    return hyp.EdgeDataset(names, np.concatenate([closure, closure[:, ::-1]]))


def embed(cfg: RunConfig) -> dict:
    ds = embed_dataset(cfg.data)
    rep = _header(cfg)
    rep["nodes"] = ds.n_nodes
    rep["positives"] = len(ds.edges)
    rep["runs"] = []
    for k in cfg.nc:
        r = run_embed(ds, cfg.precision, k, cfg.seed, cfg.lr or 3.0, cfg.epochs or 60,
                      cfg.batch_size or 50)
        table = r.pop("table")
        if cfg.out:
            base = Path(cfg.out)
            base = base.with_suffix("") if base.suffix == ".json" else base / "embedding"
            base.parent.mkdir(parents=True, exist_ok=True)
            path = base.parent / f"{base.name}_{r['precision']}_nc{k}.mct"
            hyp.save_embedding(table, ds.names, path)
            r["embedding"] = str(path)
        rep["runs"].append(r)
    return rep


# ---------------------------------------------------------------- bench

BENCH_SIZES = {"dot": ((5000,), (5000,)), "mv": ((5000, 500), (500,)),
               "matmul": ((500, 200), (200, 50))}


def _time(fn, repeats: int, warmup: int = 1):
    for _ in range(warmup):
        fn()
    ts = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return float(np.mean(ts)), float(np.std(ts))


def bench_op(op: str, nc: int | None, precision="b32", repeats: int = 3, seed: int = 0) -> dict:
    """Time one operator; ``nc=None`` times the plain numpy operation."""
    dt = Precision.of(precision).dtype
    rng = np.random.default_rng(seed)
    sa, sb = BENCH_SIZES[op]
    a = rng.standard_normal(sa).astype(dt)
    b = rng.standard_normal(sb).astype(dt)
    if nc is None:
        fn = {"dot": lambda: np.dot(a, b), "mv": lambda: a @ b, "matmul": lambda: a @ b}[op]
        repeats = max(repeats, 100)
    else:
        x = from_float(a, nc)
        fn = {"dot": lambda: dot_mcn(x, b), "mv": lambda: mv_mcn(x, b),
              "matmul": lambda: matmul_mcn(x, b)}[op]
    mean, sd = _time(fn, repeats)
    return {"op": op, "nc": nc, "sizes": [list(sa), list(sb)], "repeats": repeats,
            "mean_s": mean, "sd_s": sd}


def bench(cfg: RunConfig, repeats: int = 3, ops=("dot", "mv", "matmul")) -> dict:
    rep = _header(cfg)
    rows = []
    for op in ops:
        rows.append(bench_op(op, None, cfg.precision, repeats, cfg.seed))
        for k in cfg.nc:
            rows.append(bench_op(op, k, cfg.precision, repeats, cfg.seed))
    rep["timings"] = rows
    return rep


RUNNERS = {"err-profile": err_profile, "linreg": linreg, "logreg": logreg, "mlp": mlp,
           "embed": embed, "bench": bench}


def curves_rows(report: dict) -> list:
    """Flatten loss curves into (precision, nc, epoch, loss) rows."""
    rows = []
    for r in report.get("runs", []):
        if "losses" in r:
            pts = list(enumerate(r["losses"]))
        else:
            pts = r.get("curve", [])
        rows += [(r["precision"], r["nc"], ep, loss) for ep, loss in pts]
    return rows
