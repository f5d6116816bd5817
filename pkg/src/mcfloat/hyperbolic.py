"""Graph embedding in the upper half-space model of hyperbolic space.

Points are rows ``x`` of an MC table with last coordinate ``x_n > 0``; the
metric is the Euclidean one divided by ``x_n**2`` and

    d(x, y) = arcosh(1 + |x - y|^2 / (2 x_n y_n)).

The ratio ``t = |x - y|^2 / (2 x_n y_n)`` is formed in MC arithmetic; the
arcosh is applied to its evaluated sum as ``log1p(t + sqrt(t (t + 2)))``,
which stays accurate for coincident points where ``1 + t`` would round to 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .eft import Precision, binary16_in_binary64, fma_enabled
from .linalg import reduce_sum
from .mct import MCTensor, approx, div_mcn, from_float, scaling_n, square_mcn, sub_mcn
from .nn import cross_entropy, mc_embedding
from .optim import apply_update

log = logging.getLogger(__name__)

__all__ = [
    "EdgeDataset", "read_edges", "transitive_closure", "balanced_tree", "arcosh",
    "halfspace_t", "halfspace_distance", "distance_var", "reconstruction_loss", "init_table",
    "rsgd_step", "eps_n", "sample_batch", "evaluate_map_mr", "train_embedding",
]


# ------------------------------------------------------------------ data

@dataclass
class EdgeDataset:
    names: list
    edges: np.ndarray                      # (E, 2) int, positives
    negatives: int = 50
    adjacency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.names)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise ValueError("edge references an unknown node")
        adj = np.zeros((n, n), dtype=bool)
        adj[self.edges[:, 0], self.edges[:, 1]] = True
        adj[self.edges[:, 1], self.edges[:, 0]] = True
        self.adjacency = adj

    @property
    def n_nodes(self) -> int:
        return len(self.names)


def read_edges(path) -> tuple[list, np.ndarray]:
    """Parse ``parent<TAB>child`` lines; ids are interned in first-seen order."""
    ids: dict[str, int] = {}
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(p.strip() for p in parts):
                raise ValueError(f"{path}:{lineno}: expected 'parent<TAB>child', got {line!r}")
            edges.append([ids.setdefault(p.strip(), len(ids)) for p in parts])
    if not edges:
        raise ValueError(f"{path}: no edges")
    return list(ids), np.array(edges, dtype=np.int64)


def transitive_closure(n: int, edges: np.ndarray) -> np.ndarray:
    """All (ancestor, descendant) pairs of a directed acyclic edge list."""
    children = [[] for _ in range(n)]
    for a, b in edges:
        children[a].append(b)
    out = set()
    for root in range(n):
        stack = list(children[root])
        while stack:
            v = stack.pop()
            if (root, v) not in out:
                out.add((root, v))
                stack.extend(children[v])
    return np.array(sorted(out), dtype=np.int64).reshape(-1, 2)


def balanced_tree(n: int, branching: int = 3) -> np.ndarray:
    """Parent/child edges of the first ``n`` nodes of a complete ``branching``-ary tree."""
    return np.array([[(i - 1) // branching, i] for i in range(1, n)], dtype=np.int64)


# -------------------------------------------------------------- distance

def arcosh(a):
    """arcosh on standard arrays with a series guard just above 1."""
    a = np.asarray(a)
    if np.any(a < 1):
        raise ValueError("arcosh argument below 1")
    am1 = a - 1
    near = am1 <= 1e-12
    with np.errstate(invalid="ignore"):
        far = np.log(a + np.sqrt(am1 * (a + 1)))
    return np.where(near, np.sqrt(2 * am1), far)


def _mc(x, nc):
    return x if isinstance(x, MCTensor) else from_float(np.asarray(x), nc or 1)


def _canonical(x: MCTensor, y: MCTensor):
    # order each pair lexicographically so the computation is the same for (x, y) and (y, x)
    xs = x.data.reshape(x.data.shape[:-2] + (-1,))
    ys = y.data.reshape(y.data.shape[:-2] + (-1,))
    xs, ys = np.broadcast_arrays(xs, ys)
    swap = np.zeros(xs.shape[:-1], dtype=bool)
    decided = np.zeros_like(swap)
    for i in range(xs.shape[-1]):
        lt, gt = xs[..., i] < ys[..., i], xs[..., i] > ys[..., i]
        swap |= ~decided & lt
        decided |= lt | gt
    xd, yd = np.broadcast_arrays(x.data, y.data)
    s = swap[..., None, None]
    return MCTensor(np.where(s, yd, xd)), MCTensor(np.where(s, xd, yd))


def _ratio(x: MCTensor, y: MCTensor) -> MCTensor:
    s = reduce_sum(square_mcn(sub_mcn(x, y)), axis=-1)
    # two divisions instead of one by 2 x_n y_n: the height product underflows
    # in binary16 once both heights drop below ~2^-12
    return div_mcn(div_mcn(s, x[..., -1]), scaling_n(y[..., -1], 2.0))


def halfspace_t(x, y, nc: int | None = None) -> MCTensor:
    """``|x - y|^2 / (2 x_n y_n)`` over the last axis, in MC arithmetic."""
    x, y = _mc(x, nc), _mc(y, nc)
    if np.any(approx(x[..., -1]) <= 0) or np.any(approx(y[..., -1]) <= 0):
        raise ValueError("half-space points need a positive last coordinate")
    x, y = _canonical(x, y)
    if x.dtype == np.float16 and x.nc > 1 and fma_enabled("b16"):
        with binary16_in_binary64():
            t = _ratio(MCTensor(x.data.astype(np.float64)), MCTensor(y.data.astype(np.float64)))
        t = MCTensor(t.data.astype(np.float16))
    else:
        t = _ratio(x, y)
    # t >= 0, so a non-finite result is an overflow (the MC division turns it
    # into inf - inf); saturate it at the largest finite value
    over = ~np.isfinite(approx(t))
    if over.any():
        t.data[over] = 0
        t.data[over, 0] = np.finfo(t.dtype).max
    return t


def _dist_from_t(t):
    # arcosh(1 + t) without forming 1 + t or t^2; an overflowed ratio saturates
    # at the largest finite value so far-apart binary16 points stay comparable
    t = np.minimum(t, np.finfo(t.dtype).max)
    with np.errstate(invalid="ignore", over="ignore"):
        small = np.log1p(t + np.sqrt(t) * np.sqrt(t + 2))
        t1 = t + 1
        big = np.log1p(t) + np.log1p(np.sqrt(t / t1) * np.sqrt((t + 2) / t1))
    return np.where(t > 1, big, small)


def halfspace_distance(x, y, nc: int | None = None) -> np.ndarray:
    """Hyperbolic distance; MCTensor or standard inputs (standard ones use ``nc``, default 1)."""
    return _dist_from_t(approx(halfspace_t(x, y, nc)))


def distance_var(u: Var, v: Var) -> Var:
    """Distance between MC-valued Vars; the Jacobian is evaluated at their evaluated sums."""
    t = approx(halfspace_t(u.mc, v.mc))
    d = _dist_from_t(t)
    uv, vv = u.value, v.value
    un, vn = uv[..., -1:], vv[..., -1:]
    t = np.minimum(t, np.finfo(t.dtype).max)[..., None]

    def back(g):
        # dd/dx = (x - y) / (x_n y_n sqrt(t (t+2))), minus sqrt(t/(t+2)) / x_n on
        # the height; grouped so that no intermediate overflows in binary16
        g = g[..., None]
        st, st2 = np.sqrt(t), np.sqrt(t + 2)
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            den = (st * un) * (st2 * vn)
            c = np.where(den > 0, g / np.where(den > 0, den, 1), 0)
            gu = c * (uv - vv)
            gv = -gu
            h = g * (st / st2)
            gu[..., -1:] -= h / un
            gv[..., -1:] -= h / vn
        return gu, gv

    return Var(d, (u, v), back)


def reconstruction_loss(table: MCTensor, batch: np.ndarray) -> Var:
    """Negative log-likelihood of the positive (column 1) among columns 1.. for anchors in column 0.

    ``batch`` has shape (B, 2 + K): anchor, positive, K negatives.
    """
    batch = np.asarray(batch)
    u = mc_embedding(table, batch[:, :1])
    v = mc_embedding(table, batch[:, 1:])
    d = distance_var(u, v)
    return cross_entropy(-d, np.zeros(len(batch), dtype=np.int64))


# -------------------------------------------------------------- training

def eps_n(precision) -> float:
    # 2^-16 in binary16; wider formats keep the same floor, since a height
    # near their own subnormal range saturates every distance it touches
    return max(Precision.of(precision).min_pos * 2.0 ** 8, 2.0 ** -16)


def init_table(n: int, dim: int, nc: int, precision, rng, spread: float = 1e-3) -> MCTensor:
    """Points scattered around (0, ..., 0, 1)."""
    x = rng.uniform(-spread, spread, size=(n, dim))
    x[:, -1] += 1.0
    return from_float(x.astype(Precision.of(precision).dtype), nc)


def rsgd_step(table: MCTensor, lr: float) -> int:
    """Riemannian SGD: scale ``table.grad`` by x_n^2, step, clamp heights.  Returns clamp count."""
    if table.grad is None:
        raise RuntimeError("embedding table has no gradient")
    g = np.asarray(table.grad, dtype=table.dtype)
    xn = approx(table)[:, -1:]
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        delta = -lr * (xn * xn * g)
    # x_n^2 * grad is bounded in exact arithmetic; inf or NaN here means a
    # clamped height met an overflowed gradient, so that entry does not move
    bad = ~np.isfinite(delta)
    if bad.any():
        log.debug("dropped %d non-finite update entries", int(bad.sum()))
        delta[bad] = 0
    apply_update(table, delta)
    eps = eps_n(table.precision)
    low = approx(table)[:, -1] < eps
    if low.any():
        log.debug("clamped %d heights to %g", int(low.sum()), eps)
        table.data[low, -1, :] = 0
        table.data[low, -1, 0] = eps
    return int(low.sum())


def sample_batch(ds: EdgeDataset, pos: np.ndarray, rng) -> np.ndarray:
    """Rows ``[u, v, w_1..w_K]`` with each w a non-neighbor of u distinct from u when one exists."""
    k = ds.negatives
    u = pos[:, 0]
    neg = rng.integers(0, ds.n_nodes, size=(len(pos), k))
    for _ in range(20):
        bad = ds.adjacency[u[:, None], neg] | (neg == u[:, None])
        if not bad.any():
            break
        neg[bad] = rng.integers(0, ds.n_nodes, size=int(bad.sum()))
    else:
        # anchors adjacent to (nearly) everything, like a tree root: pad with the
        # positive itself, which contributes no gradient through the softmax
        neg = np.where(bad, pos[:, 1:2], neg)
    return np.concatenate([pos, neg], axis=1)


def train_embedding(ds: EdgeDataset, dim: int = 5, nc: int = 2, precision="b64", lr: float = 0.3,
                    epochs: int = 300, batch_size: int = 50, seed: int = 0, callback=None):
    """Train an embedding; returns the table and the per-epoch mean loss."""
    rng = np.random.default_rng(seed)
    table = init_table(ds.n_nodes, dim, nc, precision, rng)
    losses = []
    pos_all = ds.edges
    for ep in range(epochs):
        order = rng.permutation(len(pos_all))
        tot, nb = 0.0, 0
        for s in range(0, len(order), batch_size):
            batch = sample_batch(ds, pos_all[order[s:s + batch_size]], rng)
            table.zero_grad()
            with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
                loss = reconstruction_loss(table, batch)
                ad.backward(loss)
            rsgd_step(table, lr)
            tot += float(loss.value)
            nb += 1
        losses.append(tot / max(nb, 1))
        if callback is not None:
            callback(ep, losses[-1])
    return table, np.array(losses)


def all_distances(table: MCTensor) -> np.ndarray:
    return halfspace_distance(table[:, None, :], table[None, :, :])


def evaluate_map_mr(dist: np.ndarray, adjacency: np.ndarray) -> tuple[float, float]:
    """Mean average precision and mean rank from a full distance matrix.

    For anchor u with neighbor v, the rank of v is 1 plus the number of
    non-neighbors strictly closer to u; precision at v is the fraction of
    neighbors among all nodes no farther than v.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = len(dist)
    aps, ranks = [], []
    for u in range(n):
        nb = np.flatnonzero(adjacency[u])
        if nb.size == 0:
            continue
        others = np.ones(n, dtype=bool)
        others[u] = False
        non = others & ~adjacency[u]
        du = dist[u]
        dn = np.sort(du[non])
        dp = np.sort(du[nb])
        for dv in du[nb]:
            ranks.append(1 + np.searchsorted(dn, dv, side="left"))
        hits = np.searchsorted(dp, dp, side="right")
        total = hits + np.searchsorted(dn, dp, side="right")
        aps.append(float(np.mean(hits / total)))
    return float(np.mean(aps)), float(np.mean(ranks))


def save_embedding(table: MCTensor, names: list, path) -> None:
    """Write ``path`` (mct blob) and ``path`` + ``.ids.json``."""
    import json

    from .serialize import save

    path = Path(path)
    save(table, path)
    Path(str(path) + ".ids.json").write_text(json.dumps({n: i for i, n in enumerate(names)}))
