"""Matrix products of an MCTensor with a standard array.

Products are formed with ScalingN (kept at nc+1 components) and reduced
with expansion addition.  The default plan accumulates left to right; the
pairwise plan halves the number of live partial sums at every level.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .eft import binary16_in_binary64, fma_enabled
from .mct import MCTensor, _add, _comps, _join, _renorm, _scale, _standard

__all__ = [
    "Strategy", "ReductionPlan", "set_default_plan", "get_default_plan", "dot_mcn", "mv_mcn",
    "mm_mcn", "bmm_mcn", "mm4d_mcn", "addmm_mcn", "matmul_mcn", "reduce_sum",
]


class Strategy(enum.Enum):
    SEQUENTIAL = "sequential"
    PAIRWISE = "pairwise"


@dataclass(frozen=True)
class ReductionPlan:
    strategy: Strategy = Strategy.SEQUENTIAL
    leaf_arity: int = 2

    @staticmethod
    def depth(n: int) -> int:
        """Levels of a pairwise tree over ``n`` summands."""
        return int(np.ceil(np.log2(n))) if n > 1 else 0


_default_plan = ReductionPlan()


def set_default_plan(plan: ReductionPlan | str) -> None:
    global _default_plan
    if isinstance(plan, str):
        plan = ReductionPlan(Strategy(plan))
    _default_plan = plan


def get_default_plan() -> ReductionPlan:
    return _default_plan


def _products(x, w, nc):
    # nc == 1 keeps the plain rounded product so accumulation matches fl(a + fl(b*c))
    return _scale(x, w, expanded=nc > 1)


def _reduce(terms: list, nc: int, plan: ReductionPlan) -> list:
    """Sum raw expansions indexed by axis 0 of each component array."""
    k = terms[0].shape[0]
    if k == 0:
        return [np.zeros(terms[0].shape[1:], dtype=terms[0].dtype) for _ in range(nc)]
    if plan.strategy is Strategy.SEQUENTIAL:
        acc = _renorm([c[0] for c in terms], nc)
        for i in range(1, k):
            acc = _add(acc, [c[i] for c in terms], nc)
        return acc
    level = terms
    if len(level) != nc:
        level = _renorm(level, nc)
    while level[0].shape[0] > 1:
        m = level[0].shape[0]
        half = m // 2
        paired = _add([c[0:2 * half:2] for c in level], [c[1:2 * half:2] for c in level], nc)
        if m % 2:
            paired = [np.concatenate([p, c[-1:]], axis=0) for p, c in zip(paired, level)]
        level = paired
    return [c[0] for c in level]


def _contract(x, w, nc, plan) -> np.ndarray:
    """``x``: (..., m, k, nc) components, ``w``: (..., k, n) -> (..., m, n, nc)."""
    if x.dtype == np.float16 and nc > 1 and fma_enabled("b16"):
        with binary16_in_binary64():
            out = _contract(x.astype(np.float64), np.asarray(w, dtype=np.float64), nc, plan)
        return out.astype(np.float16)
    k = x.shape[-2]
    out_shape = np.broadcast_shapes(x.shape[:-3], w.shape[:-2]) + (x.shape[-3], w.shape[-1])
    if k == 0:
        return np.zeros(out_shape + (nc,), dtype=x.dtype)
    # k leads so that each step reads contiguous blocks
    xk = [np.ascontiguousarray(np.moveaxis(c, -1, 0))[..., None] for c in _comps(x)]
    wk = np.ascontiguousarray(np.moveaxis(w, -2, 0))[..., None, :]
    if plan.strategy is Strategy.SEQUENTIAL:
        acc = None
        for i in range(k):
            t = _products([c[i] for c in xk], wk[i], nc)
            acc = _renorm(t, nc) if acc is None else _add(acc, t, nc)
        return _join([np.broadcast_to(c, out_shape) for c in acc])
    terms = _products(xk, wk, nc)
    return _join([np.broadcast_to(c, out_shape) for c in _reduce(terms, nc, plan)])


def _check_mc(x):
    if not isinstance(x, MCTensor):
        raise TypeError("first operand must be an MCTensor")


def _check_std(w):
    if isinstance(w, MCTensor):
        raise NotImplementedError("MCTensor x MCTensor matrix products are not supported; "
                                  "evaluate one operand with approx() first")


def dot_mcn(x: MCTensor, v, plan: ReductionPlan | None = None) -> MCTensor:
    _check_mc(x)
    _check_std(v)
    v = _standard(v, x.dtype)
    if x.ndim != 1 or v.ndim != 1:
        raise ValueError(f"dot_mcn expects vectors, got {x.shape} and {v.shape}")
    if x.shape[0] != v.shape[0]:
        raise ValueError(f"length mismatch: {x.shape} and {v.shape}")
    plan = plan or _default_plan
    out = _contract(x.data[None, :, :], v[:, None], x.nc, plan)
    return MCTensor(out[0, 0])


def mv_mcn(x: MCTensor, v, plan: ReductionPlan | None = None) -> MCTensor:
    _check_mc(x)
    _check_std(v)
    v = _standard(v, x.dtype)
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ValueError(f"mv_mcn shape mismatch: {x.shape} and {v.shape}")
    plan = plan or _default_plan
    return MCTensor(_contract(x.data, v[:, None], x.nc, plan)[:, 0])


def mm_mcn(x: MCTensor, w, plan: ReductionPlan | None = None) -> MCTensor:
    _check_mc(x)
    _check_std(w)
    w = _standard(w, x.dtype)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"mm_mcn shape mismatch: {x.shape} and {w.shape}")
    return MCTensor(_contract(x.data, w, x.nc, plan or _default_plan))


def bmm_mcn(x: MCTensor, w, plan: ReductionPlan | None = None) -> MCTensor:
    _check_mc(x)
    _check_std(w)
    w = _standard(w, x.dtype)
    if x.ndim != 3 or w.ndim != 3 or x.shape[0] != w.shape[0] or x.shape[2] != w.shape[1]:
        raise ValueError(f"bmm_mcn shape mismatch: {x.shape} and {w.shape}")
    return MCTensor(_contract(x.data, w, x.nc, plan or _default_plan))


def mm4d_mcn(x: MCTensor, w, plan: ReductionPlan | None = None) -> MCTensor:
    """Batched product over two leading dimensions, with broadcasting between them."""
    _check_mc(x)
    _check_std(w)
    w = _standard(w, x.dtype)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ValueError(f"mm4d_mcn shape mismatch: {x.shape} and {w.shape}")
    try:
        np.broadcast_shapes(x.shape[:2], w.shape[:2])
    except ValueError:
        raise ValueError(f"mm4d_mcn batch dims do not broadcast: {x.shape} and {w.shape}") from None
    return MCTensor(_contract(x.data, w, x.nc, plan or _default_plan))


def addmm_mcn(bias: MCTensor, x: MCTensor, w, alpha=1.0, beta=1.0,
              plan: ReductionPlan | None = None) -> MCTensor:
    """``beta * bias + alpha * (x @ w)``."""
    prod = _comps(matmul_mcn(x, w, plan).data)
    nc = x.nc
    if alpha != 1:
        prod = _scale(prod, np.asarray(alpha, dtype=x.dtype), expanded=False)
    b = _comps(bias.data)
    if beta != 1:
        b = _scale(b, np.asarray(beta, dtype=x.dtype), expanded=False)
    return MCTensor(_join(_add(prod, b, nc)))


def matmul_mcn(x: MCTensor, w, plan: ReductionPlan | None = None) -> MCTensor:
    """Dispatch on operand ranks following the usual matmul conventions."""
    _check_mc(x)
    _check_std(w)
    w = _standard(w, x.dtype)
    rx, rw = x.ndim, w.ndim
    try:
        if rx == 1 and rw == 1:
            return dot_mcn(x, w, plan)
        if rx == 2 and rw == 1:
            return mv_mcn(x, w, plan)
        if rx == 1 and rw == 2:
            return MCTensor(mm_mcn(MCTensor(x.data[None]), w, plan).data[0])
        if rx == 2 and rw == 2:
            return mm_mcn(x, w, plan)
        if rx == 3 and rw == 3 and x.shape[0] == w.shape[0]:
            return bmm_mcn(x, w, plan)
        if rx == 4 and rw == 4:
            return mm4d_mcn(x, w, plan)
        if rx >= 2 and rw >= 2:
            if x.shape[-1] != w.shape[-2]:
                raise ValueError
            np.broadcast_shapes(x.shape[:-2], w.shape[:-2])
            return MCTensor(_contract(x.data, w, x.nc, plan or _default_plan))
        if rx >= 3 and rw == 1:
            if x.shape[-1] != w.shape[0]:
                raise ValueError
            return MCTensor(_contract(x.data, w[:, None], x.nc, plan or _default_plan)[..., 0, :])
        raise ValueError
    except ValueError as err:
        raise ValueError(f"matmul_mcn: incompatible shapes {x.shape} and {w.shape}") from err


def reduce_sum(x: MCTensor, axis=None, plan: ReductionPlan | None = None) -> MCTensor:
    """Expansion sum along ``axis`` (all axes when None)."""
    data = x.data
    if axis is None:
        data = data.reshape(-1, x.nc)
        axis = 0
    axis = axis % (data.ndim - 1)
    terms = [np.moveaxis(c, axis, 0) for c in _comps(data)]
    return MCTensor(_join(_reduce(terms, x.nc, plan or _default_plan)))
