"""Multi-component tensors: values stored as unevaluated sums of floats.

An :class:`MCTensor` keeps ``nc`` working-precision components per element,
stacked on a trailing axis and ordered by decreasing magnitude.  The value of
an element is the exact (unrounded) sum of its components.

The kernels below work on lists of component arrays; the public functions
wrap them for :class:`MCTensor` arguments.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np

from .eft import Precision, exact_product, fl_add, fl_div, fl_mul, two_sum

__all__ = [
    "MCTensor", "from_float", "zeros", "ones", "approx", "renormalize", "simple_renorm",
    "grow_expn", "scaling_n", "div_n", "add_mcn", "sub_mcn", "div_mcn", "mul_mcn",
    "mul_mcn_slow", "exp_mcn", "square_mcn", "negate", "constant",
]


class MCTensor:
    """Expansion array with ``nc`` components on the trailing axis of ``data``.

    ``grad`` is a working-precision array of ``shape`` filled in by backward
    passes; it is the one mutable field and belongs to the training loop.
    """

    __array_priority__ = 1000

    def __init__(self, data, grad=None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            raise TypeError(f"component array must be floating point, got {data.dtype}")
        if data.ndim == 0:
            raise ValueError("component array needs a trailing component axis")
        if data.shape[-1] < 1:
            raise ValueError("nc must be >= 1")
        self.data = data
        self.grad = grad

    @property
    def shape(self) -> tuple:
        return self.data.shape[:-1]

    @property
    def ndim(self) -> int:
        return self.data.ndim - 1

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def nc(self) -> int:
        return self.data.shape[-1]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def precision(self) -> Precision:
        return Precision.of(self.data.dtype)

    @property
    def fc(self) -> np.ndarray:
        """View of the leading component."""
        return self.data[..., 0]

    @property
    def T(self) -> "MCTensor":
        return self.transpose()

    def component(self, i: int) -> np.ndarray:
        return self.data[..., i]

    def approx(self) -> np.ndarray:
        return approx(self)

    def copy(self) -> "MCTensor":
        return MCTensor(self.data.copy(), None if self.grad is None else self.grad.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def transpose(self, *axes) -> "MCTensor":
        if not axes:
            axes = tuple(range(self.ndim))[::-1]
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return MCTensor(self.data.transpose(*axes, self.ndim))

    def reshape(self, *shape) -> "MCTensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return MCTensor(self.data.reshape(*shape, self.nc))

    def __getitem__(self, key) -> "MCTensor":
        if not isinstance(key, tuple):
            key = (key,)
        return MCTensor(self.data[(*key, slice(None))])

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"MCTensor(shape={self.shape}, nc={self.nc}, precision={self.precision.value})"

    def _operand(self, other):
        if isinstance(other, MCTensor):
            return other
        return np.asarray(other, dtype=self.dtype)

    def __neg__(self):
        return negate(self)

    def __pos__(self):
        return self

    def __add__(self, other):
        other = self._operand(other)
        if isinstance(other, MCTensor):
            return add_mcn(self, other)
        return grow_expn(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._operand(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._operand(other)
        if isinstance(other, MCTensor):
            return mul_mcn(self, other)
        return scaling_n(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._operand(other)
        if isinstance(other, MCTensor):
            return div_mcn(self, other)
        return div_mcn(self, from_float(other, self.nc))

    def __rtruediv__(self, other):
        return div_n(self._operand(other), self)

    def __matmul__(self, other):
        from .linalg import matmul_mcn
        return matmul_mcn(self, other)

    def exp(self):
        return exp_mcn(self)

    def square(self):
        return square_mcn(self)

    def sum(self, axis=None):
        from .linalg import reduce_sum
        return reduce_sum(self, axis)


# ---------------------------------------------------------------- construction

def from_float(t, nc: int, dtype=None) -> MCTensor:
    """Embed a standard array as component 0; the remaining components are zero."""
    if nc < 1:
        raise ValueError(f"nc must be >= 1, got {nc}")
    t = np.asarray(t)
    if dtype is not None:
        t = t.astype(Precision.of(dtype).dtype)
    elif t.dtype.kind != "f":
        t = t.astype(np.float64)
    data = np.zeros(t.shape + (nc,), dtype=t.dtype)
    data[..., 0] = t
    return MCTensor(data)


def zeros(shape, nc: int, dtype=np.float32) -> MCTensor:
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    return MCTensor(np.zeros(shape + (nc,), dtype=Precision.of(dtype).dtype))


def ones(shape, nc: int, dtype=np.float32) -> MCTensor:
    out = zeros(shape, nc, dtype)
    out.data[..., 0] = 1
    return out


def constant(value, nc: int, dtype) -> MCTensor:
    """0-d expansion of an exact rational (or anything ``Fraction`` accepts)."""
    return _wrap(_const_components(Fraction(value), nc, np.dtype(Precision.of(dtype).dtype).str))


@lru_cache(maxsize=None)
def _const_components(value: Fraction, nc: int, dtype_str: str) -> tuple:
    dt = np.dtype(dtype_str)
    comps = []
    r = value
    for _ in range(nc + 1):
        c = dt.type(float(r))
        comps.append(c)
        r -= Fraction(float(c))
    out = tuple(np.asarray(c) for c in _renorm([np.asarray(c) for c in comps], nc))
    for c in out:
        c.setflags(write=False)
    return out


def approx(x: MCTensor) -> np.ndarray:
    """Evaluated sum, accumulated from the smallest component up."""
    data = x.data if isinstance(x, MCTensor) else np.asarray(x)
    acc = data[..., -1].copy()
    for i in range(data.shape[-1] - 2, -1, -1):
        acc = acc + data[..., i]
    return acc


# ------------------------------------------------------------ raw kernels
#
# Kernels take and return lists of component arrays (component-major, each
# contiguous); strided access along the trailing storage axis is several
# times slower.  ``_comps``/``_join`` convert at the public boundary.

def _comps(data) -> list:
    data = np.asarray(data)
    return list(np.ascontiguousarray(np.moveaxis(data, -1, 0)))


def _join(comps) -> np.ndarray:
    return np.stack(np.broadcast_arrays(*comps), axis=-1)


def _sort_by_magnitude(h: list) -> list:
    """Stable odd-even transposition sort, largest magnitude first."""
    h = list(h)
    n = len(h)
    if n < 2:
        return h
    mags = [np.abs(c) for c in h]
    for rnd in range(n):
        for i in range(rnd % 2, n - 1, 2):
            swap = mags[i] < mags[i + 1]
            if not swap.any():
                continue
            a, b = h[i], h[i + 1]
            h[i], h[i + 1] = np.where(swap, b, a), np.where(swap, a, b)
            ma, mb = mags[i], mags[i + 1]
            mags[i], mags[i + 1] = np.maximum(ma, mb), np.minimum(ma, mb)
    return h


def _vec_sum(h: list) -> list:
    """Bottom-up TwoSum chain; entry 0 collects the rounded total."""
    n = len(h)
    e = [None] * n
    s = h[n - 1]
    for i in range(n - 2, -1, -1):
        s, e[i + 1] = two_sum(h[i], s)
    e[0] = s
    return e


def _simple_renorm(h: list, r_nc: int) -> list:
    """Stable compaction of nonzero components, truncated or padded to ``r_nc``."""
    h = np.broadcast_arrays(*h)
    zero = np.zeros_like(h[0])
    out = [zero] * r_nc
    count = np.zeros(h[0].shape, dtype=np.int8)
    for i, c in enumerate(h):
        nz = c != 0
        if i == 0:
            out[0] = np.where(nz, c, zero)
        else:
            for k in range(min(i, r_nc - 1) + 1):
                out[k] = np.where(nz & (count == k), c, out[k])
        count += nz
    return out


def _branch_pass(e: list) -> list:
    # Each step either emits r (nonzero error left behind) or carries it on.
    # Emitted values keep their order, so compacting the nonzero emissions
    # plus the final carry reproduces the branching formulation.
    emitted = []
    eps = e[0]
    for i in range(1, len(e)):
        r, err = two_sum(eps, e[i])
        nz = err != 0
        emitted.append(np.where(nz, r, 0).astype(r.dtype, copy=False))
        eps = np.where(nz, err, r)
    emitted.append(eps)
    return emitted


def _renorm(h: list, r_nc: int, passes: int = 1) -> list:
    """Priest-style renormalization of a raw expansion into ``r_nc`` components.

    Sort by magnitude, run a TwoSum chain from the bottom, then a top-down
    pass that emits a component whenever a nonzero error is left behind.
    One top-down pass suffices for the structured inputs produced by the
    arithmetic kernels; arbitrary overlapping input needs a second one.
    """
    n = len(h)
    e = _vec_sum(_sort_by_magnitude(h)) if n > 1 else list(h)
    for _ in range(passes - 1):
        e = _simple_renorm(_branch_pass(e), n)
    return _simple_renorm(_branch_pass(e), r_nc)


def _grow(x: list, v, literal: bool = False) -> list:
    nc = len(x)
    q = v
    h = [None] * (nc + 1)
    for k in range(nc, 0, -1):
        q, h[k] = two_sum(x[k - 1], q)
    h[0] = q
    if literal:
        return _simple_renorm(h, nc)
    # h[nc] is the rounding error of x[nc-1] + v, which is ulp(v)-sized when v
    # is not small; a full renormalization folds it back in instead of dropping it
    return _renorm(h, nc)


def _add(a: list, b: list, r_nc: int) -> list:
    return _renorm(list(a) + list(b), r_nc)


def _neg(a: list) -> list:
    return [-c for c in a]


def _scale(x: list, v, expanded: bool) -> list:
    nc = len(x)
    if nc == 1 and not expanded:
        return [fl_mul(x[0], v)]
    r_nc = nc + 1 if expanded else nc
    if nc >= 3:
        # a rounded carry would cap accuracy near 2**(-3p); keep every exact term
        h = []
        for c in x:
            h += exact_product(c, v)
        return _renorm(h, r_nc, passes=2)
    p, carry = exact_product(x[0], v)
    h = [p]
    for i in range(1, nc):
        p, e = exact_product(x[i], v)
        s, e2 = two_sum(p, carry)
        h.append(s)
        carry = fl_add(e, e2)
    h.append(carry)
    return _renorm(h, r_nc)


def _div(x: list, y: list) -> list:
    nc = len(x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if nc == 1:
            return [x[0] / y[0]]
        y0 = y[0]
        r = x
        q = []
        for i in range(nc + 1):
            qi = fl_div(r[0], y0)
            q.append(qi)
            if i < nc:
                r = _add(r, _neg(_scale(y, qi, expanded=True)), nc)
        return _renorm(q, nc)


def _approx(x: list):
    acc = x[-1]
    for c in x[-2::-1]:
        acc = acc + c
    return acc


def _mul(x: list, y: list) -> list:
    nc = len(x)
    if nc == 1:
        return [x[0] * y[0]]
    y_zero = _approx(y) == 0
    one = np.ones_like(y[0])
    y_safe = [np.where(y_zero, one if i == 0 else 0, c) for i, c in enumerate(y)]
    recip = _div([one] + [np.zeros_like(one)] * (nc - 1), y_safe)
    out = _div(x, recip)
    return [np.where(y_zero, 0, c).astype(c.dtype, copy=False) for c in out]


def _mul_slow(x: list, y: list) -> list:
    nc = len(x)
    if nc == 1:
        # also sidesteps a residual that underflowed into garbage
        return [x[0] * y[0]]
    terms = []
    for i in range(nc):
        for j in range(nc - i):
            p, e = exact_product(x[i], y[j])
            terms += [p, e]
        if i > 0:
            terms.append(x[i] * y[nc - i])
    return _renorm(terms, nc, passes=2 if nc > 2 else 1)


def _square(x: list) -> list:
    nc = len(x)
    if nc == 1:
        return [x[0] * x[0]]
    terms = []
    for i in range(nc):
        for j in range(i, nc - i):
            a = x[i] if i == j else fl_add(x[i], x[i])
            p, e = exact_product(a, x[j])
            terms += [p, e]
    for i in range(nc):
        j = nc - i
        if i < j < nc:
            terms.append(fl_mul(fl_add(x[i], x[i]), x[j]))
        elif i == j:
            terms.append(fl_mul(x[i], x[i]))
    return _renorm(terms, nc, passes=2 if nc > 2 else 1)


# ---------------------------------------------------------------- public ops

def _data(x) -> np.ndarray:
    return x.data if isinstance(x, MCTensor) else np.asarray(x)


def _pair(x: MCTensor, y: MCTensor):
    a, b = x.data, y.data
    if a.dtype != b.dtype:
        raise TypeError(f"precision mismatch: {a.dtype} vs {b.dtype}")
    nc = max(a.shape[-1], b.shape[-1])
    return _comps(_pad(a, nc)), _comps(_pad(b, nc))


def _pad(a, nc: int):
    if a.shape[-1] == nc:
        return a
    pad = np.zeros(a.shape[:-1] + (nc - a.shape[-1],), dtype=a.dtype)
    return np.concatenate([a, pad], axis=-1)


def _standard(v, dtype):
    v = np.asarray(v)
    if v.dtype != dtype:
        v = v.astype(dtype)
    return v


def _wrap(comps) -> MCTensor:
    return MCTensor(_join(comps))


def renormalize(h, r_nc: int | None = None) -> MCTensor:
    """Renormalize a raw ``(..., n)`` component array (or MCTensor) to ``r_nc`` components."""
    h = _data(h)
    return _wrap(_renorm(_comps(h), h.shape[-1] if r_nc is None else r_nc, passes=2))


def simple_renorm(h, r_nc: int | None = None) -> MCTensor:
    """Move zero components to the back, then truncate or zero-pad to ``r_nc``."""
    h = _data(h)
    return _wrap(_simple_renorm(_comps(h), h.shape[-1] if r_nc is None else r_nc))


def grow_expn(x: MCTensor, v, literal: bool = False) -> MCTensor:
    """Add a standard array to an expansion (Grow-ExpN).

    The TwoSum chain runs from the smallest component up.  By default the
    nc+1 resulting terms are renormalized; ``literal=True`` instead compacts
    zeros and truncates, which can drop a term as large as ``ulp(v)/2``.
    """
    return _wrap(_grow(_comps(x.data), _standard(v, x.dtype), literal))


def scaling_n(x: MCTensor, v, expanded: bool = False) -> MCTensor:
    """Multiply an expansion by a standard array; ``expanded`` keeps nc+1 components."""
    return _wrap(_scale(_comps(x.data), _standard(v, x.dtype), expanded))


def negate(x: MCTensor) -> MCTensor:
    return MCTensor(-x.data)


def add_mcn(x: MCTensor, y: MCTensor) -> MCTensor:
    a, b = _pair(x, y)
    return _wrap(_add(a, b, len(a)))


def sub_mcn(x: MCTensor, y: MCTensor) -> MCTensor:
    a, b = _pair(x, y)
    return _wrap(_add(a, _neg(b), len(a)))


def div_mcn(x: MCTensor, y: MCTensor) -> MCTensor:
    """Long division: one quotient digit per component plus a guard digit."""
    a, b = _pair(x, y)
    return _wrap(_div(a, b))


def div_n(v, y: MCTensor) -> MCTensor:
    """Standard array divided by an expansion."""
    return div_mcn(from_float(_standard(v, y.dtype), y.nc), y)


def mul_mcn(x: MCTensor, y: MCTensor) -> MCTensor:
    """Product through two divisions, ``x / (1 / y)``.

    Elements where ``y`` evaluates to zero take a fast path returning zero,
    since the reciprocal route is undefined there.  A reciprocal outside the
    format's range (tiny ``y`` in binary16) propagates Inf/NaN.
    """
    a, b = _pair(x, y)
    return _wrap(_mul(a, b))


def mul_mcn_slow(x: MCTensor, y: MCTensor) -> MCTensor:
    """Product from exact partial products ``x_i * y_j`` with ``i + j < nc``."""
    a, b = _pair(x, y)
    return _wrap(_mul_slow(a, b))


def square_mcn(x: MCTensor) -> MCTensor:
    return _wrap(_square(_comps(x.data)))


# exp ----------------------------------------------------------------------

_LN2 = Fraction(
    "0.693147180559945309417232121458176568075500134360255254120680009493393621969694715605863326996418687542001481021"
)


@lru_cache(maxsize=None)
def _taylor_terms(p: int, nc: int) -> int:
    # |r| <= ln2/2 after reduction; stop once r^n/n! drops below the last component
    target = 2.0 ** -(nc * p + 4)
    term, n = 1.0, 0
    while term > target:
        n += 1
        term *= 0.35 / n
    return n


@lru_cache(maxsize=None)
def _factorial(n: int) -> int:
    return 1 if n <= 1 else n * _factorial(n - 1)


def _const(value: Fraction, nc: int, dt, shape) -> list:
    comps = _const_components(value, nc, np.dtype(dt).str)
    return [np.broadcast_to(c, shape) for c in comps]


def exp_mcn(x: MCTensor) -> MCTensor:
    """Exponential via ``exp(x) = 2**k * exp(r)``, ``r = x - k ln2``, and a Taylor polynomial.

    At nc == 1 this is the working-precision ``np.exp``.
    """
    nc = x.nc
    dt = x.dtype
    if nc == 1:
        with np.errstate(over="ignore"):
            return MCTensor(np.exp(x.data))
    xs = _comps(x.data)
    shape = x.shape
    with np.errstate(over="ignore", invalid="ignore"):
        k = np.rint(_approx(xs).astype(np.float64) / float(_LN2))
    finite = np.isfinite(k) & (np.abs(k) < 2 ** 20)
    k = np.where(finite, k, 0.0)
    kln2 = _scale(_const(_LN2, nc + 1, dt, shape), k.astype(dt), expanded=True)
    r = _add(xs, _neg(kln2), nc)
    n_terms = _taylor_terms(x.precision.p, nc)
    poly = _const(Fraction(1, _factorial(n_terms)), nc, dt, shape)
    for n in range(n_terms - 1, -1, -1):
        poly = _add(_mul_slow(poly, r), _const(Fraction(1, _factorial(n)), nc, dt, shape), nc)
    ki = k.astype(np.int32)
    with np.errstate(over="ignore", under="ignore"):
        out = [np.ldexp(c, ki).astype(dt, copy=False) for c in poly]
        plain = np.exp(_approx(xs))
    # huge arguments (and non-finite ones) follow the plain exponential
    fallback = ~finite | np.isinf(plain)
    if fallback.any():
        out = [np.where(fallback, plain if i == 0 else 0, c).astype(dt, copy=False)
               for i, c in enumerate(out)]
    return _wrap(out)
