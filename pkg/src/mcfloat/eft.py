"""Error-free transformations on working-precision floats.

Every function here is elementwise over numpy arrays and returns results in
the dtype of its inputs.  Binary16 arithmetic is carried out with numpy's
native ``float16`` ufuncs, which evaluate in binary32 and round once; since
24 >= 2*11 + 2 that single rounding is the correctly rounded binary16 result.
"""

from __future__ import annotations

import enum
import math
from contextlib import contextmanager
from contextvars import ContextVar

import numpy as np

try:  # compiled C99 fma(); the package's public wrapper is broken on numpy>=2
    import _pyfma
except ImportError:  # pragma: no cover - depends on the host
    _pyfma = None


class Precision(enum.Enum):
    B16 = "b16"
    B32 = "b32"
    B64 = "b64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(_DTYPES[self])

    @property
    def p(self) -> int:
        """Significand bits, hidden bit included."""
        return np.finfo(self.dtype).nmant + 1

    @property
    def min_pos(self) -> float:
        """Smallest positive subnormal."""
        return float(np.finfo(self.dtype).smallest_subnormal)

    @property
    def unit_roundoff(self) -> float:
        return 2.0 ** -self.p

    @property
    def splitter(self) -> float:
        return 2.0 ** math.ceil(self.p / 2) + 1.0

    @classmethod
    def of(cls, tag) -> "Precision":
        """Accept a Precision, a tag like ``"b32"``, or a float dtype."""
        if isinstance(tag, Precision):
            return tag
        if isinstance(tag, str) and tag.lower() in _TAGS:
            return _TAGS[tag.lower()]
        try:
            dt = np.dtype(tag)
        except TypeError:
            raise ValueError(f"unknown precision {tag!r}") from None
        for prec, d in _DTYPES.items():
            if np.dtype(d) == dt:
                return prec
        raise ValueError(f"unsupported dtype {dt}")


_DTYPES = {Precision.B16: np.float16, Precision.B32: np.float32, Precision.B64: np.float64}
_TAGS = {p.value: p for p in Precision}
_TAGS.update({"float16": Precision.B16, "float32": Precision.B32, "float64": Precision.B64,
              "half": Precision.B16, "single": Precision.B32, "double": Precision.B64})

# binary16/32 products are exact in binary64, so their fused path is exact
# emulation rather than a hardware instruction.
_fma_flag: dict[Precision, bool] = {
    Precision.B16: True,
    Precision.B32: True,
    Precision.B64: False,
}


def fma_available(prec) -> bool:
    prec = Precision.of(prec)
    return prec is not Precision.B64 or _pyfma is not None


def fma_enabled(prec) -> bool:
    return _fma_flag[Precision.of(prec)]


def set_fma(enabled: bool, prec=None) -> None:
    """Select the fused product-error path for one precision or for all."""
    targets = list(Precision) if prec is None else [Precision.of(prec)]
    for p in targets:
        if enabled and not fma_available(p):
            raise RuntimeError(f"no fused multiply-add available for {p.value}")
        _fma_flag[p] = bool(enabled)


def fma_flags() -> dict[str, bool]:
    return {p.value: v for p, v in _fma_flag.items()}


# Inside ``binary16_in_binary64`` float64 arrays stand for binary16 values.
# Sums and products of binary16 numbers are exact in binary64, so rounding
# the wide result once reproduces native binary16 arithmetic bit for bit,
# while the surrounding compares and selects run on fast float64 ufuncs.
_b16_wide: ContextVar[bool] = ContextVar("mcfloat_b16_wide", default=False)


@contextmanager
def binary16_in_binary64():
    """Let float64 arrays carry binary16 values through :func:`two_sum`,
    :func:`exact_product` and the ``fl_*`` helpers.

    Only these primitives round back to binary16; callers must not do
    any other arithmetic on the wide arrays.  The product path is the fused
    one, so enter this only while the binary16 FMA flag is set.
    """
    token = _b16_wide.set(True)
    try:
        yield
    finally:
        _b16_wide.reset(token)


def _wide16(a) -> bool:
    return a.dtype == np.float64 and _b16_wide.get()


def _r16(w):
    with np.errstate(over="ignore"):
        return w.astype(np.float16).astype(np.float64)


def _coerce(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    dt = np.result_type(a, b)
    if dt.kind != "f":
        dt = np.dtype(np.float64)
    return a.astype(dt, copy=False), b.astype(dt, copy=False)


def two_sum(a, b):
    """Knuth's branch-free TwoSum: ``s = fl(a+b)`` and ``s + e == a + b``."""
    a, b = _coerce(a, b)
    if a.dtype == np.float16:
        # binary16 sums are exact in binary64, so one rounding gives s and the
        # difference is e; same bits as the six-operation form, ~3x faster
        with np.errstate(invalid="ignore", over="ignore"):
            w = a.astype(np.float64) + b
            s = w.astype(np.float16)
            return s, (w - s).astype(np.float16)
    if _wide16(a):
        with np.errstate(invalid="ignore", over="ignore"):
            w = a + b
            s = _r16(w)
            return s, w - s
    with np.errstate(invalid="ignore", over="ignore"):
        s = a + b
        bb = s - a
        e = (a - (s - bb)) + (b - bb)
    return s, e


def fast_two_sum(a, b):
    """Dekker's FastTwoSum; exact only when ``|a| >= |b|`` (or a == 0)."""
    a, b = _coerce(a, b)
    with np.errstate(invalid="ignore", over="ignore"):
        s = a + b
        e = b - (s - a)
    return s, e


def split(a):
    """Veltkamp splitting into ``hi + lo == a`` with half-width significands."""
    a = np.asarray(a)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    c = a.dtype.type(Precision.of(a.dtype).splitter)
    with np.errstate(invalid="ignore", over="ignore"):
        t = c * a
        hi = t - (t - a)
        lo = a - hi
    return hi, lo


def two_prod(a, b):
    """Dekker's TwoProd built on :func:`split`."""
    a, b = _coerce(a, b)
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        p = a * b
        ah, al = split(a)
        bh, bl = split(b)
        e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def two_prod_fma(a, b):
    """TwoProd through a fused multiply-add: ``e = fma(a, b, -p)``."""
    a, b = _coerce(a, b)
    prec = Precision.of(a.dtype)
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        p = a * b
        if prec is Precision.B64:
            if _pyfma is None:
                raise RuntimeError("binary64 fma requires the optional 'pyfma' package")
            a_, b_, p_ = np.broadcast_arrays(a, b, -p)
            e = np.asarray(_pyfma.fma(np.ascontiguousarray(a_), np.ascontiguousarray(b_),
                                      np.ascontiguousarray(p_)))
        else:
            # a*b is exact in binary64 and a*b - p is representable there too,
            # so the one rounding below matches a hardware fma bit for bit.
            wide = a.astype(np.float64) * b.astype(np.float64) - p.astype(np.float64)
            e = wide.astype(a.dtype)
    return p, e


def fl_add(a, b):
    """Plain rounded sum ``fl(a + b)``."""
    a, b = _coerce(a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        return _r16(a + b) if _wide16(a) else a + b


def fl_mul(a, b):
    """Plain rounded product ``fl(a * b)``."""
    a, b = _coerce(a, b)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        return _r16(a * b) if _wide16(a) else a * b


def fl_div(a, b):
    """Plain rounded quotient; in the wide mode the binary64 quotient is rounded
    again, which is harmless because 53 >= 2*11 + 2."""
    a, b = _coerce(a, b)
    with np.errstate(over="ignore", invalid="ignore", under="ignore", divide="ignore"):
        return _r16(a / b) if _wide16(a) else a / b


def exact_product(a, b):
    """Product with its rounding error, via the path selected by :func:`set_fma`."""
    a, b = _coerce(a, b)
    if _wide16(a):
        with np.errstate(invalid="ignore", over="ignore"):
            w = a * b
            p = _r16(w)
            return p, _r16(w - p)
    if _fma_flag[Precision.of(a.dtype)]:
        return two_prod_fma(a, b)
    return two_prod(a, b)
