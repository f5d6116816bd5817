"""Exact reference arithmetic for grading expansions.

Ring operations use :class:`fractions.Fraction`, so sums and products of
floats are exact.  Transcendentals are evaluated with mpmath at a working
precision well beyond the requested bit count and converted back to exact
rationals.
"""

from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np

ExactScalar = Fraction

DEFAULT_BITS = 160


def exact(x) -> Fraction:
    """Exact rational value of a finite float (any numpy float width)."""
    return Fraction(float(x))


def exact_array(a) -> np.ndarray:
    a = np.asarray(a)
    out = np.empty(a.shape, dtype=object)
    flat = out.reshape(-1)
    for i, v in enumerate(a.reshape(-1)):
        flat[i] = Fraction(float(v))
    return out


def value_of(x) -> np.ndarray:
    """Exact sum of the components of an MCTensor, as an object array of Fractions.

    Accepts an MCTensor or a raw ``(*shape, nc)`` component array.
    """
    data = np.asarray(getattr(x, "data", x))
    comps = data.reshape(-1, data.shape[-1])
    out = np.empty(comps.shape[0], dtype=object)
    for i, row in enumerate(comps):
        out[i] = sum((Fraction(float(c)) for c in row), Fraction(0))
    return out.reshape(data.shape[:-1])


def rel_error(approx, truth) -> float:
    """``|approx - truth| / |truth|``; absolute error when ``truth == 0``."""
    approx = Fraction(approx)
    truth = Fraction(truth)
    diff = abs(approx - truth)
    if truth == 0:
        return float(diff)
    return float(diff / abs(truth))


def rel_errors(approx, truth) -> np.ndarray:
    approx = np.asarray(approx, dtype=object)
    truth = np.asarray(truth, dtype=object)
    a, t = np.broadcast_arrays(approx, truth)
    return np.array([rel_error(x, y) for x, y in zip(a.reshape(-1), t.reshape(-1))],
                    dtype=np.float64).reshape(a.shape)


def sample_magnitude(m, rng: np.random.Generator, size=None, dtype=np.float32):
    """Draw ``(10 - N(0,1))**m`` and round to ``dtype``."""
    z = rng.standard_normal(size)
    return np.asarray((10.0 - z) ** m).astype(dtype)


def sample_magnitude_exact(m, rng: np.random.Generator, size: int, bits: int = 256):
    """High-precision draws of ``(10 - N(0,1))**m``, returned as Fractions.

    The normal deviate is a binary64 draw; the power is evaluated at ``bits``
    so the sample is a genuine high-precision number rather than a float.
    """
    z = rng.standard_normal(size)
    with mpmath.workprec(bits):
        return [_to_fraction((mpmath.mpf(10) - mpmath.mpf(float(v))) ** m) for v in z]


def to_expansion(values, nc: int, dtype) -> np.ndarray:
    """Greedy nearest-float decomposition of exact values into ``nc`` components."""
    vals = list(np.asarray(values, dtype=object).reshape(-1))
    out = np.zeros((len(vals), nc), dtype=dtype)
    for i, v in enumerate(vals):
        r = Fraction(v)
        for k in range(nc):
            c = _round_to(r, dtype)
            out[i, k] = c
            r -= Fraction(float(c))
    return out.reshape(np.shape(values) + (nc,))


def _round_to(r: Fraction, dtype):
    # float(Fraction) is correctly rounded to binary64; go through mpmath for
    # narrower formats to avoid double rounding.
    dt = np.dtype(dtype)
    if dt == np.float64:
        return np.float64(float(r))
    p = np.finfo(dt).nmant + 1
    emin = np.finfo(dt).minexp
    if r == 0:
        return dt.type(0.0)
    with mpmath.workprec(p):
        v = mpmath.mpf(r.numerator) / r.denominator
    # subnormal range: fall back to rounding to the fixed quantum
    quantum = Fraction(2) ** (emin - p + 1)
    if abs(r) < Fraction(2) ** emin:
        q = r / quantum
        n = round(q)  # Fraction.__round__ is round-half-even
        return dt.type(float(n * quantum))
    return dt.type(float(v))


def _to_fraction(v) -> Fraction:
    # re-wrapping an mpf would round it to the ambient (53-bit) context
    if not isinstance(v, mpmath.mpf):
        v = mpmath.mpf(v)
    if not mpmath.isfinite(v):
        raise OverflowError("non-finite value")
    # mpf stores an exact binary value (sign, mantissa, exponent, bitcount)
    sign, mant, e, _ = v._mpf_
    q = Fraction(int(mant)) * (Fraction(2) ** e)
    return -q if sign else q


def _to_mpf(x, bits: int):
    x = Fraction(x)
    with mpmath.workprec(bits):
        return mpmath.mpf(x.numerator) / x.denominator


def hp_transcendental(func: str, x, bits: int = DEFAULT_BITS) -> Fraction:
    """Evaluate ``exp``, ``log``, ``sqrt`` or ``arcosh`` at an exact point.

    The result is rounded to ``bits`` significant bits; the evaluation runs
    with 64 guard bits, so the relative error is below ``2**-(bits-2)``.
    """
    fn = {"exp": mpmath.exp, "log": mpmath.log, "sqrt": mpmath.sqrt,
          "arcosh": mpmath.acosh}.get(func)
    if fn is None:
        raise ValueError(f"unsupported function {func!r}")
    work = bits + 64
    with mpmath.workprec(work):
        y = fn(_to_mpf(x, work))
    with mpmath.workprec(bits):
        y = +y  # round to target precision
    return _to_fraction(y)


def hp_exp(x, bits: int = DEFAULT_BITS) -> Fraction:
    return hp_transcendental("exp", x, bits)


def hp_log(x, bits: int = DEFAULT_BITS) -> Fraction:
    return hp_transcendental("log", x, bits)


def hp_sqrt(x, bits: int = DEFAULT_BITS) -> Fraction:
    return hp_transcendental("sqrt", x, bits)


def hp_arcosh(x, bits: int = DEFAULT_BITS) -> Fraction:
    return hp_transcendental("arcosh", x, bits)
