from fractions import Fraction

import numpy as np
import pytest

from mcfloat import eft

DTYPES = [np.float16, np.float32, np.float64]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _restore_fma_flags():
    saved = eft.fma_flags()
    yield
    for tag, flag in saved.items():
        eft._fma_flag[eft.Precision.of(tag)] = flag


def random_floats(rng, n, dtype, emin, emax):
    """Random finite floats with exponents drawn uniformly from [emin, emax]."""
    p = np.finfo(dtype).nmant + 1
    mant = rng.integers(2 ** (p - 1), 2 ** p, size=n).astype(np.float64)
    exps = rng.integers(emin, emax + 1, size=n)
    sign = rng.choice([-1.0, 1.0], size=n)
    return (sign * np.ldexp(mant, exps - (p - 1))).astype(dtype)


def F(x):
    return Fraction(float(x))


def is_ordered(data):
    """Components non-increasing in magnitude wherever the later one is nonzero."""
    a = np.abs(data.astype(np.float64))
    return bool(np.all((a[..., :-1] >= a[..., 1:]) | (a[..., 1:] == 0)))


def is_nonoverlapping(data):
    """``|x_{i+1}| <= ulp(|x_i|)`` for consecutive components."""
    a = np.abs(data)
    if a.shape[-1] < 2:
        return True
    ulp = np.spacing(a[..., :-1])
    return bool(np.all(a[..., 1:] <= ulp))


def zeros_trail(data):
    z = data == 0
    # once a zero appears, everything after it must be zero
    return bool(np.all(~z[..., :-1] | z[..., 1:]))


def random_mc(rng, shape, nc, dtype, m=0.0, signed=True):
    """Random renormalized expansion whose leading magnitude follows ``(10 - N(0,1))**m``."""
    from mcfloat.mct import MCTensor, renormalize

    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    p = np.finfo(dtype).nmant + 1
    lead = (10.0 - rng.standard_normal(shape)) ** m
    if signed:
        lead = lead * rng.choice([-1.0, 1.0], size=shape)
    comps = [lead]
    for _ in range(1, nc):
        comps.append(comps[-1] * 2.0 ** -p * rng.uniform(0.5, 1.0, size=shape)
                     * rng.choice([-1.0, 1.0], size=shape))
    data = np.stack(comps, axis=-1).astype(dtype)
    return renormalize(MCTensor(data), nc)


def values(x):
    from mcfloat.oracle import value_of
    return value_of(x).reshape(-1)


def median_rel_error(got, truth):
    from mcfloat.oracle import rel_errors
    return float(np.median(rel_errors(values(got), np.asarray(truth, dtype=object).reshape(-1))))
