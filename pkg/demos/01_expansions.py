# %% [markdown]
# # Multi-component floats in a few cells
#
# An expansion stores a number as an unevaluated sum of ordinary floats,
# largest first.  Each extra component roughly adds another significand's
# worth of precision.  This script walks through the building blocks.

# %%
import numpy as np
from fractions import Fraction

from mcfloat import eft
from mcfloat.mct import approx, from_float, mul_mcn, add_mcn
from mcfloat.oracle import value_of, rel_errors, sample_magnitude_exact, to_expansion
from mcfloat.mct import MCTensor

# %% [markdown]
# ## Error-free transformations
#
# `two_sum` returns the rounded sum together with the exact rounding error.
# In binary32, 1 + 2^-30 rounds to 1 and the lost part shows up in `e`.

# %%
a, b = np.float32(1.0), np.float32(2.0 ** -30)
s, e = eft.two_sum(a, b)
print("s =", s, " e =", e, " exact:", Fraction(float(s)) + Fraction(float(e)) == 1 + Fraction(1, 2 ** 30))

p, err = eft.exact_product(np.float32(1 + 2.0 ** -23), np.float32(1 + 2.0 ** -23))
print("product", p, "residual", err)

# %% [markdown]
# ## Expansions
#
# `from_float` wraps ordinary arrays; the extra components start at zero.
# Adding a tiny value to a 2-component binary16 number keeps it in the
# second slot instead of rounding it away.

# %%
one = from_float(np.array([1.0], dtype=np.float16), 2)
tiny = from_float(np.array([2.0 ** -20], dtype=np.float16), 2)
z = add_mcn(one, tiny)
print(z.data, "value:", value_of(z)[0])

# %% [markdown]
# ## Product accuracy versus component count
#
# Sample high-precision inputs of magnitude about 10^3, store them with
# nc components in binary32, multiply, and grade against exact rationals.

# %%
rng = np.random.default_rng(0)
xs = sample_magnitude_exact(3, rng, 300)
ys = sample_magnitude_exact(3, rng, 300)
truth = np.array([x * y for x, y in zip(xs, ys)], dtype=object)
for nc in (1, 2, 3):
    x = MCTensor(to_expansion(np.array(xs, dtype=object), nc, np.float32))
    y = MCTensor(to_expansion(np.array(ys, dtype=object), nc, np.float32))
    err = np.median(rel_errors(value_of(mul_mcn(x, y)), truth))
    print(f"nc={nc}: median relative error {err:.2e}")

# %% [markdown]
# `approx` collapses an expansion back to one float when a plain array is
# needed, for example to feed an activation function.

# %%
print(approx(z))
