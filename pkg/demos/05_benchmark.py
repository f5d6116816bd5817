# %% [markdown]
# # What the extra components cost
#
# Times a dot product, a matrix-vector product and a matrix product for
# plain numpy and for 1, 2 and 3 components.  Sizes are smaller than the
# `mcfloat bench` defaults so the script finishes quickly.

# %%
from mcfloat import experiments as ex

ex.BENCH_SIZES.update({"dot": ((2000,), (2000,)), "mv": ((500, 200), (200,)),
                       "matmul": ((100, 80), (80, 20))})

# %%
for op in ("dot", "mv", "matmul"):
    cells = []
    for nc in (None, 1, 2, 3):
        r = ex.bench_op(op, nc, "b32", repeats=3)
        label = "plain" if nc is None else f"nc={nc}"
        cells.append(f"{label} {r['mean_s'] * 1e3:8.3f} ms")
    print(f"{op:7s}", " | ".join(cells))
