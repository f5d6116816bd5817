# %% [markdown]
# # Embedding a tree in hyperbolic space
#
# Points live in the upper half-space; distances grow logarithmically as
# points approach the boundary, which suits trees.  We embed a small
# 3-ary tree and score the reconstruction with mean average precision.

# %%
import math

import numpy as np

from mcfloat import experiments as ex
from mcfloat import hyperbolic as hb

# %% [markdown]
# Distances along a vertical line are log ratios of heights.

# %%
print(hb.halfspace_distance(np.array([0.0, 1.0]), np.array([0.0, math.e]), nc=2))

# %% [markdown]
# ## A 40-node tree
#
# Positives are ancestor/descendant pairs in both directions; each anchor
# is contrasted with sampled non-neighbors.

# %%
edges = hb.balanced_tree(40, 3)
closure = hb.transitive_closure(40, edges)
ds = hb.EdgeDataset([f"n{i}" for i in range(40)], np.concatenate([closure, closure[:, ::-1]]),
                    negatives=10)
print(ds.n_nodes, "nodes,", len(ds.edges), "positive pairs")

# %%
for prec, nc in [("b64", 1), ("b16", 1), ("b16", 2)]:
    r = ex.run_embed(ds, prec, nc, seed=0, epochs=40, batch_size=50)
    print(f"{prec} nc={nc}: MAP {r['map']:.3f}  mean rank {r['mean_rank']:.2f}  "
          f"final loss {r['losses'][-1]:.3f}  NaN-free {not r['nan_loss']}")

# %% [markdown]
# The bundled 200-node tree is what `mcfloat embed` uses by default.
