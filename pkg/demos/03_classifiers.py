# %% [markdown]
# # Classifiers with MC weights
#
# Logistic regression and a small MLP on the bundled breast-cancer CSV.
# Weights live in 2-component binary16; activations work on the evaluated
# sums.  The same runs are available from the command line as
# `mcfloat logreg` and `mcfloat mlp`.

# %%
import json

import numpy as np

from mcfloat import autodiff as ad
from mcfloat import experiments as ex
from mcfloat import nn
from mcfloat.optim import MCSGD

X, y = ex.load_csv(ex.bundled("cancer.csv"))
print(X.shape, "positives:", int(y.sum()))

# %% [markdown]
# ## Building a model by hand
#
# `MCSequential` chains MC linear layers and ordinary activations.  The
# training loop is the familiar zero_grad / backward / step.

# %%
Xtr, ytr, Xte, yte = ex.split_standardize(X, y, seed=0)
model = nn.MCSequential(
    nn.MCLinear(30, 16, nc=2, precision="b16", rng=1), nn.ReLU(),
    nn.MCLinear(16, 1, nc=2, precision="b16", rng=2), nn.Sigmoid(),
)
print(json.dumps(model.describe(), indent=1))
opt = MCSGD(model, lr=0.01, momentum=0.9)
Xw, yw = Xtr.astype(np.float16), ytr.astype(np.float16)
with np.errstate(all="ignore"):
    for epoch in range(60):
        opt.zero_grad()
        loss = nn.bce_loss(ad.reshape(model(Xw), (-1,)), yw)
        ad.backward(loss)
        opt.step()
        if epoch % 20 == 0:
            print(epoch, float(loss.value))
    pred = model(Xte.astype(np.float16)).value.reshape(-1)
print("test accuracy", np.mean((pred > 0.5) == (yte > 0.5)))

# %% [markdown]
# ## Logistic regression: plain versus MC binary16
#
# A small learning rate makes each update tiny relative to the weights,
# which is where plain binary16 loses ground.  (A few hundred epochs here;
# the command-line default runs 3000.)

# %%
for prec, nc in [("b32", 1), ("b16", 1), ("b16", 2)]:
    r = ex.run_logreg(X, y, prec, nc, seed=0, lr=1e-4, momentum=0.9, epochs=300)
    print(f"{prec} nc={nc}: loss {r['final_loss']:.4f}  accuracy {r['test_accuracy']:.3f}")

# %% [markdown]
# Checkpoints keep every component bit for bit.

# %%
import tempfile

with tempfile.TemporaryDirectory() as d:
    nn.save_model(model, d)
    again = nn.load_model(d)
    same = all(np.array_equal(p.data, q.data) for p, q in zip(model.parameters(), again.parameters()))
    print("reloaded identical:", same)
