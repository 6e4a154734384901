"""
Reverse-mode gradients on a tape
================================

A tour of the small autodiff layer: build a graph, run backward, and check
the result against finite differences.
"""

# %%
import numpy as np

from slotfocus import autodiff as ad
from slotfocus.gradcheck import check_gradients, check_model

rng = np.random.default_rng(0)
a = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = ad.tensor(rng.normal(size=(4, 2)), requires_grad=True)

# %% [markdown]
# For ``sum(a @ b)`` the gradient with respect to ``a`` is ``ones @ b.T``.

# %%
ad.backward(ad.sum(ad.matmul(a, b)))
print(a.grad - np.ones((3, 2)) @ b.data.T)
a.zero_grad()
b.zero_grad()

result = check_gradients(lambda: ad.sum(ad.tanh(ad.matmul(a, b))), {"a": a, "b": b})
print("max relative error:", result.max_error)

# %% [markdown]
# The same check on the whole tagger, with dropout masks frozen so the loss
# is a deterministic function of the parameters.

# %%
for mechanism in ("focus", "attention"):
    res = check_model(mechanism, seed=7)
    print(f"{mechanism:9s} {res.max_error:.1e}  worst tensor: {res.worst()}")
