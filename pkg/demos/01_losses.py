"""
Retinex losses on toy grids
===========================

A fused image R, two lighting maps L1/L2 and two sources I1/I2. The log
loss is zero when each source factors as R times its lighting map.
"""

import torch

from retinexfuse import losses as ls

# %%
# An exact factorization: I = R * L with L = 1 everywhere
R = torch.rand(1, 8, 8) * 0.8 + 0.1
L = torch.full_like(R, 1 - 1e-7)
one = torch.tensor(1.0)
print("log loss on exact decomposition:", ls.retinex_loss_log(R, L, L, R, R, one, one).item())

# %%
# Darken the visible image by a lighting map of 0.5 and the loss wakes up
L2 = torch.full_like(R, 0.5)
I2 = R * L2
a = torch.tensor(0.9)
print("alpha 0.9, wrong L2:", ls.retinex_loss_log(R, L, L, R, I2, a, a).item())
print("alpha 0.9, right L2:", ls.retinex_loss_log(R, L, L2, R, I2, a, a).item())
print("product form, right L2:", ls.retinex_loss_dot(R, L, L2, R, I2).item())

# %%
# The locks pull lighting toward 1, the alphas toward summing to 1, and
# the fused mean toward the mean of the two sources
print("L lock:", ls.l_lock_loss(L, L2).item())
print("alpha lock at (0.8, 0.3):", ls.alpha_lock_loss(torch.tensor(0.8), torch.tensor(0.3)).item())
print("mean lock:", ls.mean_lock_loss(R, R, I2).item())

# %%
# Weighted total with one term switched off. Disabled terms still show up in the report
terms = {t: torch.tensor(1.0) for t in ls.TERMS}
w = ls.LossWeights(enabled={"grad": False})
total, report = ls.total_loss(terms, w)
print("total:", total.item(), report.terms)
