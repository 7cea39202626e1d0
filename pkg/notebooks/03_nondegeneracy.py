# %% [markdown]
# # Nondegeneracy diagnostics
#
# The key index chi_0, its lower tail, the large-deviation frequency of the
# likelihood ratio field and the polynomial separation numbers.

# %%
import numpy as np

import qla
from qla.nondeg import (chi0, h2_tail_curve, pldi_tail, power_support, separation_check, sin_sin_support,
                        supporting_bound_check)
from qla.qlik import Observations

model = qla.get_model("exp-sin2")
obs = Observations.from_path(qla.simulate_path(model, 500, 1.0, [1.0], seed=3))
print(chi0(obs, model, [1.0], return_details=True))

# %% [markdown]
# The power model starts at X = 0 where sigma does not depend on theta, so
# chi_0 is often small: its lower tail is heavy.

# %%
rep = h2_tail_curve(qla.get_model("power"), [0.25], 200, 1.0, [1, 2, 5, 10, 20, 50, 100], 200, seed=0)
for r, p, lo, hi in zip(rep.r_grid, rep.tail_prob, rep.ci_low, rep.ci_high):
    print(f"P[chi0 <= 1/{r:g}] = {p:.3f}  [{lo:.3f}, {hi:.3f}]")
print("fitted exponent", rep.fitted_exponent)

# %%
pl = pldi_tail(model, [1.0], 500, 1.0, [1, 2, 5, 10, 20, 50], replicates=100, seed=0)
print(dict(zip(pl.r_grid.tolist(), pl.frequency.round(3).tolist())))

# %%
for J, alphas in ((1, [1, 2]), (2, [1, 2, 3])):
    s = separation_check(J, alphas, 1.0, 1.0, [1e3, 1e6])
    print(J, alphas, "min", np.round(s.minimum, 12), "L", np.round(s.L, 4))

# %%
print("power  ", supporting_bound_check(power_support(), [0.25])["min_slack"])
print("sin-sin", supporting_bound_check(sin_sin_support(), [0.0])["min_slack"])
