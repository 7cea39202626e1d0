# %% [markdown]
# # A tour of the quasi-likelihood
#
# Simulate one path of the exp-sin2 model, look at the likelihood profile,
# compare the two estimators and standardise the error.

# %%
import numpy as np

import qla
from qla.estimate import bayes, qmle, standardize
from qla.qlik import Observations, gamma_info, h_n_grid, y_field, y_limit

model = qla.get_model("exp-sin2")
theta_star = 1.0
path = qla.simulate_path(model, n=500, T=1.0, theta=[theta_star], seed=2024)
obs = Observations.from_path(path)
print(f"{obs.n} observations, h = {obs.h}, final state {path.y[-1, 0]:.3f}")

# %% [markdown]
# The profile is sharply peaked once the path spends time away from the
# zeros of sin.

# %%
grid = np.linspace(-3, 3, 13)
for th, H, yn, yl in zip(grid, h_n_grid(obs, model, grid[:, None]),
                         y_field(obs, model, [theta_star], grid), y_limit(obs, model, [theta_star], grid)):
    print(f"theta={th:+.2f}  H_n={H:12.2f}  Y_n={yn:9.4f}  Y={yl:9.4f}")

# %%
q = qmle(obs, model, [0.5])
b = bayes(obs, model)
print("qmle ", q.theta_hat, "converged:", q.converged, "restarts:", q.info["restarts"])
print("bayes", b.theta_hat)

# %% [markdown]
# Gamma along the path is random; scaling by its square root gives an
# approximately standard normal error.

# %%
print("Gamma(theta*) =", gamma_info(obs, model, [theta_star])[0, 0])
err, z = standardize(q, obs, model, [theta_star])
print("sqrt(n) error:", err, " standardized:", z)
