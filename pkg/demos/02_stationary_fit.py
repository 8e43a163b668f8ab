"""Simulate replicated station data and fit a stationary model.

Fifteen replicates on a 60 x 40 grid over a continental-scale longitude /
latitude box, then a penalized ML fit with standard errors.
"""
# %%
import numpy as np

from spdegrf import ModelSpec, NonStatParams, build_grid, fit, simulate_dataset, verify_stationary_summary

g = build_grid([-130.15, -60.85, 21.65, 51.35], 60, 40)
spec = ModelSpec(g, stationary=True)
truth = NonStatParams.constant(-1.75, -0.272, 0.477, -0.313, 4.266)

data = simulate_dataset(spec, truth, n_locations=800, T=15, seed=1)
print(data.N, "observations in", data.n_replicates, "replicates")

# %%
res = fit(spec, data)
print("converged:", res.converged, "after", res.n_iter, "iterations,", res.n_eval, "evaluations")
names = ["log kappa2", "log gamma", "v_x", "v_y", "log tau"]
for name, est, se, tv in zip(names, res.theta, res.std_errors, truth.to_vector()):
    print(f"{name:>10}: {est:8.3f} +- {se:.3f}   (truth {tv:.3f})")

# %%
# the same summary as a covariance: H / kappa^2, marginal variance and nugget precision
s = verify_stationary_summary(res.params)
print(np.round(s.H_over_kappa2, 2), round(s.sigma2, 3), round(s.tau_noise, 1))
