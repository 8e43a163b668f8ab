"""Does a spatially varying range pay off in prediction?

Data are simulated with log kappa^2 rising from west to east. We fit the
stationary and the non-stationary model to the same training split and
compare held-out scores.
"""
# %%
import numpy as np

from spdegrf import (ModelSpec, NonStatParams, build_basis_2d, build_grid, fit, holdout_split, predict_grid,
                     score_holdout, simulate_dataset)

g = build_grid([0, 30, 0, 20], 30, 20)
basis = build_basis_2d(3, 2, g.extents)
spec = ModelSpec.from_log_tau(g, basis, (2, 6, 6, 6))

# coefficients are stacked with the y index fastest: three columns along x
alpha1 = np.array([-3, -3, -1.5, -1.5, 0, 0.0])
truth = NonStatParams(alpha1, np.zeros(6), np.zeros(6), np.zeros(6), [np.log(100.0)])
data = simulate_dataset(spec, truth, n_locations=300, T=8, seed=3)
train, test = holdout_split(data, 0.2, seed=3)

# %%
ns = fit(spec, train, std_errors=False)
st = ns.stationary_init  # the stationary fit used as the starting point
print("fitted log kappa2 coefficients", np.round(ns.params.alpha1, 2))

for label, f, s in (("stationary", st, spec.as_stationary()), ("non-stationary", ns, spec)):
    r = score_holdout(f, s, train, test)
    print(f"{label:>15}: CRPS {r.crps:.4f}  log score {r.log_score:8.2f}  RMSE {r.rmse:.4f}")

# %%
# kriging sd of the first replicate follows the prior variance, largest in the west where kappa is small
pg = predict_grid(ns, spec, train)
sd = pg.sd_latent[0].reshape(g.n_x, g.n_y)
print("mean latent sd by x third:", [round(float(sd[i:i + 10].mean()), 3) for i in (0, 10, 20)])
