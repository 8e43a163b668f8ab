"""Two nugget regions.

Measurement noise is larger in the west than in the east. Empirical
variograms show it as a higher intercept; the model with one nugget per
region recovers the ratio of the noise standard deviations.
"""
# %%
import numpy as np

from spdegrf import (Dataset, ModelSpec, NonStatParams, build_basis_2d, build_grid, fit, holdout_split,
                     regions_by_longitude, score_holdout, simulate_dataset, variogram)

g = build_grid([0, 40, 0, 20], 40, 20)
spec = ModelSpec.from_log_tau(g, build_basis_2d(3, 2, g.extents), (4, 4, 4, 4))
sd_west, sd_east = 0.16, 0.083
truth = NonStatParams.constant(-1.75, -0.272, 0.477, -0.313, [-2 * np.log(sd_west), -2 * np.log(sd_east)])
west_east = lambda loc: regions_by_longitude(loc[:, 0], 20.0)  # noqa: E731
data = simulate_dataset(spec.as_stationary(), truth, n_locations=1500, T=5, seed=0, region=west_east)

# %%
for side in ("west", "east"):
    v = variogram(data, bin_width=0.5, max_dist=6.0, region_filter=(20.0, side))
    print(side, "semivariance at the first bins", np.round(v.semivariance[:3], 4))

# %%
train, test = holdout_split(data, 0.2, seed=0)
two = fit(spec, train, std_errors=False)
ratio = np.exp(0.5 * (two.params.log_tau_noise[1] - two.params.log_tau_noise[0]))
print(f"estimated sd ratio west/east {ratio:.3f} (truth {sd_west / sd_east:.3f})")

# the same data with a single nugget
single = [Dataset(d.locations, d.y, None, d.replicate, None, d.n_replicates, 1) for d in (train, test)]
one = fit(spec, single[0], std_errors=False)
print("RMSE with one nugget ", round(score_holdout(one, spec, *single).rmse, 5))
print("RMSE with two nuggets", round(score_holdout(two, spec, train, test).rmse, 5))
