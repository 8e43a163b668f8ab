import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from conftest import dense_conditional, random_instance
from spdegrf import (
    Dataset,
    ModelSpec,
    NonStatParams,
    build_basis_2d,
    build_grid,
    build_latent_system,
    cov_summary,
    crps_gaussian,
    cv_penalty_search,
    detrend,
    holdout_split,
    log_score_holdout,
    mean_crps,
    predict_grid,
    rmse,
    score_holdout,
    simulate_dataset,
    variogram,
)
from spdegrf.inference import kfold_indices, predict_points


def test_crps_at_mean():
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx((np.sqrt(2) - 1) / np.sqrt(np.pi), abs=1e-12)
    assert crps_gaussian(3.0, 2.5, 3.0) == pytest.approx(2.5 * 0.23370, abs=2.5e-5)


def test_crps_point_mass_and_validation():
    assert crps_gaussian(1.0, 0.0, 4.0) == 3.0
    with pytest.raises(ValueError):
        crps_gaussian(0.0, -1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.05, 5), st.floats(-10, 10))
def test_crps_translation_scale(mu, s, y):
    a = crps_gaussian(mu, s, y)
    assert a >= 0
    assert crps_gaussian(0.0, 1.0, (y - mu) / s) * s == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_crps_quadrature():
    mu, s, y = 0.4, 1.3, -0.7
    f = lambda x: (norm.cdf(x, mu, s) - (x >= y)) ** 2  # noqa: E731
    ref = integrate.quad(f, -np.inf, y)[0] + integrate.quad(f, y, np.inf)[0]
    assert crps_gaussian(mu, s, y) == pytest.approx(ref, abs=1e-8)
    assert mean_crps([0, 0], [1, 1], [0, 0]) == pytest.approx(crps_gaussian(0, 1, 0))


def test_rmse():
    assert rmse([1, 2], [1, 4]) == pytest.approx(np.sqrt(2))
    assert rmse([], []) == 0.0
    with pytest.raises(ValueError):
        rmse([1], [1, 2])


def test_variogram_two_points():
    ds = Dataset([[0.0, 0.0], [1.0, 0.0]], [0.0, 2.0])
    v = variogram(ds, bin_width=0.5, max_dist=2.0)
    assert v.count.sum() == 1 and v.count[2] == 1
    assert v.semivariance[2] == pytest.approx(2.0)
    assert np.isnan(v.semivariance[0])


def test_variogram_ignores_cross_replicate_pairs_and_filters():
    ds = Dataset([[0, 0], [1, 0], [5, 0], [6, 0]], [0.0, 10.0, 1.0, 2.0], replicate=[0, 1, 0, 0])
    v = variogram(ds, bin_width=1.0, max_dist=10.0)
    assert v.count.sum() == 3
    w = variogram(ds, bin_width=1.0, max_dist=10.0, region_filter=(3.0, "east"))
    assert w.count.sum() == 1 and w.semivariance[1] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        variogram(ds, region_filter=(3.0, "north"))


def test_holdout_split_and_folds():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(size=(100, 2)), rng.normal(size=100), replicate=np.repeat([0, 1], 50))
    tr, te = holdout_split(ds, 0.2, seed=1)
    assert tr.N == 80 and te.N == 20
    assert np.sum(te.replicate == 0) == 10
    a, b = holdout_split(ds, 0.2, seed=1)
    assert np.array_equal(a.y, tr.y)
    with pytest.raises(ValueError):
        holdout_split(ds, 0.0)
    lab = kfold_indices(ds, 3, seed=2)
    for t in (0, 1):
        c = np.bincount(lab[ds.replicate == t])
        assert c.max() - c.min() <= 1


def _split(rng, T=2, R=2, p=0):
    spec, params, ds = random_instance(rng, T=T, R=R, p=p)
    n = ds.N
    g = spec.grid
    k = 12
    loc = rng.uniform([g.x_min, g.y_min], [g.x_max, g.y_max], size=(k, 2))
    test = Dataset(loc, rng.normal(size=k), rng.normal(size=(k, p)) if p else None,
                   rng.integers(0, T, k), rng.integers(0, R, k), T, R)
    return spec, params, ds, test, n


@pytest.mark.parametrize("p", [0, 2])
def test_prediction_and_log_score_dense(p):
    rng = np.random.default_rng(11 + p)
    spec, params, train, test, _ = _split(rng, T=1 if p else 2, R=2, p=p)
    mean, cov = dense_conditional(spec, params, train, test)
    mu, sd = predict_points(params, spec, train, test)
    assert np.allclose(mu, mean, rtol=1e-8, atol=1e-9)
    assert np.allclose(sd, np.sqrt(np.diag(cov)), rtol=1e-8)
    r = test.y - mean
    ref = 0.5 * np.linalg.slogdet(2 * np.pi * cov)[1] + 0.5 * r @ np.linalg.solve(cov, r)
    assert log_score_holdout(params, spec, train, test) == pytest.approx(ref, rel=1e-8)
    rep = score_holdout(params, spec, train, test)
    assert rep.rmse == pytest.approx(rmse(mean, test.y))
    assert rep.crps == pytest.approx(mean_crps(mean, np.sqrt(np.diag(cov)), test.y))


def test_log_score_rejects_shared_sites():
    rng = np.random.default_rng(5)
    spec, params, ds = random_instance(rng, T=1, R=1, p=0)
    with pytest.raises(ValueError):
        log_score_holdout(params, spec, ds, ds.subset([0]))


def test_predict_grid_matches_points():
    rng = np.random.default_rng(9)
    spec, params, ds = random_instance(rng, T=2, R=1, p=0)
    pg = predict_grid(params, spec, ds)
    g = spec.grid
    probe = Dataset(g.centers(), np.zeros(g.n_cells), replicate=np.ones(g.n_cells, int), n_replicates=2)
    mu, sd = predict_points(params, spec, ds, probe)
    assert pg.mean.shape == (2, g.n_cells)
    assert np.allclose(pg.mean[1], mu) and np.allclose(pg.sd_obs[1], sd)
    assert np.all(pg.sd_latent < pg.sd_obs)


def test_predict_grid_requirements():
    rng = np.random.default_rng(4)
    spec, params, ds = random_instance(rng, T=1, R=2, p=1)
    with pytest.raises(ValueError):
        predict_grid(params, spec, ds)
    with pytest.raises(ValueError):
        predict_grid(params, spec, ds, covariate_grid=np.ones((spec.grid.n_cells, 1)))


def test_cov_summary_dense():
    g = build_grid([0, 3, 0, 2], 6, 4)
    spec = ModelSpec(g, stationary=True)
    params = NonStatParams.constant(0.2, -0.1, 0.3, 0.2, 0.0)
    cs = cov_summary(spec, params, reference_cells=[5, 10])
    S = np.linalg.inv(spec.precision(params)[0].toarray())
    assert np.allclose(cs.marginal_sd, np.sqrt(np.diag(S)))
    R = S / np.sqrt(np.outer(np.diag(S), np.diag(S)))
    assert np.allclose(cs.correlation, R[[5, 10]])


def test_simulation_covariance_monte_carlo():
    g = build_grid([0, 2, 0, 2], 4, 4)
    spec = ModelSpec(g, stationary=True)
    params = NonStatParams.constant(0.0, -1.0, 0.0, 0.0, np.log(4.0))
    loc = g.centers()[[0, 5, 15]]
    ds = simulate_dataset(spec, params, locations=loc, T=20000, seed=3)
    Y = ds.y.reshape(20000, 3)
    S = np.linalg.inv(spec.precision(params)[0].toarray())[np.ix_([0, 5, 15], [0, 5, 15])] + 0.25 * np.eye(3)
    se = np.sqrt((S * S + np.outer(np.diag(S), np.diag(S))) / 20000)
    assert np.all(np.abs(np.cov(Y.T) - S) < 4.5 * se)
    assert np.all(np.abs(Y.mean(0)) < 4.5 * np.sqrt(np.diag(S) / 20000))


def test_simulation_covariates_and_regions():
    g = build_grid([0, 2, 0, 2], 4, 4)
    spec = ModelSpec(g, stationary=True)
    params = NonStatParams.constant(0.0, 0.0, 0.0, 0.0, [0.0, 1.0])
    ds = simulate_dataset(spec, params, n_locations=7, seed=0, X=np.ones((7, 1)), beta=[5.0],
                          region=lambda p: (p[:, 0] > 1).astype(int))
    assert ds.p == 1 and ds.n_regions == 2
    assert np.array_equal(ds.region, (ds.locations[:, 0] > 1).astype(int))
    with pytest.raises(ValueError):
        simulate_dataset(spec, params, n_locations=3, T=2, X=np.ones((3, 1)), beta=[1.0])
    a = simulate_dataset(spec, params, n_locations=5, T=2, seed=9)
    b = simulate_dataset(spec, params, n_locations=5, T=2, seed=9)
    assert np.array_equal(a.y, b.y)


def test_detrend_removes_common_mean():
    g = build_grid([0, 10, 0, 10], 12, 12)
    spec = ModelSpec(g, stationary=True)
    params = NonStatParams.constant(-0.5, -1.0, 0.0, 0.0, np.log(25.0))
    ds = simulate_dataset(spec, params, n_locations=120, T=4, seed=2)
    shifted = ds.with_y(ds.y + 3.0 + 0.2 * ds.locations[:, 0])
    res, mu_hat = detrend(shifted, spec)
    assert mu_hat.shape == (g.n_cells,)
    assert abs(np.mean(res.y)) < 0.2
    assert np.var(res.y) < np.var(shifted.y)
    with pytest.raises(ValueError):
        one = np.flatnonzero(ds.replicate == 0)
        detrend(Dataset(ds.locations[one], ds.y[one]), spec)


def test_cv_penalty_search_small():
    g = build_grid([0, 10, 0, 6], 10, 6)
    b = build_basis_2d(2, 2, g.extents)
    spec = ModelSpec.from_log_tau(g, b, (4, 4, 4, 4))
    params = NonStatParams.constant(-0.5, -0.5, 0.2, 0.1, np.log(20.0), n_alpha=4)
    ds = simulate_dataset(spec, params, n_locations=60, T=2, seed=0)
    cv = cv_penalty_search(spec, ds, [(2, 2, 2, 2), (6, 6, 6, 6)], folds=2, seed=0, fit_kwargs={"max_iter": 60})
    assert cv.best in cv.candidates and cv.scores.shape == (2,)
    assert np.all(np.isfinite(cv.scores))
    with pytest.raises(ValueError):
        cv_penalty_search(spec, ds, [], folds=2)
