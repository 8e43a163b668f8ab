"""Prediction, covariance summaries, scoring, variograms, CV, de-trending
and simulation."""
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .geometry import locate_cell
from .model import Dataset, FitResult, ModelSpec, build_latent_system, fit, log_marginal_density
from .sparse import factorize, partial_inverse, sample, solve
from .spde import NonStatParams, stencil

__all__ = [
    "PredictionGrid",
    "CovSummary",
    "ScoreReport",
    "Variogram",
    "CVResult",
    "predict_grid",
    "cov_summary",
    "crps_gaussian",
    "mean_crps",
    "log_score_holdout",
    "rmse",
    "score_holdout",
    "predict_points",
    "variogram",
    "cv_penalty_search",
    "kfold_indices",
    "detrend",
    "simulate_dataset",
    "holdout_split",
]

_SQRT_PI = np.sqrt(np.pi)


def _params(obj):
    return obj.params if isinstance(obj, FitResult) else obj


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    """Per-cell predictive moments; arrays have shape ``(T, n_cells)``."""

    centers: np.ndarray
    mean: np.ndarray
    sd_latent: np.ndarray
    sd_obs: np.ndarray


@dataclass(frozen=True, eq=False)
class CovSummary:
    marginal_sd: np.ndarray
    reference_cells: np.ndarray
    correlation: np.ndarray  # (n_ref, n_cells)


@dataclass(frozen=True)
class ScoreReport:
    crps: float
    log_score: float
    rmse: float


@dataclass(frozen=True, eq=False)
class Variogram:
    """Empirical semivariogram; ``semivariance`` is NaN where ``count == 0``."""

    bin_centers: np.ndarray
    semivariance: np.ndarray
    count: np.ndarray


def predict_grid(fit_or_params, spec, dataset, covariate_grid=None, cell_region=None):
    """Kriging mean and standard deviations at every cell centre.

    Parameters
    ----------
    fit_or_params : FitResult or NonStatParams
    spec : ModelSpec
    dataset : Dataset
        Conditioning data.
    covariate_grid : ndarray, shape (n_cells, p), optional
        Required when the dataset has covariates.
    cell_region : ndarray of int, optional
        Nugget region of each cell, for ``sd_obs``; required when there is
        more than one region.

    Returns
    -------
    PredictionGrid
        Latent surface ``x(s)' beta + u(s)`` and new-observation moments for
        each replicate.
    """
    params = _params(fit_or_params)
    n, p = spec.grid.n_cells, dataset.p
    if p and covariate_grid is None:
        raise ValueError("covariate grid required for a model with covariates")
    if p:
        Xg = np.asarray(covariate_grid, dtype=float).reshape(n, p)
    if cell_region is None:
        if params.n_regions > 1:
            raise ValueError("cell regions required with several nugget regions")
        cell_region = np.zeros(n, np.int64)
    sys = build_latent_system(spec, params, dataset)
    T = sys.T
    mean = np.empty((T, n))
    var = np.empty((T, n))
    for t, r in enumerate(sys.replicates):
        Z = partial_inverse(r.factor)
        mean[t] = r.mu[:n]
        var[t] = Z.diagonal()[:n]
        if p:
            Eb = np.zeros((n + p, p))
            Eb[n:] = np.eye(p)
            Sb = solve(r.factor, Eb)
            mean[t] += Xg @ r.mu[n:]
            var[t] += 2.0 * np.sum(Xg * Sb[:n], axis=1) + np.einsum("ij,jk,ik->i", Xg, Sb[n:], Xg)
    var = np.maximum(var, 0.0)
    nug = 1.0 / params.tau_noise[np.asarray(cell_region)]
    return PredictionGrid(spec.grid.centers(), mean, np.sqrt(var), np.sqrt(var + nug[None, :]))


def cov_summary(spec, params, reference_cells=()):
    """Marginal standard deviations and correlation fields of the prior ``u``."""
    params = _params(params)
    Q, _, _ = spec.precision(params)
    fac = factorize(Q, stencil(spec.grid).symbolic)
    diag = partial_inverse(fac).diagonal()
    ref = np.atleast_1d(np.asarray(reference_cells, dtype=np.int64))
    n = spec.grid.n_cells
    corr = np.empty((ref.size, n))
    if ref.size:
        E = np.zeros((n, ref.size))
        E[ref, np.arange(ref.size)] = 1.0
        X = solve(fac, E)
        for r in range(ref.size):
            corr[r] = X[:, r] / np.sqrt(X[ref[r], r] * diag)
    return CovSummary(np.sqrt(diag), ref, corr)


def crps_gaussian(mu, sigma, y):
    """CRPS of ``N(mu, sigma^2)`` at ``y`` in closed form (elementwise)."""
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, sigma, y)))
    if np.any(sigma < 0) or np.any(~np.isfinite(sigma)):
        raise ValueError("sigma must be positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (y - mu) / sigma
        pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        cdf = 0.5 * (1.0 + erf(z / np.sqrt(2.0)))
        out = sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / _SQRT_PI)
    # point mass: CRPS reduces to the absolute error
    out = np.where(sigma == 0, np.abs(y - mu), out)
    return out if out.ndim else float(out)


def mean_crps(mu, sigma, y):
    return float(np.mean(crps_gaussian(mu, sigma, y)))


def rmse(predictions, y_test):
    predictions = np.asarray(predictions, dtype=float).ravel()
    y_test = np.asarray(y_test, dtype=float).ravel()
    if predictions.size != y_test.size:
        raise ValueError("length mismatch")
    if predictions.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((predictions - y_test) ** 2)))


def _check_disjoint(train, test):
    a = {(float(x), float(y), int(t)) for (x, y), t in zip(train.locations, train.replicate)}
    for (x, y), t in zip(test.locations, test.replicate):
        if (float(x), float(y), int(t)) in a:
            raise ValueError("train and test sets share an observation site within a replicate")


def log_score_holdout(fit_or_params, spec, train, test):
    """Negative joint log predictive density of ``test`` given ``train``.

    Computed as the difference of two marginal log densities at the same
    parameters.
    """
    if test.N == 0:
        return 0.0
    _check_disjoint(train, test)
    params = _params(fit_or_params)
    both = train.concat(test)
    return -(log_marginal_density(spec, params, both) - log_marginal_density(spec, params, train))


def predict_points(fit_or_params, spec, train, test):
    """Predictive mean and observation sd at the sites of ``test``.

    Uses the covariates, replicate and region of each test row.
    """
    params = _params(fit_or_params)
    n, p = spec.grid.n_cells, train.p
    if test.p != p:
        raise ValueError("train and test covariates differ")
    sys = build_latent_system(spec, params, train)
    cells = locate_cell(spec.grid, test.locations) if test.N else np.zeros(0, np.int64)
    mu = np.empty(test.N)
    var = np.empty(test.N)
    for t, r in enumerate(sys.replicates):
        sel = np.flatnonzero(test.replicate == t)
        if sel.size == 0:
            continue
        c = cells[sel]
        mu[sel] = r.mu[c]
        var[sel] = partial_inverse(r.factor).diagonal()[c]
        if p:
            Eb = np.zeros((n + p, p))
            Eb[n:] = np.eye(p)
            Sb = solve(r.factor, Eb)
            Xt = test.X[sel]
            mu[sel] += Xt @ r.mu[n:]
            var[sel] += 2.0 * np.sum(Xt * Sb[c], axis=1) + np.einsum("ij,jk,ik->i", Xt, Sb[n:], Xt)
    var = np.maximum(var, 0.0) + 1.0 / params.tau_noise[test.region]
    return mu, np.sqrt(var)


def score_holdout(fit_or_params, spec, train, test):
    """CRPS, log score and RMSE of ``test`` given ``train``."""
    if test.N == 0:
        raise ValueError("empty test set")
    params = _params(fit_or_params)
    mu, sd = predict_points(params, spec, train, test)
    return ScoreReport(mean_crps(mu, sd, test.y), log_score_holdout(params, spec, train, test), rmse(mu, test.y))


def holdout_split(dataset, fraction=0.2, seed=0):
    """Random train/test split of the observations within each replicate."""
    if not 0 < fraction < 1:
        raise ValueError("holdout fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test = []
    for t in range(dataset.n_replicates):
        idx = np.flatnonzero(dataset.replicate == t)
        k = int(round(fraction * idx.size))
        test.append(rng.permutation(idx)[:k])
    test = np.sort(np.concatenate(test)) if test else np.zeros(0, np.int64)
    if test.size == 0:
        raise ValueError("empty test set")
    mask = np.ones(dataset.N, bool)
    mask[test] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(test)


def variogram(dataset, bin_width=None, max_dist=None, region_filter=None, n_bins=30):
    """Empirical semivariogram from pairs within the same replicate.

    Parameters
    ----------
    dataset : Dataset
    bin_width, max_dist : float, optional
        Defaults: ``n_bins`` bins up to half the diagonal of the data's
        bounding box.
    region_filter : (threshold, side), optional
        Keep only points with longitude below (``"west"``) or at/above
        (``"east"``) the threshold.
    """
    loc, y, rep = dataset.locations, dataset.y, dataset.replicate
    if region_filter is not None:
        thr, side = region_filter
        if side not in ("west", "east"):
            raise ValueError("side must be 'west' or 'east'")
        keep = loc[:, 0] < thr if side == "west" else loc[:, 0] >= thr
        loc, y, rep = loc[keep], y[keep], rep[keep]
    if y.size < 2:
        raise ValueError("need at least two points")
    if max_dist is None:
        max_dist = 0.5 * float(np.hypot(*(loc.max(0) - loc.min(0))))
    if bin_width is None:
        bin_width = max_dist / n_bins
    nb = int(np.ceil(max_dist / bin_width - 1e-12))
    sums = np.zeros(nb)
    counts = np.zeros(nb, np.int64)
    for t in np.unique(rep):
        P = loc[rep == t]
        v = y[rep == t]
        for s in range(0, v.size, 512):
            d = np.hypot(P[s:s + 512, None, 0] - P[None, :, 0], P[s:s + 512, None, 1] - P[None, :, 1])
            dv = (v[s:s + 512, None] - v[None, :]) ** 2
            # each unordered pair once
            upper = np.arange(s, min(s + 512, v.size))[:, None] < np.arange(v.size)[None, :]
            sel = upper & (d <= max_dist)
            b = np.minimum((d[sel] / bin_width).astype(np.int64), nb - 1)
            sums += np.bincount(b, weights=dv[sel], minlength=nb)
            counts += np.bincount(b, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        gam = np.where(counts > 0, sums / (2.0 * counts), np.nan)
    centers = (np.arange(nb) + 0.5) * bin_width
    return Variogram(centers, gam, counts)


def kfold_indices(dataset, folds, seed=0):
    """Fold label per observation, balanced within each replicate."""
    rng = np.random.default_rng(seed)
    lab = np.empty(dataset.N, np.int64)
    for t in range(dataset.n_replicates):
        idx = np.flatnonzero(dataset.replicate == t)
        lab[rng.permutation(idx)] = np.arange(idx.size) % folds
    return lab


@dataclass(frozen=True, eq=False)
class CVResult:
    best: tuple
    candidates: list
    scores: np.ndarray


def cv_penalty_search(spec_template, dataset, grid_of_log_tau=None, folds=5, seed=0, fit_kwargs=None):
    """K-fold cross-validation of the four RW2 penalty precisions.

    The score of a candidate is the mean over folds of the held-out log
    score; the smallest wins.

    Parameters
    ----------
    spec_template : ModelSpec
        Grid, basis and ``tau_beta``; its ``tau`` is replaced per candidate.
    grid_of_log_tau : list of 4-tuples, optional
        Candidates; default is the full grid over ``{2, 4, 6, 8}``.
    """
    if grid_of_log_tau is None:
        vals = (2.0, 4.0, 6.0, 8.0)
        grid_of_log_tau = [(a, b, c, d) for a in vals for b in vals for c in vals for d in vals]
    cands = [tuple(float(v) for v in c) for c in grid_of_log_tau]
    if not cands:
        raise ValueError("empty candidate grid")
    if folds < 2:
        raise ValueError("need at least two folds")
    fit_kwargs = dict(fit_kwargs or {})
    lab = kfold_indices(dataset, folds, seed)
    splits = [(dataset.subset(np.flatnonzero(lab != k)), dataset.subset(np.flatnonzero(lab == k))) for k in range(folds)]
    # stationary starting points do not depend on the penalties
    stat = ModelSpec(spec_template.grid, spec_template.basis, spec_template.tau, spec_template.tau_beta, True)
    inits = [fit(stat, tr, std_errors=False).params for tr, _ in splits]
    scores = np.empty(len(cands))
    for c, lt in enumerate(cands):
        spec = ModelSpec.from_log_tau(spec_template.grid, spec_template.basis, lt,
                                      tau_beta=spec_template.tau_beta, stationary=spec_template.stationary)
        tot = 0.0
        for (tr, te), init in zip(splits, inits):
            res = fit(spec, tr, init=init, std_errors=False, **fit_kwargs)
            tot += log_score_holdout(res, spec, tr, te)
        scores[c] = tot / folds
    best = cands[int(np.argmin(scores))]
    return CVResult(best, cands, scores)


def detrend(dataset, spec_stationary, fit_kwargs=None):
    """Remove a common mean surface estimated from all replicates.

    The global mean of ``y`` is removed, a stationary replicate model is
    fitted to the centred data, and the per-replicate posterior means are
    averaged into ``mu_hat``. Residuals are ``y - mu_hat(cell)``.

    Returns
    -------
    (Dataset, ndarray)
        Residual dataset and ``mu_hat`` on the grid.
    """
    if dataset.n_replicates < 2:
        raise ValueError("de-trending needs at least two replicates")
    spec = spec_stationary if spec_stationary.stationary else spec_stationary.as_stationary()
    ybar = float(np.mean(dataset.y))
    centred = dataset.with_y(dataset.y - ybar)
    res = fit(spec, centred, std_errors=False, **(fit_kwargs or {}))
    sys = build_latent_system(spec, res.params, centred)
    mu_hat = ybar + np.mean([sys.u_mean(t) for t in range(sys.T)], axis=0)
    cells = locate_cell(spec.grid, dataset.locations)
    return dataset.with_y(dataset.y - mu_hat[cells]), mu_hat


def simulate_dataset(spec, params_true, locations=None, n_locations=None, T=1, seed=0,
                     X=None, beta=None, region=None):
    """Draw observations from the model.

    The same locations are used in every replicate. Locations are drawn
    uniformly over the domain when only ``n_locations`` is given.

    Parameters
    ----------
    region : array_like of int or callable, optional
        Nugget region per location, or a function of the ``(N, 2)``
        locations returning it.
    """
    rng = np.random.default_rng(seed)
    g = spec.grid
    params = _params(params_true)
    if locations is None:
        if n_locations is None:
            raise ValueError("give locations or n_locations")
        locations = np.column_stack([rng.uniform(g.x_min, g.x_max, n_locations), rng.uniform(g.y_min, g.y_max, n_locations)])
    loc = np.asarray(locations, dtype=float).reshape(-1, 2)
    M = loc.shape[0]
    reg = np.zeros(M, np.int64)
    if region is not None:
        reg = np.asarray(region(loc) if callable(region) else region, dtype=np.int64)
    cells = locate_cell(g, loc) if M else np.zeros(0, np.int64)
    Q, _, _ = spec.precision(params)
    fac = factorize(Q, stencil(g).symbolic)
    U = sample(fac, rng.standard_normal((g.n_cells, T)))
    sd = 1.0 / np.sqrt(params.tau_noise[reg])
    ys = [U[cells, t] + sd * rng.standard_normal(M) for t in range(T)]
    if X is not None:
        if T != 1:
            raise ValueError("covariates are only supported with a single replicate")
        X = np.asarray(X, dtype=float).reshape(M, -1)
        ys[0] = ys[0] + X @ np.asarray(beta, dtype=float)
    return Dataset(
        np.tile(loc, (T, 1)), np.concatenate(ys) if ys else np.zeros(0), X,
        np.repeat(np.arange(T), M), np.tile(reg, T), T, params.n_regions,
    )
