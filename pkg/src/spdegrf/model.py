"""Hierarchical model, integrated penalized likelihood, gradient and fitting.

Model, for replicates ``t = 0..T-1`` and observations ``n`` in replicate ``t``::

    y_n = x_n' beta + u_t(cell_n) + eps_n,   eps_n ~ N(0, 1 / tau_{region_n})
    u_t ~ N(0, Q^{-1}),  Q = Q(theta) from the SPDE discretization
    beta ~ N(0, I / tau_beta)

with the spline coefficients penalized by ``tau_i * alpha_i' Q_rw2 alpha_i / 2``.
The latent vector is ``z = (u_0, ..., u_{T-1}, beta)``; covariates are only
supported with a single replicate, so for ``T > 1`` the conditional precision
is block diagonal and each block is factored on the pattern of ``Q``.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .basis import Basis2D, constant_basis_2d, rw2_precision
from .errors import NotPositiveDefiniteError, UnsupportedConfigurationError
from .geometry import Grid, locate_cell
from .sparse import analyze, factorize, partial_inverse, solve
from .spde import FieldDesign, NonStatParams, eval_spde_fields, stencil

log = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "ModelSpec",
    "LatentSystem",
    "FitResult",
    "build_latent_system",
    "penalized_loglik",
    "log_marginal_density",
    "gradient",
    "fit",
    "verify_stationary_summary",
    "regions_by_longitude",
    "default_stationary_init",
]

_LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Point observations.

    Parameters
    ----------
    locations : array_like, shape (N, 2)
    y : array_like, shape (N,)
    X : array_like, shape (N, p), optional
        Covariates; ``p = 0`` when omitted.
    replicate : array_like of int, optional
        Replicate (e.g. year) of each observation, all zero by default.
    region : array_like of int, optional
        Nugget region of each observation, all zero by default.
    n_replicates, n_regions : int, optional
        Defaults are one more than the largest index present.
    """

    locations: np.ndarray
    y: np.ndarray
    X: np.ndarray = None
    replicate: np.ndarray = None
    region: np.ndarray = None
    n_replicates: int = None
    n_regions: int = None

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        y = np.asarray(self.y, dtype=float).ravel()
        N = loc.shape[0]
        if y.size != N:
            raise ValueError(f"{N} locations but {y.size} values")
        X = np.zeros((N, 0)) if self.X is None else np.asarray(self.X, dtype=float).reshape(N, -1)
        rep = np.zeros(N, np.int64) if self.replicate is None else np.asarray(self.replicate, dtype=np.int64).ravel()
        reg = np.zeros(N, np.int64) if self.region is None else np.asarray(self.region, dtype=np.int64).ravel()
        if rep.size != N or reg.size != N:
            raise ValueError("replicate and region need one entry per observation")
        T = self.n_replicates if self.n_replicates is not None else int(rep.max(initial=-1)) + 1
        R = self.n_regions if self.n_regions is not None else int(reg.max(initial=-1)) + 1
        T, R = max(int(T), 1), max(int(R), 1)
        if N and (rep.min() < 0 or rep.max() >= T):
            raise ValueError("replicate index out of range")
        if N and (reg.min() < 0 or reg.max() >= R):
            raise ValueError("region index out of range")
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("non-finite data")
        for name, v in (("locations", loc), ("y", y), ("X", X), ("replicate", rep), ("region", reg)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "n_replicates", T)
        object.__setattr__(self, "n_regions", R)

    @property
    def N(self):
        return self.y.size

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.locations[idx], self.y[idx], self.X[idx], self.replicate[idx], self.region[idx],
                       self.n_replicates, self.n_regions)

    def with_y(self, y):
        return Dataset(self.locations, y, self.X, self.replicate, self.region, self.n_replicates, self.n_regions)

    def concat(self, other):
        if other.p != self.p:
            raise ValueError("covariate dimensions differ")
        return Dataset(
            np.vstack([self.locations, other.locations]),
            np.concatenate([self.y, other.y]),
            np.vstack([self.X, other.X]),
            np.concatenate([self.replicate, other.replicate]),
            np.concatenate([self.region, other.region]),
            max(self.n_replicates, other.n_replicates),
            max(self.n_regions, other.n_regions),
        )


def regions_by_longitude(x, threshold):
    """Region 0 for ``x < threshold`` (west), 1 otherwise."""
    return (np.asarray(x, dtype=float) >= threshold).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Fixed model configuration.

    Parameters
    ----------
    grid : Grid
    basis : Basis2D
        Spline basis of the four fields (ignored when ``stationary``).
    tau : sequence of 4 floats
        RW2 penalty precisions for ``log kappa^2``, ``log gamma``, ``v_x``, ``v_y``.
    tau_beta : float
        Prior precision of the fixed effects.
    stationary : bool
        Collapse every field to a single constant.
    """

    grid: Grid
    basis: Basis2D = None
    tau: tuple = (1.0, 1.0, 1.0, 1.0)
    tau_beta: float = 1e-4
    stationary: bool = False

    def __post_init__(self):
        tau = tuple(float(t) for t in self.tau)
        if len(tau) != 4 or not all(t > 0 and np.isfinite(t) for t in tau):
            raise ValueError("need four positive penalty precisions")
        if not self.tau_beta > 0:
            raise ValueError("tau_beta must be positive")
        if self.basis is None and not self.stationary:
            raise ValueError("a basis is required for the non-stationary model")
        object.__setattr__(self, "tau", tau)
        fb = constant_basis_2d(self.grid.extents) if self.stationary else self.basis
        object.__setattr__(self, "_field_basis", fb)
        object.__setattr__(self, "_cache", {})

    @classmethod
    def from_log_tau(cls, grid, basis, log_tau, **kw):
        return cls(grid, basis, tuple(np.exp(np.asarray(log_tau, dtype=float))), **kw)

    @property
    def field_basis(self) -> Basis2D:
        return self._field_basis

    @property
    def n_alpha(self):
        return self._field_basis.size

    def n_theta(self, n_regions=1):
        return 4 * self.n_alpha + n_regions

    def as_stationary(self):
        return replace(self, stationary=True)

    def design(self):
        if "design" not in self._cache:
            self._cache["design"] = FieldDesign(self._field_basis, self.grid)
        return self._cache["design"]

    def rw2(self):
        if "rw2" not in self._cache:
            self._cache["rw2"] = rw2_precision(self._field_basis)
        return self._cache["rw2"]

    def precision(self, params):
        """``(Q, A, fields)`` for the given parameters."""
        fields = eval_spde_fields(params, self._field_basis, self.grid, self.design())
        st = stencil(self.grid)
        A = st.matrix(st.data(fields.f))
        Q = (A.T @ A).tocsr() * self.grid.V
        Q = ((Q + Q.T) * 0.5).tocsr()
        return Q, A, fields


@dataclass(eq=False)
class _Replicate:
    obs: np.ndarray
    cells: np.ndarray
    d: np.ndarray
    S: sp.csr_matrix
    QC: sp.csr_matrix
    factor: object
    mu: np.ndarray


@dataclass(eq=False)
class LatentSystem:
    """Conditional Gaussian system of the latent field given data and parameters.

    The per-replicate blocks are kept separately; the global matrices over
    ``z = (u_0, ..., u_{T-1}, beta)`` are assembled on request.
    """

    spec: ModelSpec
    params: NonStatParams
    dataset: Dataset
    Q: sp.csr_matrix
    A: sp.csr_matrix
    fields: object
    factor_Q: object
    replicates: list
    p: int

    @property
    def T(self):
        return len(self.replicates)

    @property
    def n(self):
        return self.spec.grid.n_cells

    @property
    def dim(self):
        return self.T * self.n + self.p

    @property
    def beta(self):
        return self.replicates[0].mu[self.n:] if self.p else np.zeros(0)

    def u_mean(self, t=0):
        return self.replicates[t].mu[: self.n]

    @property
    def mu_C(self):
        out = [r.mu[: self.n] for r in self.replicates]
        return np.concatenate(out + [self.beta])

    @property
    def Q_z(self):
        blocks = [self.Q] * self.T
        if self.p:
            blocks.append(sp.identity(self.p) * self.spec.tau_beta)
        return sp.block_diag(blocks, format="csr")

    @property
    def Q_C(self):
        if self.p:
            return self.replicates[0].QC.tocsr()
        return sp.block_diag([r.QC for r in self.replicates], format="csr")

    @property
    def S(self):
        """``N x dim`` design in dataset order."""
        N = self.dataset.N
        rows, cols, vals = [], [], []
        for t, r in enumerate(self.replicates):
            Sc = r.S.tocoo()
            rows.append(r.obs[Sc.row])
            c = Sc.col.copy()
            u = c < self.n
            c[u] += t * self.n
            c[~u] += (self.T - 1) * self.n
            cols.append(c)
            vals.append(Sc.data)
        if not rows:
            return sp.csr_matrix((N, self.dim))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, self.dim))

    @property
    def noise_precision(self):
        """Per-observation nugget precision (diagonal of ``D``)."""
        return self.params.tau_noise[self.dataset.region]


class _Evaluator:
    """Everything about a (spec, dataset) pair that does not depend on theta."""

    def __init__(self, spec: ModelSpec, data: Dataset):
        if data.p > 0 and data.n_replicates > 1:
            raise UnsupportedConfigurationError("covariates are only supported with a single replicate")
        self.spec, self.data = spec, data
        g = spec.grid
        self.n = g.n_cells
        self.p = data.p
        self.T = data.n_replicates
        self.R = data.n_regions
        self.st = stencil(g)
        self.symQ = self.st.symbolic
        cells = locate_cell(g, data.locations) if data.N else np.zeros(0, np.int64)
        self.cells = cells
        self.reps = []
        for t in range(self.T):
            obs = np.flatnonzero(data.replicate == t)
            E = sp.csr_matrix((np.ones(obs.size), (np.arange(obs.size), cells[obs])), shape=(obs.size, self.n))
            S = sp.hstack([E, sp.csr_matrix(data.X[obs])], format="csr") if self.p else E
            self.reps.append((obs, cells[obs], S))
        if self.p:
            S = self.reps[0][2]
            Sp = S.copy()
            Sp.data = np.ones_like(Sp.data)
            pat = sp.block_diag([self.st.q_pattern(), sp.identity(self.p)], format="csr") + (Sp.T @ Sp)
            self.symC = analyze(pat, keep_last=self.p)
        else:
            self.symC = self.symQ
        self.n_obs_region = np.bincount(data.region, minlength=self.R) if data.N else np.zeros(self.R, np.int64)
        self._pair_pos = None

    def pair_positions(self):
        if self._pair_pos is None:
            q, a, k, j = self.st.row_pairs()
            pq = self.symQ.locate(k, j)
            pc = pq if self.symC is self.symQ else self.symC.locate(k, j)
            if np.any(pq < 0) or np.any(pc < 0):
                raise AssertionError("stencil pairs outside the factor pattern")
            self._pair_pos = (q, a, pq, pc)
        return self._pair_pos

    def params(self, theta):
        if isinstance(theta, NonStatParams):
            params = theta
        else:
            params = NonStatParams.from_vector(theta, self.spec.n_alpha, self.R)
        if params.n_alpha != self.spec.n_alpha:
            raise ValueError(f"expected {self.spec.n_alpha} coefficients per field, got {params.n_alpha}")
        if params.n_regions != self.R:
            raise ValueError(f"dataset has {self.R} nugget regions, parameters have {params.n_regions}")
        return params

    def system(self, theta):
        spec, data = self.spec, self.data
        params = self.params(theta)
        Q, A, fields = spec.precision(params)
        facQ = factorize(Q, self.symQ)
        tau = params.tau_noise
        reps = []
        for obs, cells, S in self.reps:
            d = tau[data.region[obs]]
            if self.p:
                QC = sp.block_diag([Q, sp.identity(self.p) * spec.tau_beta], format="csr") + (S.T @ sp.diags(d) @ S)
            else:
                QC = Q + sp.diags(np.bincount(cells, weights=d, minlength=self.n))
            QC = QC.tocsr()
            fac = factorize(QC, self.symC)
            mu = solve(fac, S.T @ (d * data.y[obs]))
            reps.append(_Replicate(obs, cells, d, S, QC, fac, mu))
        return LatentSystem(spec, params, data, Q, A, fields, facQ, reps, self.p)

    def loglik_terms(self, sys):
        """Returns (penalty, data part) with ``penalized = data - penalty``;
        the data part is the marginal log density without the 2 pi constant."""
        spec, data = self.spec, self.data
        params = sys.params
        Qr = spec.rw2()
        pen = 0.5 * sum(t * a @ Qr @ a for t, a in zip(spec.tau, params.alphas))
        ll = 0.5 * self.T * sys.factor_Q.log_det + 0.5 * self.p * np.log(spec.tau_beta)
        ll += 0.5 * float(self.n_obs_region @ params.log_tau_noise)
        for r in sys.replicates:
            ll -= 0.5 * r.factor.log_det
            mu_u = r.mu[: self.n]
            ll -= 0.5 * float(mu_u @ (sys.Q @ mu_u))
            if self.p:
                ll -= 0.5 * spec.tau_beta * float(r.mu[self.n:] @ r.mu[self.n:])
            res = data.y[r.obs] - r.S @ r.mu
            ll -= 0.5 * float(res @ (r.d * res))
        return float(pen), float(ll)

    def value(self, theta):
        sys = self.system(theta)
        pen, ll = self.loglik_terms(sys)
        return ll - pen, sys

    def grad(self, sys):
        spec, data = self.spec, self.data
        params = sys.params
        st = self.st
        n, p = self.n, self.p
        q, a, pq, pc = self.pair_positions()
        ZQ = partial_inverse(sys.factor_Q)
        Wp = self.T * ZQ.Zx[pq]
        g_noise = 0.5 * self.n_obs_region.astype(float)
        tau = params.tau_noise
        U = np.empty((n, self.T))
        for t, r in enumerate(sys.replicates):
            ZC = partial_inverse(r.factor)
            Wp = Wp - ZC.Zx[pc]
            U[:, t] = r.mu[:n]
            if r.obs.size == 0:
                continue
            # diag(S Sigma_C S') per observation
            dvar = ZC.diagonal()[r.cells]
            if p:
                Eb = np.zeros((n + p, p))
                Eb[n:, :] = np.eye(p)
                Sb = solve(r.factor, Eb)  # columns of Sigma_C for beta
                Xo = data.X[r.obs]
                dvar = dvar + 2.0 * np.sum(Xo * Sb[r.cells, :], axis=1) + np.einsum("ij,jk,ik->i", Xo, Sb[n:, :], Xo)
            res = data.y[r.obs] - r.S @ r.mu
            reg = data.region[r.obs]
            g_noise -= 0.5 * tau * np.bincount(reg, weights=dvar + res * res, minlength=self.R)
        Ad = sys.A.data
        AW = np.bincount(q, weights=Ad[a] * Wp, minlength=st.nnz)
        AU = sys.A @ U
        second = np.sum(AU[st.row_of] * U[st.indices], axis=1)
        Gam = spec.grid.V * (AW - second)
        gk = st.pullback(Gam)
        des = spec.design()
        fl = sys.fields
        ga = [
            des.cells.T @ (fl.kappa2 * gk["k2"]),
            des.east.T @ (fl.gamma["e"] * gk["e11"]) + des.north.T @ (fl.gamma["n"] * gk["n22"]),
            des.east.T @ (2.0 * fl.vx["e"] * gk["e11"] + fl.vy["e"] * gk["e12"]) + des.north.T @ (fl.vy["n"] * gk["n12"]),
            des.east.T @ (fl.vx["e"] * gk["e12"]) + des.north.T @ (2.0 * fl.vy["n"] * gk["n22"] + fl.vx["n"] * gk["n12"]),
        ]
        Qr = spec.rw2()
        ga = [g - t * (Qr @ al) for g, t, al in zip(ga, spec.tau, params.alphas)]
        return np.concatenate(ga + [g_noise])

    def value_and_grad(self, theta):
        ll, sys = self.value(theta)
        return ll, self.grad(sys)


def _evaluator(spec, dataset):
    return _Evaluator(spec, dataset)


def build_latent_system(spec, params, dataset):
    """Assemble and solve the conditional latent system at ``params``."""
    return _evaluator(spec, dataset).system(params)


def penalized_loglik(spec, params, dataset):
    """Integrated penalized log-likelihood (without the ``2 pi`` constant)."""
    return _evaluator(spec, dataset).value(params)[0]


def log_marginal_density(spec, params, dataset):
    """Exact ``log p(y | theta)`` with all constants and no penalty."""
    ev = _evaluator(spec, dataset)
    sys = ev.system(params)
    _, ll = ev.loglik_terms(sys)
    return ll - 0.5 * dataset.N * _LOG2PI


def gradient(spec, params, dataset):
    """Analytic gradient of :func:`penalized_loglik` in serialized order."""
    return _evaluator(spec, dataset).value_and_grad(params)[1]


@dataclass(eq=False)
class FitResult:
    """Outcome of :func:`fit`.

    ``std_errors`` is filled for stationary fits only (observed information
    from a finite-difference Hessian of the analytic gradient).
    """

    params: NonStatParams
    loglik: float
    grad_norm: float
    n_iter: int
    converged: bool
    message: str = ""
    n_eval: int = 0
    std_errors: np.ndarray = None
    elapsed: float = 0.0
    stationary_init: "FitResult" = field(default=None, repr=False)

    @property
    def theta(self):
        return self.params.to_vector()


def default_stationary_init(spec, dataset):
    """Rough moment-based starting point for the five stationary parameters.

    Range is set to a fifth of the domain diagonal and the latent variance and
    nugget variance to half of the sample variance each. ``v`` starts slightly
    off zero because ``v = 0`` is a stationary point of the likelihood.
    """
    g = spec.grid
    var = float(np.var(dataset.y)) if dataset.N > 1 else 1.0
    var = var if var > 0 else 1.0
    diag = np.hypot(g.x_max - g.x_min, g.y_max - g.y_min)
    kappa2 = 8.0 / (diag / 5.0) ** 2
    gamma = 1.0 / (4.0 * np.pi * kappa2 * 0.5 * var)
    v = 0.1 * np.sqrt(gamma)
    ltau = np.full(dataset.n_regions, np.log(2.0 / var))
    return NonStatParams.constant(np.log(kappa2), np.log(gamma), v, v, ltau)


def _canonical_stationary(params):
    # v and -v give the same model; report v_x >= 0
    if params.n_alpha == 1 and params.alpha3[0] < 0:
        return NonStatParams(params.alpha1, params.alpha2, -params.alpha3, -params.alpha4, params.log_tau_noise)
    return params


def _hessian(ev, theta, step=1e-4):
    k = theta.size
    H = np.empty((k, k))
    for i in range(k):
        h = step * max(1.0, abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        H[:, i] = (ev.value_and_grad(tp)[1] - ev.value_and_grad(tm)[1]) / (2 * h)
    return 0.5 * (H + H.T)


def stationary_std_errors(spec, params, dataset):
    """Observed-information standard errors of a stationary fit (NaN if not PD)."""
    ev = _evaluator(spec, dataset)
    H = _hessian(ev, params.to_vector())
    try:
        cov = np.linalg.inv(-H)
        d = np.diag(cov)
        return np.where(d > 0, np.sqrt(np.abs(d)), np.nan)
    except np.linalg.LinAlgError:
        return np.full(H.shape[0], np.nan)


def fit(spec, dataset, init=None, max_iter=500, rel_tol=1e-5, std_errors=True):
    """Maximize the penalized log-likelihood with L-BFGS and analytic gradients.

    Parameters
    ----------
    spec : ModelSpec
    dataset : Dataset
    init : NonStatParams, optional
        Starting point. By default a stationary model is fitted first and
        its constant fields seed the non-stationary fit.
    max_iter : int
        Total iteration budget.
    rel_tol : float
        Convergence when ``max|grad| < rel_tol * max(1, |loglik|)``.
    std_errors : bool
        Compute observed-information standard errors (stationary only).
    """
    t0 = time.perf_counter()
    ev = _evaluator(spec, dataset)
    stat_fit = None
    if init is None:
        if spec.stationary:
            init = default_stationary_init(spec, dataset)
        else:
            stat_fit = fit(spec.as_stationary(), dataset, max_iter=max_iter, rel_tol=rel_tol, std_errors=False)
            init = stat_fit.params.with_coefficients(spec.n_alpha)
    elif init.n_alpha == 1 and spec.n_alpha > 1:
        init = init.with_coefficients(spec.n_alpha)
    theta = ev.params(init).to_vector()

    best = {"f": np.inf, "x": theta.copy(), "g": None}
    n_eval = [0]

    def objective(x):
        n_eval[0] += 1
        try:
            ll, g = ev.value_and_grad(x)
        except (NotPositiveDefiniteError, FloatingPointError, OverflowError) as exc:
            log.debug("evaluation failed at step %d: %s", n_eval[0], exc)
            return 1e300, np.zeros_like(x)
        if not np.isfinite(ll) or not np.all(np.isfinite(g)):
            return 1e300, np.zeros_like(x)
        if -ll < best["f"]:
            best.update(f=-ll, x=x.copy(), g=g.copy())
        return -ll, -g

    iters = 0
    message = ""
    converged = False
    x = theta
    with np.errstate(over="ignore", invalid="ignore"):
        f0, _ = objective(x)
        while iters < max_iter:
            scale = max(1.0, abs(best["f"]))
            res = minimize(
                objective, x, jac=True, method="L-BFGS-B",
                options={"maxiter": max_iter - iters, "gtol": rel_tol * scale, "ftol": 1e-15, "maxcor": 20},
            )
            iters += max(int(res.nit), 1)
            message = str(res.message)
            x = best["x"]
            gmax = float(np.max(np.abs(best["g"]))) if best["g"] is not None else np.inf
            if gmax < rel_tol * max(1.0, abs(best["f"])):
                converged = True
                break
            if res.nit == 0:
                break
    params = NonStatParams.from_vector(best["x"], spec.n_alpha, ev.R)
    grad_norm = float(np.max(np.abs(best["g"]))) if best["g"] is not None else np.inf
    ll = -best["f"]
    se = None
    if spec.stationary:
        params = _canonical_stationary(params)
        if std_errors:
            se = stationary_std_errors(spec, params, dataset)
    return FitResult(params, ll, grad_norm, iters, converged, message, n_eval[0], se,
                     time.perf_counter() - t0, stat_fit)


@dataclass(frozen=True)
class StationarySummary:
    H_over_kappa2: np.ndarray
    sigma2: float
    tau_noise: float


def verify_stationary_summary(theta_stat):
    """Implied covariance summary of stationary parameters.

    ``theta_stat`` is ``(log kappa^2, log gamma, v_x, v_y, log tau)`` or a
    constant :class:`NonStatParams`. Returns ``H / kappa^2``, the marginal
    variance ``1 / (4 pi kappa^2 sqrt(det H))`` and the nugget precision.
    """
    if isinstance(theta_stat, NonStatParams):
        lk, lg, vx, vy = (float(a[0]) for a in theta_stat.alphas)
        lt = float(theta_stat.log_tau_noise[0])
    else:
        lk, lg, vx, vy, lt = (float(v) for v in np.asarray(theta_stat).ravel()[:5])
    k2 = np.exp(lk)
    v = np.array([vx, vy])
    H = np.exp(lg) * np.eye(2) + np.outer(v, v)
    sigma2 = 1.0 / (4.0 * np.pi * k2 * np.sqrt(np.linalg.det(H)))
    return StationarySummary(H / k2, float(sigma2), float(np.exp(lt)))
