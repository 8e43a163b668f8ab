import numpy as np
import pytest
import scipy.sparse as sp

from spdegrf import build_latent_system


def grid_laplacian(m, n, shift=0.1):
    """Five-point Laplacian on an m x n grid plus ``shift * I``."""
    T = lambda k: sp.diags([-np.ones(k - 1), 2 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1])  # noqa: E731
    return (sp.kron(sp.identity(n), T(m)) + sp.kron(T(n), sp.identity(m)) + shift * sp.identity(m * n)).tocsr()


def random_spd(n, density, rng):
    M = sp.random(n, n, density=density, random_state=rng)
    M = M + M.T
    return (M + sp.identity(n) * (abs(M).sum(axis=1).max() + 1.0)).tocsr()


def dense_marginal(spec, params, ds):
    """Dense ``log N(y; 0, S Qz^{-1} S' + D^{-1})`` and the matching penalized value."""
    sys = build_latent_system(spec, params, ds)
    S = sys.S.toarray()
    Qz = sys.Q_z.toarray()
    D = sys.noise_precision
    C = S @ np.linalg.solve(Qz, S.T) + np.diag(1.0 / D)
    _, ld = np.linalg.slogdet(C)
    y = ds.y
    lmd = -0.5 * ld - 0.5 * y @ np.linalg.solve(C, y) - 0.5 * y.size * np.log(2 * np.pi)
    Qr = spec.rw2()
    pen = 0.5 * sum(t * a @ Qr @ a for t, a in zip(spec.tau, params.alphas))
    return lmd, lmd - pen + 0.5 * y.size * np.log(2 * np.pi)


def dense_conditional(spec, params, train, test):
    """Dense predictive mean and covariance of ``test`` given ``train``."""
    both = train.concat(test)
    sys = build_latent_system(spec, params, both)
    S = sys.S.toarray()
    C = S @ np.linalg.solve(sys.Q_z.toarray(), S.T) + np.diag(1.0 / sys.noise_precision)
    a = np.arange(train.N)
    b = np.arange(train.N, both.N)
    Caa, Cab, Cbb = C[np.ix_(a, a)], C[np.ix_(a, b)], C[np.ix_(b, b)]
    mean = Cab.T @ np.linalg.solve(Caa, train.y)
    cov = Cbb - Cab.T @ np.linalg.solve(Caa, Cab)
    return mean, cov


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_instance(rng, T=None, R=None, p=None):
    """Small random (spec, params, dataset) within the oracle size limits."""
    from spdegrf import Dataset, ModelSpec, NonStatParams, build_basis_2d, build_grid

    nx, ny = int(rng.integers(3, 13)), int(rng.integers(3, 11))
    g = build_grid([0.0, nx * 0.5, 0.0, ny * 0.5], nx, ny)
    T = int(rng.integers(1, 4)) if T is None else T
    R = int(rng.integers(1, 3)) if R is None else R
    p = (int(rng.integers(0, 3)) if T == 1 else 0) if p is None else p
    k, l = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    b = build_basis_2d(k, l, g.extents)
    spec = ModelSpec.from_log_tau(g, b, rng.uniform(0, 3, 4), tau_beta=float(rng.uniform(0.1, 2)))
    m = b.size
    params = NonStatParams(
        rng.normal(0.0, 0.5, m), rng.normal(-0.5, 0.4, m), rng.normal(0, 0.4, m), rng.normal(0, 0.4, m),
        rng.uniform(0.0, 2.0, R),
    )
    N = int(rng.integers(1, 51))
    loc = rng.uniform([g.x_min, g.y_min], [g.x_max, g.y_max], size=(N, 2))
    ds = Dataset(loc, rng.normal(0, 1.5, N), rng.normal(size=(N, p)) if p else None,
                 rng.integers(0, T, N), rng.integers(0, R, N), T, R)
    return spec, params, ds
