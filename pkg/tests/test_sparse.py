import numpy as np
import pytest
import scipy.sparse as sp

from conftest import grid_laplacian, random_spd
from spdegrf.errors import NotPositiveDefiniteError, PatternError
from spdegrf.sparse import amd_order, analyze, factorize, partial_inverse, sample, solve, solve_many


def test_diagonal_has_no_fill():
    M = sp.diags(np.arange(1.0, 11.0)).tocsr()
    sym = analyze(M)
    assert sym.nnz_factor == 10
    fac = factorize(M, sym)
    assert fac.log_det == pytest.approx(np.sum(np.log(np.arange(1.0, 11.0))))
    Z = partial_inverse(fac)
    assert np.allclose(Z.diagonal(), 1.0 / np.arange(1.0, 11.0))


def test_tridiagonal_natural_order_no_fill():
    M = grid_laplacian(8, 1)
    sym = analyze(M, ordering="natural")
    assert sym.nnz_factor == 8 + 7


def test_amd_beats_natural_on_grid():
    M = grid_laplacian(10, 10)
    assert analyze(M).nnz_factor < analyze(M, ordering="natural").nnz_factor


def test_amd_is_permutation(rng):
    M = random_spd(80, 0.05, rng)
    p = amd_order(M)
    assert np.array_equal(np.sort(p), np.arange(80))


def test_identity_and_two_by_two():
    fac = factorize(sp.identity(5, format="csr"), analyze(sp.identity(5)))
    assert fac.log_det == 0.0
    assert np.allclose(fac.L().toarray(), np.eye(5))
    M = sp.csr_matrix([[4.0, 2.0], [2.0, 3.0]])
    assert factorize(M, analyze(M)).log_det == pytest.approx(np.log(8.0), abs=1e-14)


def test_log_det_random_spd(rng):
    M = random_spd(50, 0.1, rng)
    fac = factorize(M, analyze(M))
    ref = np.linalg.slogdet(M.toarray())[1]
    assert abs(fac.log_det - ref) <= 1e-9 * abs(ref)


def test_factor_reconstructs(rng):
    M = random_spd(40, 0.1, rng)
    fac = factorize(M, analyze(M))
    s = fac.symbolic
    L = fac.L().toarray()
    P = M.toarray()[np.ix_(s.perm, s.perm)]
    assert np.abs(L @ L.T - P).max() < 1e-12 * np.abs(P).max()


def test_log_det_scaling(rng):
    M = random_spd(30, 0.1, rng)
    sym = analyze(M)
    assert factorize(3.0 * M, sym).log_det == pytest.approx(factorize(M, sym).log_det + 30 * np.log(3.0))


def test_solve(rng):
    M = grid_laplacian(12, 9)
    fac = factorize(M, analyze(M))
    b = rng.standard_normal(M.shape[0])
    x = solve(fac, b)
    assert np.linalg.norm(M @ x - b) / np.linalg.norm(b) < 1e-10
    assert np.all(solve(fac, np.zeros_like(b)) == 0)
    x0 = rng.standard_normal(M.shape[0])
    assert np.allclose(solve(fac, M @ x0), x0, rtol=1e-9, atol=1e-9)
    B = rng.standard_normal((M.shape[0], 3))
    assert np.allclose(M @ solve_many(fac, B), B)
    I5 = sp.identity(5, format="csr")
    assert np.allclose(solve(factorize(I5, analyze(I5)), np.arange(5.0)), np.arange(5.0))


def test_not_positive_definite_reports_pivot():
    M = sp.csr_matrix(np.diag([1.0, 2.0, -1.0, 3.0]))
    with pytest.raises(NotPositiveDefiniteError) as e:
        factorize(M, analyze(M))
    assert e.value.pivot == 2


def test_asymmetric_pattern_rejected():
    M = sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(PatternError):
        analyze(M)


def test_entry_outside_analyzed_pattern():
    sym = analyze(sp.identity(3, format="csr"))
    with pytest.raises(PatternError):
        factorize(sp.csr_matrix(np.ones((3, 3)) + 3 * np.eye(3)), sym)


def test_keep_last_places_trailing_block_last(rng):
    M = random_spd(30, 0.1, rng)
    sym = analyze(M, keep_last=2)
    assert list(sym.perm[-2:]) == [28, 29]


def test_sample_identity_and_scaled():
    I = sp.identity(6, format="csr")
    z = np.arange(6.0)
    assert np.allclose(sample(factorize(I, analyze(I)), z), z)
    rng = np.random.default_rng(0)
    M = 4.0 * sp.identity(3, format="csr")
    u = sample(factorize(M, analyze(M)), rng.standard_normal((3, 100000)))
    se = 0.25 * np.sqrt(2.0 / 100000)
    assert np.all(np.abs(u.var(axis=1) - 0.25) < 3 * se)


def test_sample_covariance_grid():
    rng = np.random.default_rng(1)
    M = grid_laplacian(4, 3, shift=1.0)
    fac = factorize(M, analyze(M))
    U = sample(fac, rng.standard_normal((12, 10000)))
    C = np.cov(U)
    S = np.linalg.inv(M.toarray())
    # Monte Carlo standard error of a covariance entry
    se = np.sqrt((S * S + np.outer(np.diag(S), np.diag(S))) / 10000)
    assert np.all(np.abs(C - S) < 5 * se)


@pytest.mark.parametrize("shape", [(6, 1), (12, 10), (30, 30)])
def test_partial_inverse_on_pattern(shape):
    M = grid_laplacian(*shape)
    M = (M @ M).tocsr()
    Z = partial_inverse(factorize(M, analyze(M)))
    S = np.linalg.inv(M.toarray())
    C = Z.to_sparse().tocoo()
    assert np.abs(C.data - S[C.row, C.col]).max() <= 1e-9 * np.abs(S).max()
    assert np.allclose(Z.diagonal(), np.diag(S), rtol=1e-9)


def test_partial_inverse_values_outside_pattern():
    M = sp.identity(4, format="csr")
    Z = partial_inverse(factorize(M, analyze(M)))
    with pytest.raises(PatternError):
        Z.values([0], [1])


def test_trace_identity(rng):
    M = grid_laplacian(9, 7)
    fac = factorize(M, analyze(M))
    Z = partial_inverse(fac)
    B = M.copy()
    B.data = rng.standard_normal(B.data.size)
    ref = np.trace(np.linalg.solve(M.toarray(), B.toarray()))
    assert Z.trace_product(B) == pytest.approx(ref, rel=1e-8)
