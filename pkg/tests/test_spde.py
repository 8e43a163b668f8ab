import numpy as np
import pytest
import scipy.sparse as sp

from spdegrf import NonStatParams, assemble_A, assemble_dQ, assemble_Q, build_basis_2d, build_grid, eval_spde_fields
from spdegrf.sparse import analyze, factorize


def _setup(nx=8, ny=6, k=3, l=2, seed=0):
    g = build_grid([0, 4, 0, 3], nx, ny)
    b = build_basis_2d(k, l, g.extents)
    rng = np.random.default_rng(seed)
    m = b.size
    p = NonStatParams(0.3 * rng.standard_normal(m), 0.3 * rng.standard_normal(m),
                      0.5 * rng.standard_normal(m), 0.5 * rng.standard_normal(m), [1.0])
    return g, b, p


def test_constants_in_null_space_of_diffusion():
    g, b, p = _setup()
    f = eval_spde_fields(p, b, g)
    A = assemble_A(f, g)
    assert np.allclose(A @ np.ones(g.n_cells), f.kappa2, atol=1e-12)
    assert np.diff(A.indptr).max() <= 9


def test_isotropic_matches_five_point_laplacian():
    g = build_grid([0, 2, 0, 1], 6, 5)
    b = build_basis_2d(2, 2, g.extents)
    p = NonStatParams.constant(np.log(2.0), 0.0, 0.0, 0.0, 0.0, n_alpha=4)
    A = assemble_A(eval_spde_fields(p, b, g), g).toarray()

    def lap1(n, h):
        T = np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)
        T[0, 0] = T[-1, -1] = 1.0
        return T / h ** 2

    ref = 2.0 * np.eye(30) + np.kron(lap1(g.n_x, g.h_x), np.eye(g.n_y)) + np.kron(np.eye(g.n_x), lap1(g.n_y, g.h_y))
    assert np.allclose(A, ref, atol=1e-12)


def test_precision_symmetric_pd_bandwidth():
    g, b, p = _setup()
    Q = assemble_Q(assemble_A(eval_spde_fields(p, b, g), g), g)
    assert abs(Q - Q.T).max() == 0
    assert np.diff(Q.indptr).max() <= 25
    assert np.linalg.eigvalsh(Q.toarray()).min() > 0
    factorize(Q, analyze(Q))


@pytest.mark.parametrize("which", [0, 5, 7, 13, 20, 23])
def test_dQ_against_finite_differences(which):
    g, b, p = _setup()
    th = p.to_vector()
    dQ = assemble_dQ(p, b, g, which).toarray()
    h = 1e-6

    def Q(t):
        q = NonStatParams.from_vector(t, b.size)
        return assemble_Q(assemble_A(eval_spde_fields(q, b, g), g), g).toarray()

    e = np.zeros_like(th)
    e[which] = h
    fd = (Q(th + e) - Q(th - e)) / (2 * h)
    assert np.abs(dQ - fd).max() < 1e-6 * max(1.0, np.abs(dQ).max())


def test_dQ_noise_is_zero_and_index_checked():
    g, b, p = _setup()
    assert assemble_dQ(p, b, g, 24).nnz == 0
    with pytest.raises(IndexError):
        assemble_dQ(p, b, g, 25)


def test_params_roundtrip_and_validation():
    p = NonStatParams([1, 2], [3, 4], [5, 6], [7, 8], [0.1, 0.2])
    assert np.array_equal(p.to_vector(), [1, 2, 3, 4, 5, 6, 7, 8, 0.1, 0.2])
    q = NonStatParams.from_vector(p.to_vector(), 2)
    assert np.array_equal(q.to_vector(), p.to_vector()) and q.n_regions == 2
    with pytest.raises(ValueError):
        NonStatParams([1, 2], [3], [5, 6], [7, 8], [0.1])
    with pytest.raises(ValueError):
        NonStatParams.from_vector(np.zeros(7), 2)
    c = NonStatParams.constant(1.0, 2.0, 0.5, -0.5, 3.0).with_coefficients(6)
    assert c.n_alpha == 6 and np.all(c.alpha3 == 0.5)


def test_basis_size_mismatch():
    g, b, p = _setup()
    with pytest.raises(ValueError):
        eval_spde_fields(NonStatParams.constant(0, 0, 0, 0, 0, n_alpha=4), b, g)


def test_anisotropic_fields_at_edges():
    g = build_grid([0, 1, 0, 1], 4, 4)
    b = build_basis_2d(2, 2, g.extents)
    p = NonStatParams.constant(0.0, np.log(0.5), 1.0, 2.0, 0.0, n_alpha=4)
    f = eval_spde_fields(p, b, g)
    assert np.allclose(f.f["e11"], 1.5) and np.allclose(f.f["n22"], 4.5)
    assert np.allclose(f.f["e12"], 2.0) and np.allclose(f.f["n12"], 2.0)
    A = assemble_A(f, g)
    assert sp.issparse(A) and A.shape == (16, 16)
