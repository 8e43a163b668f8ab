"""Finite-volume discretization of ``(kappa^2(s) - div H(s) grad) u = W``.

The operator ``A`` acts on cell averages of a regular grid with zero-flux
boundaries. Its non-zero values are linear in five edge/cell fields

* ``kappa^2`` at cell centres,
* ``H11`` and ``H12`` at the midpoints of vertical ("east") edges,
* ``H22`` and ``H12`` at the midpoints of horizontal ("north") edges,

so the stencil is precomputed once per grid as a set of sparse maps from
field values to ``A.data`` (see :class:`Stencil`). The same maps give the
derivative ``dA`` for any field perturbation and, transposed, pull
sensitivities on ``A`` back to the fields.

The anisotropy is parametrized as ``H = gamma I + v v'`` with ``gamma =
exp(f_2)`` and ``v = (f_3, f_4)``; ``kappa^2 = exp(f_1)``; each ``f_i`` is
a spline field with coefficient vector ``alpha_i``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .basis import Basis2D
from .sparse import analyze

__all__ = [
    "NonStatParams",
    "SpdeFields",
    "Stencil",
    "stencil",
    "eval_spde_fields",
    "assemble_A",
    "assemble_Q",
    "assemble_dQ",
    "anisotropy",
]

FIELD_KINDS = ("k2", "e11", "e12", "n22", "n12")


@dataclass(frozen=True, eq=False)
class NonStatParams:
    """Coefficients of the four spline fields plus per-region log noise precisions.

    Serialization order is ``(alpha1, alpha2, alpha3, alpha4, log_tau_noise)``.
    """

    alpha1: np.ndarray
    alpha2: np.ndarray
    alpha3: np.ndarray
    alpha4: np.ndarray
    log_tau_noise: np.ndarray

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4", "log_tau_noise"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        sizes = {self.alpha1.size, self.alpha2.size, self.alpha3.size, self.alpha4.size}
        if len(sizes) != 1:
            raise ValueError("all alpha blocks must have the same length")
        if self.log_tau_noise.size < 1:
            raise ValueError("need at least one nugget precision")

    @property
    def n_alpha(self):
        return self.alpha1.size

    @property
    def n_regions(self):
        return self.log_tau_noise.size

    @property
    def alphas(self):
        return (self.alpha1, self.alpha2, self.alpha3, self.alpha4)

    @property
    def tau_noise(self):
        return np.exp(self.log_tau_noise)

    def to_vector(self):
        return np.concatenate([*self.alphas, self.log_tau_noise])

    @classmethod
    def from_vector(cls, theta, n_alpha, n_regions=None):
        theta = np.asarray(theta, dtype=float).ravel()
        if n_regions is None:
            n_regions = theta.size - 4 * n_alpha
        if theta.size != 4 * n_alpha + n_regions or n_regions < 1:
            raise ValueError(f"parameter vector of length {theta.size} does not fit {n_alpha} coefficients per field")
        a = [theta[i * n_alpha:(i + 1) * n_alpha] for i in range(4)]
        return cls(*a, theta[4 * n_alpha:])

    @classmethod
    def constant(cls, log_kappa2, log_gamma, vx, vy, log_tau, n_alpha=1):
        """Constant fields. Coefficients equal to the value reproduce it exactly
        because the basis functions sum to one."""
        one = np.ones(n_alpha)
        return cls(log_kappa2 * one, log_gamma * one, vx * one, vy * one, np.atleast_1d(log_tau))

    def with_coefficients(self, n_alpha):
        """Expand constant (single-coefficient) fields to ``n_alpha`` coefficients."""
        if self.n_alpha != 1:
            raise ValueError("only constant parameters can be expanded")
        one = np.ones(n_alpha)
        return NonStatParams(*(a[0] * one for a in self.alphas), self.log_tau_noise)


def anisotropy(log_gamma, vx, vy):
    """``(H11, H12, H22)`` of ``H = gamma I + v v'``."""
    g = np.exp(log_gamma)
    return g + vx * vx, vx * vy, g + vy * vy


@dataclass(frozen=True, eq=False)
class SpdeFields:
    """Field values where the stencil needs them.

    ``f`` maps each kind in ``FIELD_KINDS`` to its values; ``gamma``, ``vx``,
    ``vy`` hold the raw edge quantities keyed ``"e"`` and ``"n"``.
    """

    kappa2: np.ndarray
    f: dict
    gamma: dict
    vx: dict
    vy: dict


class Stencil:
    """Geometry-only part of the operator on one grid.

    Attributes
    ----------
    indptr, indices : ndarray
        CSR pattern of ``A``; corner entries are kept even when ``H12 = 0``.
    maps : dict
        ``maps[kind]`` is a sparse ``(nnz, n_kind)`` matrix with
        ``A.data = sum_kind maps[kind] @ field[kind]``.
    cell_points, east_points, north_points : ndarray
        Where each field is evaluated.
    """

    def __init__(self, grid):
        self.grid = grid
        ny, nx = grid.n_y, grid.n_x
        n = grid.n_cells
        V = grid.V
        flat = lambda i, j: j * ny + i  # noqa: E731
        trip = {k: [] for k in FIELD_KINDS}

        c = np.arange(n)
        trip["k2"].append((c, c, np.ones(n), c))

        # east edges between (i, j) and (i, j+1)
        j, i = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        e = np.arange(i.size)
        L, R = flat(i, j), flat(i, j + 1)
        up, dn = np.minimum(i + 1, ny - 1), np.maximum(i - 1, 0)
        N1, N2, S1, S2 = flat(up, j), flat(up, j + 1), flat(dn, j), flat(dn, j + 1)
        s = grid.h_y / (grid.h_x * V)
        t = 1.0 / (4.0 * V)
        for row, col, w in ((L, R, -s), (L, L, s), (R, R, s), (R, L, -s)):
            trip["e11"].append((row, col, np.full(e.size, w), e))
        for row, sign in ((L, -1.0), (R, 1.0)):
            for col, w in ((N1, t), (N2, t), (S1, -t), (S2, -t)):
                trip["e12"].append((row, col, np.full(e.size, sign * w), e))
        self.east_points = np.column_stack(
            [grid.x_min + (j + 1) * grid.h_x, grid.y_min + (i + 0.5) * grid.h_y]
        )
        self.east_cells = (L, R)

        # north edges between (i, j) and (i+1, j)
        j, i = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
        i, j = i.ravel(), j.ravel()
        e = np.arange(i.size)
        S, N = flat(i, j), flat(i + 1, j)
        rt, lf = np.minimum(j + 1, nx - 1), np.maximum(j - 1, 0)
        E1, E2, W1, W2 = flat(i, rt), flat(i + 1, rt), flat(i, lf), flat(i + 1, lf)
        s = grid.h_x / (grid.h_y * V)
        for row, col, w in ((S, N, -s), (S, S, s), (N, N, s), (N, S, -s)):
            trip["n22"].append((row, col, np.full(e.size, w), e))
        for row, sign in ((S, -1.0), (N, 1.0)):
            for col, w in ((E1, t), (E2, t), (W1, -t), (W2, -t)):
                trip["n12"].append((row, col, np.full(e.size, sign * w), e))
        self.north_points = np.column_stack(
            [grid.x_min + (j + 0.5) * grid.h_x, grid.y_min + (i + 1) * grid.h_y]
        )
        self.north_cells = (S, N)
        self.cell_points = grid.centers()

        sizes = {"k2": n, "e11": (nx - 1) * ny, "e12": (nx - 1) * ny, "n22": nx * (ny - 1), "n12": nx * (ny - 1)}
        rows = np.concatenate([np.concatenate([r for r, _, _, _ in trip[k]]) for k in FIELD_KINDS])
        cols = np.concatenate([np.concatenate([q for _, q, _, _ in trip[k]]) for k in FIELD_KINDS])
        keys = rows.astype(np.int64) * n + cols
        ukeys = np.unique(keys)
        self.n = n
        self.nnz = ukeys.size
        self.indices = (ukeys % n).astype(np.int32)
        self.row_of = (ukeys // n).astype(np.int64)
        self.indptr = np.searchsorted(self.row_of, np.arange(n + 1)).astype(np.int32)
        self.maps = {}
        for k in FIELD_KINDS:
            r = np.concatenate([a for a, _, _, _ in trip[k]])
            q = np.concatenate([b for _, b, _, _ in trip[k]])
            w = np.concatenate([x for _, _, x, _ in trip[k]])
            idx = np.concatenate([x for _, _, _, x in trip[k]])
            pos = np.searchsorted(ukeys, r.astype(np.int64) * n + q)
            self.maps[k] = sp.csr_matrix((w, (pos, idx)), shape=(self.nnz, sizes[k]))
        self._sym = None
        self._pairs = None

    def matrix(self, data):
        """CSR matrix on the stencil pattern with the given values."""
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def data(self, f):
        """``A.data`` (or ``dA.data``) for field values ``f`` (dict by kind)."""
        out = np.zeros(self.nnz)
        for k in FIELD_KINDS:
            if k in f and f[k] is not None:
                out += self.maps[k] @ f[k]
        return out

    def pullback(self, gamma_data):
        """Transpose of :meth:`data`: sensitivities on ``A.data`` to each field."""
        return {k: self.maps[k].T @ gamma_data for k in FIELD_KINDS}

    def q_pattern(self):
        """Structural pattern of ``A'A`` (no cancellation)."""
        P = self.matrix(np.ones(self.nnz))
        return (P.T @ P).tocsr()

    @property
    def symbolic(self):
        """Symbolic factorization of the precision pattern, computed once."""
        if self._sym is None:
            self._sym = analyze(self.q_pattern())
        return self._sym

    def row_pairs(self):
        """For each ``(i, j)`` in pattern(A) and each ``k`` in row ``i``:
        arrays ``(q, a, k, j)`` with ``q`` the slot of ``(i, j)`` and ``a`` the
        slot of ``(i, k)``. Used to form ``(A W)_ij`` on the pattern."""
        if self._pairs is None:
            m = np.diff(self.indptr).astype(np.int64)
            cnt = m[self.row_of]
            q = np.repeat(np.arange(self.nnz), cnt)
            offs = np.concatenate([[0], np.cumsum(cnt)[:-1]])
            a = self.indptr[self.row_of[q]] + (np.arange(q.size) - offs[q])
            self._pairs = (q, a, self.indices[a].astype(np.int64), self.indices[q].astype(np.int64))
        return self._pairs


@lru_cache(maxsize=16)
def stencil(grid):
    """Cached :class:`Stencil` for ``grid``."""
    return Stencil(grid)


def _check_domain(basis, grid):
    bx0, bx1, by0, by1 = basis.extents
    tol = 1e-9 * max(grid.x_max - grid.x_min, grid.y_max - grid.y_min)
    if bx0 > grid.x_min + tol or bx1 < grid.x_max - tol or by0 > grid.y_min + tol or by1 < grid.y_max - tol:
        raise ValueError("basis domain does not cover the grid domain")


class FieldDesign:
    """Basis design matrices at the stencil's evaluation points."""

    def __init__(self, basis: Basis2D, grid):
        _check_domain(basis, grid)
        st = stencil(grid)
        self.basis = basis
        self.cells = basis.design(st.cell_points).tocsr()
        self.east = basis.design(st.east_points).tocsr()
        self.north = basis.design(st.north_points).tocsr()


def eval_spde_fields(params, basis, grid, design=None):
    """Evaluate ``kappa^2`` at cell centres and ``H`` at edge midpoints.

    Parameters
    ----------
    params : NonStatParams
    basis : Basis2D
        Must cover the grid domain and have ``params.n_alpha`` functions.
    grid : Grid
    design : FieldDesign, optional
        Precomputed design matrices (avoids re-evaluating the basis).
    """
    if params.n_alpha != basis.size:
        raise ValueError(f"parameters have {params.n_alpha} coefficients per field, basis has {basis.size}")
    if design is None:
        design = FieldDesign(basis, grid)
    a1, a2, a3, a4 = params.alphas
    kappa2 = np.exp(design.cells @ a1)
    f = {"k2": kappa2}
    gam, vx, vy = {}, {}, {}
    for tag, D in (("e", design.east), ("n", design.north)):
        gam[tag] = np.exp(D @ a2)
        vx[tag] = D @ a3
        vy[tag] = D @ a4
    f["e11"] = gam["e"] + vx["e"] ** 2
    f["e12"] = vx["e"] * vy["e"]
    f["n22"] = gam["n"] + vy["n"] ** 2
    f["n12"] = vx["n"] * vy["n"]
    return SpdeFields(kappa2, f, gam, vx, vy)


def assemble_A(fields, grid):
    """Sparse operator ``A`` (CSR, fixed 3x3-neighbourhood pattern)."""
    st = stencil(grid)
    return st.matrix(st.data(fields.f))


def assemble_Q(A, grid):
    """Precision ``Q = V A'A``, symmetrized exactly."""
    Q = (A.T @ A).tocsr() * grid.V
    return ((Q + Q.T) * 0.5).tocsr()


def field_derivatives(fields, design, which):
    """Derivative of every stencil field with respect to parameter ``which``.

    Returns a dict of field perturbations, or ``None`` for a noise parameter.
    """
    m = design.basis.size
    block, col = divmod(which, m)
    if block >= 4:
        return None
    cc = design.cells[:, [col]].toarray().ravel()
    ce = design.east[:, [col]].toarray().ravel()
    cn = design.north[:, [col]].toarray().ravel()
    z = {k: None for k in FIELD_KINDS}
    if block == 0:
        z["k2"] = fields.kappa2 * cc
    elif block == 1:
        z["e11"] = fields.gamma["e"] * ce
        z["n22"] = fields.gamma["n"] * cn
    elif block == 2:
        z["e11"] = 2.0 * fields.vx["e"] * ce
        z["e12"] = fields.vy["e"] * ce
        z["n12"] = fields.vy["n"] * cn
    else:
        z["e12"] = fields.vx["e"] * ce
        z["n12"] = fields.vx["n"] * cn
        z["n22"] = 2.0 * fields.vy["n"] * cn
    return z


def assemble_dQ(params, basis, grid, which):
    """``dQ / dtheta_which`` as ``V (dA' A + A' dA)``.

    ``which`` indexes the serialized parameter vector; derivatives with
    respect to the noise precisions are zero matrices.
    """
    n_theta = 4 * basis.size + params.n_regions
    if not 0 <= which < n_theta:
        raise IndexError(f"parameter index {which} out of range [0, {n_theta})")
    design = FieldDesign(basis, grid)
    fields = eval_spde_fields(params, basis, grid, design)
    st = stencil(grid)
    dz = field_derivatives(fields, design, which)
    if dz is None:
        return sp.csr_matrix((grid.n_cells, grid.n_cells))
    A = st.matrix(st.data(fields.f))
    dA = st.matrix(st.data(dz))
    M = (dA.T @ A).tocsr()
    return ((M + M.T) * grid.V).tocsr()
