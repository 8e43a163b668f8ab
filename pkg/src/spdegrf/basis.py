"""Quadratic B-spline bases with zero end-derivatives and the RW2 penalty.

Each 1-D basis lives on ``n`` uniform spans of ``[A, B]`` with one function
per span centre. The two splines that would stick out past the ends are
folded back into their boundary neighbours, which gives every function a
zero derivative at ``A`` and ``B`` while keeping ``sum_i g_i(x) = 1``.

On every span at most three functions are active. A basis is stored as, per
span, three slots of (function index, local polynomial in ``t`` in
``[0, 1]``); slots may repeat a function index and are summed.

Two-dimensional coefficients are stacked row-wise: ``alpha[i * l + j]``
multiplies ``g_i(x) h_j(y)``.
"""
from dataclasses import dataclass

import numpy as np
import numpy.polynomial.polynomial as P
import scipy.sparse as sp

from .errors import InvalidBasisError

__all__ = [
    "Basis1D",
    "Basis2D",
    "build_basis_1d",
    "build_basis_2d",
    "constant_basis_2d",
    "eval_field",
    "gram_matrices",
    "rw2_precision",
]

# local pieces of the cardinal quadratic B-spline, ascending powers of t
_RISE = np.array([0.0, 0.0, 0.5])
_MID = np.array([0.5, 1.0, -1.0])
_FALL = np.array([0.5, -1.0, 0.5])


@dataclass(frozen=True, eq=False)
class Basis1D:
    """Piecewise-quadratic basis on ``[A, B]``.

    Attributes
    ----------
    n_fun : int
        Number of basis functions.
    A, B : float
        Interval end points.
    knots : ndarray
        Span boundaries, ``n_spans + 1`` uniform points.
    slot_fun : ndarray, shape (n_spans, 3)
        Function index carried by each slot.
    slot_poly : ndarray, shape (n_spans, 3, 3)
        Polynomial coefficients (ascending powers of the local variable).
    """

    n_fun: int
    A: float
    B: float
    knots: np.ndarray
    slot_fun: np.ndarray
    slot_poly: np.ndarray

    @property
    def n_spans(self):
        return self.slot_fun.shape[0]

    @property
    def h(self):
        return (self.B - self.A) / self.n_spans

    @property
    def coefficients(self):
        """Per-function, per-span polynomial coefficients, shape (n_fun, n_spans, 3)."""
        c = np.zeros((self.n_fun, self.n_spans, 3))
        for a in range(3):
            np.add.at(c, (self.slot_fun[:, a], np.arange(self.n_spans)), self.slot_poly[:, a])
        return c

    def _local(self, x):
        x = np.asarray(x, dtype=float).ravel()
        tol = 1e-9 * (self.B - self.A)
        if np.any(x < self.A - tol) or np.any(x > self.B + tol):
            raise InvalidBasisError("evaluation point outside the basis interval")
        s = (x - self.A) / self.h
        m = np.clip(np.floor(s).astype(np.int64), 0, self.n_spans - 1)
        return m, s - m

    def slots(self, x, deriv=0):
        """Active function indices and values at ``x``, each of shape (N, 3)."""
        m, t = self._local(x)
        poly = self.slot_poly[m]  # (N, 3, 3)
        if deriv:
            poly = P.polyder(poly, deriv, axis=2) / self.h**deriv
        vals = np.zeros((t.size, 3))
        for p in range(poly.shape[2] - 1, -1, -1):
            vals = vals * t[:, None] + poly[:, :, p]
        return self.slot_fun[m], vals

    def matrix(self, x, deriv=0):
        """Sparse ``N x n_fun`` matrix of (derivative) basis values."""
        idx, vals = self.slots(x, deriv)
        n = idx.shape[0]
        rows = np.repeat(np.arange(n), 3)
        return sp.csr_matrix((vals.ravel(), (rows, idx.ravel())), shape=(n, self.n_fun))


def build_basis_1d(n_fun, interval):
    """Neumann-constrained quadratic B-spline basis with ``n_fun`` functions."""
    if int(n_fun) != n_fun or n_fun < 2:
        raise InvalidBasisError(f"need at least 2 basis functions, got {n_fun}")
    A, B = (float(v) for v in interval)
    if not (np.isfinite(A) and np.isfinite(B) and B > A):
        raise InvalidBasisError(f"bad interval {interval}")
    n = int(n_fun)
    m = np.arange(n)
    # spline m+1 rises, spline m peaks, spline m-1 falls on span m;
    # exterior splines -1 and n fold onto 0 and n-1
    fun = np.column_stack([np.minimum(m + 1, n - 1), m, np.maximum(m - 1, 0)])
    poly = np.broadcast_to(np.stack([_RISE, _MID, _FALL]), (n, 3, 3)).copy()
    return Basis1D(n, A, B, np.linspace(A, B, n + 1), fun, poly)


def _constant_basis_1d(interval):
    A, B = (float(v) for v in interval)
    fun = np.zeros((1, 3), np.int64)
    poly = np.zeros((1, 3, 3))
    poly[0, 0, 0] = 1.0
    return Basis1D(1, A, B, np.array([A, B]), fun, poly)


def gram_matrices(basis):
    """Exact ``(M0, M1, M2)`` with ``Mn[i, j] = <d^n g_i, d^n g_j>`` on ``[A, B]``."""
    h = basis.h
    out = []
    for d in range(3):
        M = np.zeros((basis.n_fun, basis.n_fun))
        for m in range(basis.n_spans):
            polys = [P.polyder(basis.slot_poly[m, a], d) for a in range(3)]
            for a in range(3):
                for b in range(3):
                    prod = P.polyint(P.polymul(polys[a], polys[b]))
                    M[basis.slot_fun[m, a], basis.slot_fun[m, b]] += P.polyval(1.0, prod) * h ** (1 - 2 * d)
        out.append(0.5 * (M + M.T))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Basis2D:
    """Tensor-product basis ``f_ij(x, y) = g_i(x) h_j(y)``."""

    bx: Basis1D
    by: Basis1D

    @property
    def k(self):
        return self.bx.n_fun

    @property
    def l(self):  # noqa: E743
        return self.by.n_fun

    @property
    def size(self):
        return self.k * self.l

    @property
    def extents(self):
        return (self.bx.A, self.bx.B, self.by.A, self.by.B)

    @property
    def is_constant(self):
        return self.size == 1

    def design(self, points):
        """Sparse ``N x (k l)`` matrix with rows ``g(x_n) kron h(y_n)``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ix, vx = self.bx.slots(pts[:, 0])
        iy, vy = self.by.slots(pts[:, 1])
        n = pts.shape[0]
        cols = (ix[:, :, None] * self.l + iy[:, None, :]).reshape(n, 9)
        vals = (vx[:, :, None] * vy[:, None, :]).reshape(n, 9)
        rows = np.repeat(np.arange(n), 9)
        D = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(n, self.size))
        D.sum_duplicates()
        return D


def build_basis_2d(k, l, extents):  # noqa: E741
    """``k`` functions along x and ``l`` along y on ``(x_min, x_max, y_min, y_max)``."""
    x0, x1, y0, y1 = extents
    return Basis2D(build_basis_1d(k, (x0, x1)), build_basis_1d(l, (y0, y1)))


def constant_basis_2d(extents):
    """Single constant function; used for stationary fields."""
    x0, x1, y0, y1 = extents
    return Basis2D(_constant_basis_1d((x0, x1)), _constant_basis_1d((y0, y1)))


def eval_field(basis, coeffs, points):
    """Evaluate ``sum_ij alpha_ij g_i(x) h_j(y)`` at ``points``."""
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if coeffs.size != basis.size:
        raise ValueError(f"expected {basis.size} coefficients, got {coeffs.size}")
    return basis.design(points) @ coeffs


def rw2_precision(basis):
    """Second-order random-walk penalty ``G2 x H0 + 2 G1 x H1 + G0 x H2``.

    The result is symmetric positive semidefinite with the constant vector
    as its only null direction, and ``a' Q a`` equals the integral of the
    squared Laplacian of the field with coefficients ``a``.
    """
    G0, G1, G2 = gram_matrices(basis.bx)
    H0, H1, H2 = gram_matrices(basis.by)
    Q = np.kron(G2, H0) + 2.0 * np.kron(G1, H1) + np.kron(G0, H2)
    return 0.5 * (Q + Q.T)
