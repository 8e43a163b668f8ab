"""Sparse symmetric positive definite linear algebra.

Fill-reducing ordering, symbolic analysis, Cholesky factorization with
log-determinant, solves, sampling, and the partial inverse on the factor
pattern.

Typical use::

    sym = analyze(Q)            # once per sparsity pattern
    fac = factorize(Q, sym)     # once per numerical value
    x = solve(fac, b)
    Z = partial_inverse(fac)    # Q^{-1} on the pattern of L + L'
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import NotPositiveDefiniteError, PatternError
from . import _kernels as K
from ._amd import amd_order

__all__ = [
    "SymbolicPattern",
    "CholeskyFactor",
    "PartialInverse",
    "analyze",
    "factorize",
    "solve",
    "solve_many",
    "sample",
    "partial_inverse",
    "amd_order",
]


@dataclass(frozen=True, eq=False)
class SymbolicPattern:
    """Reusable symbolic factorization of a symmetric pattern.

    Attributes
    ----------
    perm : ndarray
        Elimination order; the factored matrix is ``M[perm][:, perm]``.
    pinv : ndarray
        Inverse permutation.
    parent : ndarray
        Elimination tree of the permuted matrix.
    Up, Ui : ndarray
        Upper-triangular CSC pattern of the permuted matrix.
    Lp, Li : ndarray
        CSC pattern of the factor, diagonal first in each column.
    """

    n: int
    perm: np.ndarray
    pinv: np.ndarray
    parent: np.ndarray
    Up: np.ndarray
    Ui: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray

    @property
    def nnz_factor(self):
        return int(self.Lp[-1])

    def locate(self, rows, cols):
        """Positions of original-index entries in the factor pattern (-1 if absent)."""
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        return K.locate(self.Lp, self.Li, self.pinv, rows, cols)


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """``P M P' = L L'`` with ``L`` lower triangular on ``symbolic``'s pattern."""

    symbolic: SymbolicPattern
    Lx: np.ndarray
    log_det: float

    @property
    def n(self):
        return self.symbolic.n

    def L(self):
        """Factor as a scipy CSC matrix (permuted ordering)."""
        s = self.symbolic
        return sp.csc_matrix((self.Lx, s.Li, s.Lp), shape=(s.n, s.n))


@dataclass(frozen=True, eq=False)
class PartialInverse:
    """Entries of ``M^{-1}`` on the pattern of ``L + L'``.

    ``Zx`` is aligned with the factor pattern of ``symbolic`` (permuted,
    lower triangle); use :meth:`values` or :meth:`to_sparse` to read entries in
    the original ordering.
    """

    symbolic: SymbolicPattern
    Zx: np.ndarray
    _dense_cache: dict = field(default_factory=dict, repr=False)

    def diagonal(self):
        s = self.symbolic
        d = np.empty(s.n)
        d[s.perm] = self.Zx[s.Lp[:-1]]
        return d

    def values(self, rows, cols):
        """``M^{-1}[rows, cols]``; raises if an entry is outside the pattern."""
        pos = self.symbolic.locate(rows, cols)
        if np.any(pos < 0):
            raise PatternError("requested entries lie outside the factor pattern")
        return self.Zx[pos]

    def to_sparse(self):
        """Symmetric CSR matrix in the original ordering."""
        if "csr" not in self._dense_cache:
            s = self.symbolic
            cols = np.repeat(np.arange(s.n), np.diff(s.Lp))
            r = s.perm[s.Li]
            c = s.perm[cols]
            off = r != c
            rows = np.concatenate([r, c[off]])
            colsx = np.concatenate([c, r[off]])
            vals = np.concatenate([self.Zx, self.Zx[off]])
            self._dense_cache["csr"] = sp.csr_matrix((vals, (rows, colsx)), shape=(s.n, s.n))
        return self._dense_cache["csr"]

    def trace_product(self, B):
        """``Tr(M^{-1} B)`` for sparse ``B`` whose pattern lies in ``L + L'``."""
        B = sp.coo_matrix(B)
        return float(np.dot(self.values(B.col, B.row), B.data))


def _permuted_upper(M, perm, pinv):
    M = sp.coo_matrix(M)
    r = pinv[M.row]
    c = pinv[M.col]
    keep = r <= c
    n = M.shape[0]
    C = sp.csc_matrix((M.data[keep], (r[keep], c[keep])), shape=(n, n))
    C.sum_duplicates()
    C.sort_indices()
    return C


def analyze(pattern, ordering="amd", keep_last=0):
    """Symbolic Cholesky analysis of a structurally symmetric pattern.

    Parameters
    ----------
    pattern : sparse matrix
        Only the sparsity structure is used (explicit zeros count).
    ordering : {"amd", "natural"} or array
        Fill-reducing ordering, or an explicit permutation.
    keep_last : int
        Number of trailing indices excluded from reordering and kept last
        (used to place dense fixed-effect blocks at the end).
    """
    P = sp.csr_matrix(pattern, copy=True)
    n, m = P.shape
    if n != m:
        raise PatternError("pattern must be square")
    P.data = np.ones_like(P.data, dtype=np.float64)
    if (P != P.T).nnz:
        raise PatternError("pattern is not structurally symmetric")
    if isinstance(ordering, str):
        head = n - keep_last
        if ordering == "natural":
            perm = np.arange(n, dtype=np.int64)
        elif ordering == "amd":
            perm = np.concatenate([amd_order(P[:head, :head]), np.arange(head, n)])
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
    else:
        perm = np.asarray(ordering, dtype=np.int64)
        if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("ordering is not a permutation")
    perm = perm.astype(np.int64)
    pinv = np.empty(n, np.int64)
    pinv[perm] = np.arange(n)
    # the diagonal is always structurally present
    P = P + sp.identity(n, format="csr")
    U = _permuted_upper(P, perm, pinv)
    Up = U.indptr.astype(np.int64)
    Ui = U.indices.astype(np.int64)
    parent = K.etree(n, Up, Ui)
    Lp, Li = K.symbolic(n, Up, Ui, parent)
    return SymbolicPattern(n, perm, pinv, parent, Up, Ui, Lp, Li)


def factorize(M, sym):
    """Numerical Cholesky factorization of SPD ``M`` on ``sym``'s pattern."""
    n = sym.n
    if M.shape != (n, n):
        raise PatternError("matrix shape does not match the symbolic analysis")
    C = _permuted_upper(M, sym.perm, sym.pinv)
    Sx, bad = K.scatter_upper(
        n, sym.Up, sym.Ui, C.indptr.astype(np.int64), C.indices.astype(np.int64), C.data
    )
    if bad >= 0:
        raise PatternError(f"matrix entry in column {int(sym.perm[bad])} is outside the analyzed pattern")
    Lx, status = K.numeric(n, sym.Up, sym.Ui, Sx, sym.parent, sym.Lp, sym.Li)
    if status >= 0:
        raise NotPositiveDefiniteError(sym.perm[status])
    log_det = 2.0 * float(np.sum(np.log(Lx[sym.Lp[:-1]])))
    return CholeskyFactor(sym, Lx, log_det)


def solve_many(factor, B):
    """Solve ``M X = B`` for a 2-D right-hand side."""
    s = factor.symbolic
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != s.n:
        raise ValueError("right-hand side has the wrong shape")
    W = np.ascontiguousarray(B[s.perm, :])
    K.solve_columns(s.n, s.Lp, s.Li, factor.Lx, W)
    X = np.empty_like(W)
    X[s.perm, :] = W
    return X


def solve(factor, b):
    """Solve ``M x = b``."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 2:
        return solve_many(factor, b)
    return solve_many(factor, b[:, None])[:, 0]


def sample(factor, z):
    """Map standard normal ``z`` to ``u = P' L^{-T} z`` with ``Cov(u) = M^{-1}``.

    ``z`` may be 1-D or have one column per draw.
    """
    s = factor.symbolic
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != s.n:
        raise ValueError(f"expected {s.n} standard normals, got {z.shape[0]}")
    W = np.ascontiguousarray(z.reshape(s.n, -1))
    K.ltsolve_columns(s.n, s.Lp, s.Li, factor.Lx, W)
    U = np.empty_like(W)
    U[s.perm, :] = W
    return U.reshape(z.shape)


def partial_inverse(factor):
    """Takahashi recursions for ``M^{-1}`` on the pattern of ``L + L'``."""
    s = factor.symbolic
    Zx = K.takahashi(s.n, s.Lp, s.Li, factor.Lx, s.parent)
    return PartialInverse(s, Zx)
