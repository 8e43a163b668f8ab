"""Regular rectangular grid over a planar domain.

Cells are stacked column-wise with the y index running fastest: cell
``(i, j)`` (row ``i`` along y, column ``j`` along x) has flat index
``j * n_y + i``. Every Kronecker product elsewhere in the package assumes
this ordering.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidGridError, OutOfDomainError

__all__ = ["Grid", "build_grid", "locate_cell", "selection_matrix"]


@dataclass(frozen=True)
class Grid:
    """Uniform ``n_x`` by ``n_y`` cell grid of ``[x_min, x_max] x [y_min, y_max]``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    n_x: int
    n_y: int

    def __post_init__(self):
        ext = (self.x_min, self.x_max, self.y_min, self.y_max)
        if not all(np.isfinite(ext)):
            raise InvalidGridError("grid extents must be finite")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise InvalidGridError(f"degenerate extents {ext}")
        if int(self.n_x) != self.n_x or int(self.n_y) != self.n_y:
            raise InvalidGridError("cell counts must be integers")
        if self.n_x < 3 or self.n_y < 3:
            raise InvalidGridError(f"need at least 3 cells per axis, got {self.n_x}x{self.n_y}")

    @property
    def h_x(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def h_y(self) -> float:
        return (self.y_max - self.y_min) / self.n_y

    @property
    def V(self) -> float:
        return self.h_x * self.h_y

    @property
    def n_cells(self) -> int:
        return self.n_x * self.n_y

    @property
    def extents(self):
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def flat(self, i, j):
        """Flat index of cell ``(i, j)``."""
        return np.asarray(j) * self.n_y + np.asarray(i)

    def unflat(self, k):
        """``(i, j)`` of flat index ``k``."""
        k = np.asarray(k)
        return k % self.n_y, k // self.n_y

    def centers(self):
        """Cell centres as an ``(n_cells, 2)`` array in flat order."""
        xc = self.x_min + (np.arange(self.n_x) + 0.5) * self.h_x
        yc = self.y_min + (np.arange(self.n_y) + 0.5) * self.h_y
        X, Y = np.meshgrid(xc, yc)  # shape (n_y, n_x); column-major flatten gives j*n_y+i
        return np.column_stack([X.ravel(order="F"), Y.ravel(order="F")])

    def contains(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (p[:, 0] >= self.x_min)
            & (p[:, 0] <= self.x_max)
            & (p[:, 1] >= self.y_min)
            & (p[:, 1] <= self.y_max)
        )


def build_grid(extents, n_x, n_y):
    """Build a :class:`Grid` from ``(x_min, x_max, y_min, y_max)`` and cell counts.

    Examples
    --------
    >>> g = build_grid([0, 1, 0, 1], 4, 4)
    >>> g.h_x, g.V
    (0.25, 0.0625)
    """
    if len(extents) != 4:
        raise InvalidGridError("extents must be (x_min, x_max, y_min, y_max)")
    x0, x1, y0, y1 = (float(v) for v in extents)
    return Grid(x0, x1, y0, y1, int(n_x), int(n_y))


def _cell_ij(grid, pts):
    inside = grid.contains(pts)
    if not inside.all():
        raise OutOfDomainError(pts[np.argmin(inside)])
    # points on a shared edge go to the larger index; the max edge maps inward
    j = np.floor((pts[:, 0] - grid.x_min) / grid.h_x).astype(np.int64)
    i = np.floor((pts[:, 1] - grid.y_min) / grid.h_y).astype(np.int64)
    np.clip(j, 0, grid.n_x - 1, out=j)
    np.clip(i, 0, grid.n_y - 1, out=i)
    return i, j


def locate_cell(grid, point):
    """Flat index of the cell containing ``point``.

    Accepts a single ``(x, y)`` pair (returns an int) or an ``(N, 2)`` array
    (returns an integer array).
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    i, j = _cell_ij(grid, np.atleast_2d(pts))
    k = j * grid.n_y + i
    return int(k[0]) if single else k


def selection_matrix(grid, locations):
    """Sparse ``N x n_cells`` 0/1 matrix mapping the latent grid to locations."""
    pts = np.asarray(locations, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    cols = locate_cell(grid, pts) if n else np.zeros(0, np.int64)
    return sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, grid.n_cells))
