"""Compiled kernels: elimination tree, symbolic and numeric Cholesky,
triangular solves and the Takahashi recursion.

All matrices are in compressed-column form. The factor ``L`` stores each
column with its diagonal entry first and the remaining row indices in
increasing order.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def etree(n, Up, Ui):
    """Elimination tree from the upper triangle (rows i < k in column k)."""
    parent = np.full(n, -1, np.int64)
    ancestor = np.full(n, -1, np.int64)
    for k in range(n):
        for p in range(Up[k], Up[k + 1]):
            i = Ui[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _ereach(k, Up, Ui, parent, stack, flag, stamp):
    # pattern of row k of L, returned in s[top:n] in topological order
    n = parent.shape[0]
    top = n
    flag[k] = stamp
    for p in range(Up[k], Up[k + 1]):
        i = Ui[p]
        if i > k:
            continue
        length = 0
        while flag[i] != stamp:
            stack[length] = i
            length += 1
            flag[i] = stamp
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            stack[top] = stack[length]
    return top


@njit(cache=True)
def symbolic(n, Up, Ui, parent):
    """Column pointers and sorted row indices of L (diagonal first)."""
    counts = np.ones(n, np.int64)
    stack = np.empty(n, np.int64)
    flag = np.zeros(n, np.int64)
    for k in range(n):
        top = _ereach(k, Up, Ui, parent, stack, flag, k + 1)
        for t in range(top, n):
            counts[stack[t]] += 1
    Lp = np.zeros(n + 1, np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    Li = np.empty(Lp[n], np.int64)
    c = np.empty(n, np.int64)
    for j in range(n):
        Li[Lp[j]] = j
        c[j] = Lp[j] + 1
    flag[:] = 0
    for k in range(n):
        top = _ereach(k, Up, Ui, parent, stack, flag, k + 1)
        for t in range(top, n):
            i = stack[t]
            Li[c[i]] = k
            c[i] += 1
    return Lp, Li


@njit(cache=True)
def scatter_upper(n, Sp, Si, Cp, Ci, Cx):
    """Values of C (upper CSC) placed on the symbolic upper pattern (Sp, Si).

    Returns (values, status); status is -1 on success or the column where an
    entry of C has no slot in the symbolic pattern.
    """
    Sx = np.zeros(Sp[n], np.float64)
    for k in range(n):
        q = Sp[k]
        qend = Sp[k + 1]
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while q < qend and Si[q] < i:
                q += 1
            if q == qend or Si[q] != i:
                return Sx, k
            Sx[q] += Cx[p]
    return Sx, -1


@njit(cache=True)
def numeric(n, Sp, Si, Sx, parent, Lp, Li):
    """Up-looking Cholesky on a precomputed pattern.

    Returns (Lx, status); status is -1 on success or the failing pivot.
    """
    Lx = np.zeros(Lp[n], np.float64)
    x = np.zeros(n, np.float64)
    c = np.empty(n, np.int64)
    stack = np.empty(n, np.int64)
    flag = np.zeros(n, np.int64)
    for k in range(n):
        c[k] = Lp[k] + 1
    for k in range(n):
        top = _ereach(k, Sp, Si, parent, stack, flag, k + 1)
        x[k] = 0.0
        for p in range(Sp[k], Sp[k + 1]):
            i = Si[p]
            if i <= k:
                x[i] = Sx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = stack[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Lx[p] = lki
        if not d > 0.0:
            return Lx, k
        Lx[Lp[k]] = np.sqrt(d)
    return Lx, -1


@njit(cache=True)
def lsolve(n, Lp, Li, Lx, x):
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj


@njit(cache=True)
def ltsolve(n, Lp, Li, Lx, x):
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s / Lx[Lp[j]]


@njit(cache=True)
def solve_columns(n, Lp, Li, Lx, B):
    # B is (n, m) in permuted order; overwritten with the solution
    m = B.shape[1]
    col = np.empty(n, np.float64)
    for r in range(m):
        for i in range(n):
            col[i] = B[i, r]
        lsolve(n, Lp, Li, Lx, col)
        ltsolve(n, Lp, Li, Lx, col)
        for i in range(n):
            B[i, r] = col[i]


@njit(cache=True)
def ltsolve_columns(n, Lp, Li, Lx, B):
    m = B.shape[1]
    col = np.empty(n, np.float64)
    for r in range(m):
        for i in range(n):
            col[i] = B[i, r]
        ltsolve(n, Lp, Li, Lx, col)
        for i in range(n):
            B[i, r] = col[i]


@njit(cache=True)
def _find(Li, start, stop, row):
    lo = start
    hi = stop
    while lo < hi:
        mid = (lo + hi) // 2
        if Li[mid] < row:
            lo = mid + 1
        else:
            hi = mid
    if lo < stop and Li[lo] == row:
        return lo
    return -1


@njit(cache=True)
def supernodes(n, Lp, parent):
    """Start columns of fundamental-style supernodes (plus ``n`` as sentinel).

    Columns ``j`` and ``j + 1`` share a supernode when ``j + 1`` is the parent
    of ``j`` and the pattern of ``j`` below the diagonal is ``{j + 1}`` plus the
    pattern of ``j + 1``.
    """
    out = np.empty(n + 1, np.int64)
    m = 0
    for j in range(n):
        if j == 0 or not (parent[j - 1] == j and Lp[j] - Lp[j - 1] == Lp[j + 1] - Lp[j] + 1):
            out[m] = j
            m += 1
    out[m] = n
    return out[: m + 1].copy()


@njit(cache=True)
def takahashi(n, Lp, Li, Lx, parent):
    """Entries of (L L')^{-1} on the pattern of L.

    Supernodal form of the Takahashi recursions. For a supernode with
    diagonal block D and below-diagonal rows B::

        Z_BD = -Z_BB X,  X = L_BD L_DD^{-1}
        Z_DD = L_DD^{-T} L_DD^{-1} - X' Z_BD

    with Z_BB gathered from columns already processed.
    """
    Z = np.zeros(Lp[n], np.float64)
    slot = np.full(n, -1, np.int64)
    sn = supernodes(n, Lp, parent)
    for si in range(sn.size - 2, -1, -1):
        s = sn[si]
        e = sn[si + 1] - 1
        w = e - s + 1
        pB = Lp[e] + 1
        b = Lp[e + 1] - pB
        LDD = np.zeros((w, w))
        LBD = np.empty((b, w))
        for c in range(w):
            base = Lp[s + c]
            for r in range(c, w):
                LDD[r, c] = Lx[base + r - c]
            off = base + w - c
            for a in range(b):
                LBD[a, c] = Lx[off + a]
        # inverse of the lower-triangular diagonal block
        Linv = np.zeros((w, w))
        for c in range(w):
            Linv[c, c] = 1.0 / LDD[c, c]
            for r in range(c + 1, w):
                acc = 0.0
                for t in range(c, r):
                    acc += LDD[r, t] * Linv[t, c]
                Linv[r, c] = -acc / LDD[r, r]
        ZDD = np.dot(np.ascontiguousarray(Linv.T), Linv)
        if b > 0:
            X = np.dot(LBD, Linv)
            for a in range(b):
                slot[Li[pB + a]] = a
            ZBB = np.empty((b, b))
            for a in range(b):
                r = Li[pB + a]
                q0 = Lp[r]
                ZBB[a, a] = Z[q0]
                for q in range(q0 + 1, Lp[r + 1]):
                    t = slot[Li[q]]
                    if t >= 0:
                        ZBB[t, a] = Z[q]
                        ZBB[a, t] = Z[q]
            for a in range(b):
                slot[Li[pB + a]] = -1
            ZBD = -np.dot(ZBB, X)
            ZDD -= np.dot(np.ascontiguousarray(X.T), ZBD)
            for c in range(w):
                off = Lp[s + c] + w - c
                for a in range(b):
                    Z[off + a] = ZBD[a, c]
        for c in range(w):
            base = Lp[s + c]
            for r in range(c, w):
                Z[base + r - c] = ZDD[r, c]
    return Z


@njit(cache=True)
def locate(Lp, Li, pinv, rows, cols):
    """Positions in the factor pattern of original-index pairs (-1 if absent)."""
    m = rows.shape[0]
    out = np.empty(m, np.int64)
    for t in range(m):
        a = pinv[rows[t]]
        b = pinv[cols[t]]
        if a < b:
            a, b = b, a
        if a == b:
            out[t] = Lp[b]
        else:
            out[t] = _find(Li, Lp[b] + 1, Lp[b + 1], a)
    return out
