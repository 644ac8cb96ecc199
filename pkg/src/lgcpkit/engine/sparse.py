"""Sparse symmetric positive-definite factorization and selected inversion.

Solves and log-determinants use CHOLMOD (through cvxopt).  CHOLMOD's factor
is not exposed entry-wise, so the selected inverse comes from a second
factorization: SuperLU in symmetric mode with diagonal pivoting only, giving
``P H P' = L D L'`` with unit-lower ``L``.  The Takahashi recursion then
yields the entries of ``H^{-1}`` on the filled pattern of ``L``, which
contains every pair of latent indices coupled by ``H``.
"""
from __future__ import annotations

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import IndefiniteError

try:
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix
except ImportError:  # pragma: no cover - SuperLU handles everything then
    _cholmod = None

# fill-reducing orderings keyed by sparsity pattern; H keeps its pattern across theta
_ORDERINGS: dict = {}
_MAX_ORDERINGS = 16


@numba.njit(cache=True)
def _takahashi(indptr, indices, ldata, d):
    n = d.size
    s_val = np.zeros(ldata.size)
    pos = -np.ones(n, np.int64)
    acc = np.zeros(n)
    for j in range(n - 1, -1, -1):
        s = indptr[j] + 1
        e = indptr[j + 1]
        if e > s:
            mx = indices[e - 1]
            for a in range(s, e):
                pos[indices[a]] = a - s
                acc[a - s] = 0.0
            for a in range(s, e):
                i = indices[a]
                lij = ldata[a]
                t1 = a - s
                for b in range(indptr[i], indptr[i + 1]):
                    r = indices[b]
                    if r > mx:
                        break
                    t2 = pos[r]
                    if t2 >= 0:
                        v = s_val[b]
                        if r == i:
                            acc[t1] += lij * v
                        else:
                            acc[t1] += ldata[s + t2] * v
                            acc[t2] += lij * v
            tot = 0.0
            for a in range(s, e):
                s_val[a] = -acc[a - s]
                tot += ldata[a] * s_val[a]
                pos[indices[a]] = -1
            s_val[indptr[j]] = 1.0 / d[j] - tot
        else:
            s_val[indptr[j]] = 1.0 / d[j]
    return s_val


@numba.njit(cache=True)
def _lookup(indptr, indices, s_val, pos, rows, cols, out):
    for t in range(rows.size):
        a = pos[rows[t]]
        b = pos[cols[t]]
        lo = min(a, b)
        hi = max(a, b)
        left = indptr[lo]
        right = indptr[lo + 1] - 1
        found = -1
        while left <= right:
            mid = (left + right) // 2
            if indices[mid] == hi:
                found = mid
                break
            elif indices[mid] < hi:
                left = mid + 1
            else:
                right = mid - 1
        if found < 0:
            return t
        out[t] = s_val[found]
    return -1


class SelectedInverse:
    """Entries of ``H^{-1}`` on the Cholesky fill pattern, in original labels."""

    def __init__(self, indptr, indices, values, perm):
        self._indptr = indptr
        self._indices = indices
        self._values = values
        self._pos = perm  # original index -> factored position

    def diagonal(self) -> np.ndarray:
        return self._values[self._indptr[self._pos]]

    def entries(self, rows, cols) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        out = np.empty(rows.size)
        bad = _lookup(self._indptr, self._indices, self._values, self._pos, rows, cols, out)
        if bad >= 0:
            raise KeyError(f"entry ({rows[bad]}, {cols[bad]}) outside the factor pattern")
        return out


def _pattern_key(h: sp.csc_matrix):
    return (h.shape[0], h.nnz, hash(h.indptr.tobytes()), hash(h.indices.tobytes()))


class _SuperLUFactor:
    def __init__(self, h: sp.csc_matrix):
        key = _pattern_key(h)
        perm = _ORDERINGS.get(key)
        try:
            if perm is None:
                lu = splu(h, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                          options=dict(SymmetricMode=True))
                if len(_ORDERINGS) >= _MAX_ORDERINGS:
                    _ORDERINGS.clear()
                _ORDERINGS[key] = lu.perm_c.copy()
                self.perm = lu.perm_c.astype(np.int64)
            else:
                inv = np.argsort(perm)
                lu = splu(h[inv][:, inv].tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                          options=dict(SymmetricMode=True))
                # position of original index i in the factor
                self.perm = lu.perm_c[perm].astype(np.int64)
        except RuntimeError as exc:
            raise IndefiniteError(f"factorization failed: {exc}") from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise IndefiniteError("factorization pivoted off the diagonal")
        self.lu = lu
        self.d = lu.U.diagonal()
        if not np.all(self.d > 0) or not np.all(np.isfinite(self.d)):
            raise IndefiniteError("matrix is not positive definite")

    def selected_inverse(self) -> SelectedInverse:
        low = self.lu.L.tocsc()
        low.sort_indices()
        indptr = low.indptr.astype(np.int64)
        indices = low.indices.astype(np.int64)
        vals = _takahashi(indptr, indices, low.data, self.d)
        return SelectedInverse(indptr, indices, vals, self.perm)


class SparseCholesky:
    """Factorization of a symmetric positive-definite sparse matrix."""

    def __init__(self, matrix):
        h = sp.csc_matrix(matrix)
        h.sort_indices()
        self.dim = h.shape[0]
        self._h = h
        self._lu = None
        self._factor = None
        if _cholmod is not None and self.dim > 0:
            # upper triangle: dense intercept-like columns become short rows, which
            # keeps cvxopt's per-column insertion cheap
            up = sp.triu(h, format="csc")
            up.sort_indices()
            cols = np.repeat(np.arange(self.dim, dtype=np.int64), np.diff(up.indptr))
            a = _cvx_spmatrix(_cvx_matrix(up.data.astype(float)), _cvx_matrix(up.indices.astype(np.int64), tc="i"),
                              _cvx_matrix(cols, tc="i"), size=h.shape)
            try:
                f = _cholmod.symbolic(a, uplo="U")
                _cholmod.numeric(a, f)
            except ArithmeticError as exc:
                raise IndefiniteError(f"matrix is not positive definite: {exc}") from exc
            d = np.asarray(_cholmod.diag(f)).ravel()
            if not np.all(d > 0) or not np.all(np.isfinite(d)):
                raise IndefiniteError("matrix is not positive definite")
            self._factor = f
            self.logdet = float(2.0 * np.sum(np.log(d)))
        else:
            self._lu = _SuperLUFactor(h)
            self.logdet = float(np.sum(np.log(self._lu.d)))

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self._factor is None:
            return self._lu.lu.solve(b)
        x = _cvx_matrix(np.array(b.reshape(self.dim, -1), dtype=float, order="F"))
        _cholmod.solve(self._factor, x)
        return np.array(x).reshape(b.shape)

    def selected_inverse(self) -> SelectedInverse:
        if self._lu is None:
            self._lu = _SuperLUFactor(self._h)
        return self._lu.selected_inverse()
