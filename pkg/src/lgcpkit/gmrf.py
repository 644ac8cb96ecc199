"""Structure matrices for intrinsic random-walk and i.i.d. Gaussian priors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import DimensionError, ParameterError


@dataclass(frozen=True, eq=False)
class SparseSymMatrix:
    """Symmetric sparse matrix kept as upper-triangle triplets."""

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.int64)
        c = np.asarray(self.cols, dtype=np.int64)
        v = np.asarray(self.values, dtype=float)
        if not (r.shape == c.shape == v.shape):
            raise DimensionError("triplet arrays differ in length")
        if r.size and (r.min() < 0 or c.max() >= self.dim or np.any(r > c)):
            raise DimensionError("triplets must satisfy 0 <= row <= col < dim")
        for a in (r, c, v):
            a.setflags(write=False)
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_scipy(cls, m) -> "SparseSymMatrix":
        up = sp.triu(sp.coo_matrix(m)).tocsr()
        up.sum_duplicates()
        up.eliminate_zeros()
        coo = up.tocoo()
        return cls(m.shape[0], coo.row, coo.col, coo.data)

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def to_scipy(self) -> sp.csc_matrix:
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.values, self.values[off]])
        return sp.csc_matrix((v, (r, c)), shape=(self.dim, self.dim))

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def quad(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ (self.to_scipy() @ v))

    def scaled(self, factor: float) -> "SparseSymMatrix":
        return SparseSymMatrix(self.dim, self.rows, self.cols, self.values * factor)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("row,col,value\n")
            for r, c, v in zip(self.rows, self.cols, self.values):
                fh.write(f"{r},{c},{v:.17g}\n")


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    coefficients: np.ndarray
    target: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=float).ravel()
        if not np.any(a):
            raise ParameterError("constraint coefficients must not all be zero")
        object.__setattr__(self, "coefficients", a)

    @classmethod
    def sum_to_zero(cls, n: int) -> "LinearConstraint":
        return cls(np.ones(n), 0.0)


@dataclass(frozen=True)
class PrecisionPrior:
    """Gamma(shape, rate) prior on a precision, evaluated on the log scale."""

    shape: float = 1.0
    rate: float = 5e-5

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ParameterError("gamma prior needs shape > 0 and rate > 0")

    def logpdf_log(self, log_tau: float) -> float:
        """Density of log(tau), Jacobian included."""
        a, b = self.shape, self.rate
        return float(a * np.log(b) - gammaln(a) + a * log_tau - b * np.exp(log_tau))

    def mode_log(self) -> float:
        return float(np.log(self.shape / self.rate))


def _first_difference(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _second_difference(n: int) -> sp.csr_matrix:
    return sp.diags([np.ones(n - 2), -2 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2],
                    shape=(n - 2, n), format="csr")


def rw1_structure(n: int) -> SparseSymMatrix:
    if n < 2:
        raise DimensionError("RW1 needs at least two nodes")
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    idx = np.arange(n)
    return SparseSymMatrix(n, np.concatenate([idx, idx[:-1]]), np.concatenate([idx, idx[1:]]),
                           np.concatenate([main, -np.ones(n - 1)]))


def rw2_difference_operator(n_row: int, n_col: int) -> sp.csr_matrix:
    """Discrete thin-plate operator on a row-major lattice.

    Stacks second differences along rows, along columns and the mixed
    difference scaled by sqrt(2), so that ||D v||^2 approximates the
    integral of f_xx^2 + 2 f_xy^2 + f_yy^2.  Without the mixed rows the
    bilinear field i*j would also be penalty-free.
    """
    horiz = sp.kron(sp.eye(n_row), _second_difference(n_col))
    vert = sp.kron(_second_difference(n_row), sp.eye(n_col))
    mixed = np.sqrt(2.0) * sp.kron(_first_difference(n_row), _first_difference(n_col))
    return sp.vstack([horiz, vert, mixed]).tocsr()


def rw2_lattice_structure(n_row: int, n_col: int) -> SparseSymMatrix:
    if n_row < 3 or n_col < 3:
        raise DimensionError("RW2 lattice needs at least 3 rows and 3 columns")
    d = rw2_difference_operator(n_row, n_col)
    return SparseSymMatrix.from_scipy(d.T @ d)


def iid_structure(n: int) -> SparseSymMatrix:
    if n < 1:
        raise DimensionError("iid block needs at least one node")
    idx = np.arange(n)
    return SparseSymMatrix(n, idx, idx, np.ones(n))


def assemble_precision(blocks, jitter: float = 0.0) -> SparseSymMatrix:
    """Block-diagonal ``exp(log_precision) * structure`` plus ``jitter * I``."""
    if not blocks:
        raise DimensionError("no blocks to assemble")
    if jitter < 0:
        raise ParameterError("jitter must be nonnegative")
    mats = [np.exp(lp) * s.to_scipy() for s, lp in blocks]
    q = sp.block_diag(mats, format="csc")
    if jitter:
        q = q + jitter * sp.identity(q.shape[0], format="csc")
    return SparseSymMatrix.from_scipy(q)
