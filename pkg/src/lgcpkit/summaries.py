"""Second-order summaries (Ripley's K, Besag's L) and simulation envelopes.

Edge effects are handled with Ripley's isotropic correction for
rectangular windows: each ordered pair (i, j) is weighted by the inverse of
the fraction of the circle around point i, of radius d_ij, that lies inside
the rectangle.  Cell masks are ignored by the correction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientDataError, ParameterError, ReplicateError
from .parallel import parallel_map
from .pattern import GridSpec, PointPattern, Window

KINDS = ("K", "L", "L_inhom", "K_inhom")
DEFAULT_N_R = 512


@dataclass(frozen=True, eq=False)
class SummaryFunction:
    r: np.ndarray
    value: np.ndarray
    kind: str

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        v = np.asarray(self.value, dtype=float)
        if r.shape != v.shape or r.ndim != 1:
            raise ParameterError("r and value must be vectors of equal length")
        if r.size and (r[0] != 0 or np.any(np.diff(r) <= 0)):
            raise ParameterError("r must start at 0 and increase strictly")
        if self.kind not in KINDS:
            raise ParameterError(f"unknown summary kind {self.kind!r}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "value", v)

    def at(self, r: float) -> float:
        """Value at the grid point nearest to ``r``."""
        return float(self.value[int(np.argmin(np.abs(self.r - r)))])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["r", "value"])
            for r, v in zip(self.r, self.value):
                out.writerow([repr(float(r)), repr(float(v))])


@dataclass(frozen=True, eq=False)
class EnvelopeBand:
    r: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    n_sim: int
    kind: str = "L"

    def contains(self, fn: SummaryFunction, tol: float = 0.0) -> np.ndarray:
        """Pointwise membership of ``fn`` in the band."""
        if fn.r.shape != self.r.shape or not np.allclose(fn.r, self.r):
            raise ParameterError("summary function and band use different r grids")
        return (fn.value >= self.lower - tol) & (fn.value <= self.upper + tol)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["r", "lower", "mean", "upper"])
            for row in zip(self.r, self.lower, self.mean, self.upper):
                out.writerow([repr(float(v)) for v in row])


def r_grid(window: Window, r_max: float | None = None, n_r: int = DEFAULT_N_R) -> np.ndarray:
    limit = 0.25 * min(window.width, window.height)
    if r_max is None:
        r_max = limit
    if not 0 < r_max <= limit * (1 + 1e-12):
        raise ParameterError(f"r_max must lie in (0, {limit:g}] for this window")
    if n_r < 2:
        raise ParameterError("need at least two r values")
    return np.linspace(0.0, r_max, n_r)


def isotropic_weights(x, y, d, window: Window) -> np.ndarray:
    """Ripley's isotropic edge-correction weight for circles of radius ``d`` at (x, y).

    Valid for ``d`` up to half the shorter window side, where opposite edges
    cannot both cut the circle.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.asarray(d, dtype=float)
    edges = [x - window.x_min, window.x_max - x, y - window.y_min, window.y_max - y]
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = [np.where(b < d, np.arccos(np.clip(b / d, -1.0, 1.0)), 0.0) for b in edges]
    outside = 2.0 * sum(alpha)
    # arcs beyond two adjacent edges overlap once the corner is inside the circle
    for a, b in ((0, 2), (0, 3), (1, 2), (1, 3)):
        outside = outside - np.maximum(alpha[a] + alpha[b] - np.pi / 2, 0.0)
    return 1.0 / (1.0 - outside / (2 * np.pi))


def _ordered_pairs(pattern: PointPattern, r_max: float):
    tree = cKDTree(pattern.xy)
    pairs = tree.query_pairs(r_max, output_type="ndarray")
    if pairs.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    d = np.hypot(pattern.x[i] - pattern.x[j], pattern.y[i] - pattern.y[j])
    return i, j, d


def _cumulative(r, d, w):
    order = np.argsort(d, kind="stable")
    cs = np.concatenate([[0.0], np.cumsum(w[order])])
    return cs[np.searchsorted(d[order], r, side="right")]


def k_function(pattern: PointPattern, r_max: float | None = None,
               n_r: int = DEFAULT_N_R) -> SummaryFunction:
    if pattern.n < 2:
        raise InsufficientDataError("K-function needs at least 2 points")
    w = pattern.window
    r = r_grid(w, r_max, n_r)
    i, j, d = _ordered_pairs(pattern, r[-1])
    e = isotropic_weights(pattern.x[i], pattern.y[i], d, w)
    n = pattern.n
    k = w.area / (n * (n - 1)) * _cumulative(r, d, e)
    return SummaryFunction(r, k, "K")


def l_function(pattern: PointPattern, r_max: float | None = None,
               n_r: int = DEFAULT_N_R) -> SummaryFunction:
    k = k_function(pattern, r_max, n_r)
    return SummaryFunction(k.r, np.sqrt(k.value / np.pi), "L")


def _intensity_at(pattern: PointPattern, intensity, grid: GridSpec | None):
    if callable(intensity) and not isinstance(intensity, np.ndarray):
        return np.asarray(intensity(pattern.x, pattern.y), dtype=float)
    values = np.asarray(getattr(intensity, "values", intensity), dtype=float).ravel()
    grid = grid or getattr(intensity, "grid", None)
    if grid is None:
        raise ParameterError("a per-cell intensity needs its GridSpec")
    if values.size != grid.n_cells:
        raise ParameterError("intensity grid does not match its GridSpec")
    return values[grid.cell_index(pattern.x, pattern.y)]


def l_inhom(pattern: PointPattern, intensity, grid: GridSpec | None = None,
            r_max: float | None = None, n_r: int = DEFAULT_N_R,
            normalise: bool = True) -> SummaryFunction:
    """Inhomogeneous L-function with pair weights 1/(lambda_i lambda_j).

    ``intensity`` is a per-cell array (with ``grid``), an object carrying
    ``values`` and ``grid``, or a callable of (x, y).  With ``normalise`` the
    weighted pair sum is scaled by |W| over the sum of 1/(lambda_i lambda_j)
    across all ordered pairs, which makes a constant intensity reproduce
    ``l_function`` exactly; otherwise it is divided by |W| directly.
    """
    if pattern.n < 2:
        raise InsufficientDataError("inhomogeneous K-function needs at least 2 points")
    lam = _intensity_at(pattern, intensity, grid)
    if np.any(~(lam > 0)) or np.any(~np.isfinite(lam)):
        raise ParameterError("intensity must be positive and finite at every point")
    w = pattern.window
    r = r_grid(w, r_max, n_r)
    i, j, d = _ordered_pairs(pattern, r[-1])
    e = isotropic_weights(pattern.x[i], pattern.y[i], d, w) / (lam[i] * lam[j])
    pair_sum = _cumulative(r, d, e)
    if normalise:
        inv = 1.0 / lam
        total = inv.sum() ** 2 - np.sum(inv * inv)
        k = w.area * pair_sum / total
    else:
        k = pair_sum / w.area
    return SummaryFunction(r, np.sqrt(k / np.pi), "L_inhom")


def envelopes(generator, statistic, n_sim: int, seed: int = 0, threads: int = 1) -> EnvelopeBand:
    """Pointwise min/mean/max of ``statistic(generator(seed + i))`` for i < n_sim."""
    if n_sim < 2:
        raise ParameterError("envelopes need at least 2 simulations")

    def one(i):
        try:
            return statistic(generator(seed + i))
        except Exception as exc:
            raise ReplicateError(i, exc) from exc

    fns = parallel_map(one, range(n_sim), threads)
    return band_from(fns)


def band_from(fns) -> EnvelopeBand:
    fns = list(fns)
    r = fns[0].r
    for f in fns[1:]:
        if f.r.shape != r.shape or not np.array_equal(f.r, r):
            raise ParameterError("replicate summaries use different r grids")
    vals = np.array([f.value for f in fns])
    lower = vals.min(axis=0)
    upper = vals.max(axis=0)
    mean = np.clip(vals.mean(axis=0), lower, upper)  # guard against rounding at lower == upper
    return EnvelopeBand(r, lower, upper, mean, len(fns), fns[0].kind)
