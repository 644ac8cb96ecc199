"""Covariate fields on a lattice.

The constructed covariate is the distance from each cell centre to the
nearest pattern point lying *outside* that cell.  It is computed by brute
force over all points, and can be updated in place after a single point
moves (the resampler's hot path).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegenerateCovariateError, DimensionError, ParameterError, ParseError
from .pattern import GridSpec, Point, PointPattern

log = logging.getLogger(__name__)

EDGE_RULES = ("none", "censor")


@numba.njit(cache=True)
def _dist(ax, ay, bx, by):
    dx = ax - bx
    dy = ay - by
    return math.sqrt(dx * dx + dy * dy)


@numba.njit(cache=True)
def _scan_cell(c, cx, cy, px, py, pcell):
    best = np.inf
    arg = -1
    for k in range(px.size):
        if pcell[k] == c:
            continue
        d = _dist(cx[c], cy[c], px[k], py[k])
        if d < best:
            best = d
            arg = k
    return best, arg


@numba.njit(cache=True)
def _nearest_all(cx, cy, px, py, pcell, raw, nearest):
    for c in range(cx.size):
        raw[c], nearest[c] = _scan_cell(c, cx, cy, px, py, pcell)


@numba.njit(cache=True)
def _apply_move(cx, cy, px, py, pcell, raw, nearest, k, changed, old_raw, old_nearest):
    """Update ``raw``/``nearest`` after point ``k`` moved.

    ``px``, ``py``, ``pcell`` already hold the post-move state.  Indices of
    cells whose entry changed are written to ``changed`` together with their
    previous ``raw``/``nearest`` values (so a rejected move can be undone);
    returns the number of changed cells.
    """
    new_cell = pcell[k]
    nx = px[k]
    ny = py[k]
    m = 0
    for c in range(cx.size):
        before = raw[c]
        before_k = nearest[c]
        if nearest[c] == k:
            raw[c], nearest[c] = _scan_cell(c, cx, cy, px, py, pcell)
        elif new_cell != c:
            d = _dist(cx[c], cy[c], nx, ny)
            if d < raw[c]:
                raw[c] = d
                nearest[c] = k
        if raw[c] != before or nearest[c] != before_k:
            changed[m] = c
            old_raw[m] = before
            old_nearest[m] = before_k
            m += 1
    return m


@numba.njit(cache=True)
def _boundary_distance(cx, cy, x0, x1, y0, y1, ox0, ox1, oy0, oy1):
    """Distance from each centre to the rectangle edge or the nearest masked-out cell."""
    out = np.empty(cx.size)
    for c in range(cx.size):
        d = min(cx[c] - x0, x1 - cx[c], cy[c] - y0, y1 - cy[c])
        for q in range(ox0.size):
            ddx = max(ox0[q] - cx[c], 0.0, cx[c] - ox1[q])
            ddy = max(oy0[q] - cy[c], 0.0, cy[c] - oy1[q])
            e = math.sqrt(ddx * ddx + ddy * ddy)
            if e < d:
                d = e
        out[c] = d
    return out


def boundary_distance(grid: GridSpec) -> np.ndarray:
    w = grid.window
    cx, cy = grid.centers()
    outside = np.flatnonzero(~grid.inside)
    j = outside % grid.n_col
    i = outside // grid.n_col
    ox0 = w.x_min + j * grid.dx
    oy0 = w.y_min + i * grid.dy
    return _boundary_distance(cx, cy, w.x_min, w.x_max, w.y_min, w.y_max,
                              ox0, ox0 + grid.dx, oy0, oy0 + grid.dy)


@dataclass(frozen=True, eq=False)
class CovariateField:
    """Per-cell covariate with NaN marking unobserved cells."""

    values: np.ndarray
    grid: GridSpec
    name: str = "z"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.grid.n_cells:
            raise DimensionError(f"{v.size} covariate values for {self.grid.n_cells} cells")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass(frozen=True, eq=False)
class ConstructedCovariate(CovariateField):
    """Nearest-outside-point distance per cell.

    ``raw`` holds the uncensored minimum (``inf`` when no point lies outside
    the cell) and ``nearest`` the index of the achieving point (-1 if none).
    ``values`` applies the edge rule and the window mask on top of ``raw``.
    """

    raw: np.ndarray = None
    nearest: np.ndarray = None
    edge_rule: str = "none"
    name: str = "zc"

    @classmethod
    def from_raw(cls, raw, nearest, grid: GridSpec, edge_rule: str = "none", border=None):
        values = np.where(np.isfinite(raw), raw, np.nan)
        if edge_rule == "censor":
            if border is None:
                border = boundary_distance(grid)
            with np.errstate(invalid="ignore"):
                values[border < raw] = np.nan
        values[~grid.inside] = np.nan
        raw = np.array(raw, dtype=float)
        nearest = np.array(nearest, dtype=np.int64)
        raw.setflags(write=False)
        nearest.setflags(write=False)
        return cls(values, grid, raw=raw, nearest=nearest, edge_rule=edge_rule)


def nearest_point_distance(pattern: PointPattern, grid: GridSpec,
                           edge_rule: str = "none") -> ConstructedCovariate:
    if edge_rule not in EDGE_RULES:
        raise ParameterError(f"edge_rule must be one of {EDGE_RULES}, got {edge_rule!r}")
    if pattern.window != grid.window:
        raise DimensionError("pattern window differs from grid window")
    n = grid.n_cells
    if pattern.n == 0:
        log.warning("empty pattern: constructed covariate is missing everywhere")
        return ConstructedCovariate.from_raw(np.full(n, np.inf), np.full(n, -1), grid, edge_rule)
    cx, cy = grid.centers()
    pcell = grid.cell_index(pattern.x, pattern.y)
    raw = np.empty(n)
    nearest = np.empty(n, dtype=np.int64)
    _nearest_all(cx, cy, pattern.x, pattern.y, pcell, raw, nearest)
    return ConstructedCovariate.from_raw(raw, nearest, grid, edge_rule)


def _locate(pattern: PointPattern, pt: Point) -> int:
    hits = np.flatnonzero((pattern.x == pt.x) & (pattern.y == pt.y))
    if hits.size == 0:
        raise ValueError(f"no point at {pt} in the post-move pattern")
    return int(hits[0])


def update_distance_after_move(cov: ConstructedCovariate, pattern: PointPattern,
                               moved_from: Point, moved_to: Point) -> ConstructedCovariate:
    """Covariate for ``pattern`` (already moved) from the pre-move covariate ``cov``."""
    grid = cov.grid
    if pattern.window != grid.window:
        raise DimensionError("pattern window differs from grid window")
    if moved_from == moved_to:
        return cov
    k = _locate(pattern, moved_to)
    cx, cy = grid.centers()
    pcell = grid.cell_index(pattern.x, pattern.y)
    raw = np.array(cov.raw, dtype=float)
    nearest = np.array(cov.nearest, dtype=np.int64)
    n = grid.n_cells
    _apply_move(cx, cy, pattern.x, pattern.y, pcell, raw, nearest, k,
                np.empty(n, dtype=np.int64), np.empty(n), np.empty(n, dtype=np.int64))
    return ConstructedCovariate.from_raw(raw, nearest, grid, cov.edge_rule)


@dataclass(frozen=True, eq=False)
class BinnedCovariate:
    bin_index: np.ndarray  # -1 marks missing
    bin_midpoints: np.ndarray
    n_bins: int
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.n_bins


def bin_covariate(field: CovariateField, n_bins: int = 25) -> BinnedCovariate:
    """Equal-width bins spanning the observed range; the maximum falls in the last bin."""
    if n_bins < 2:
        raise ParameterError("need at least two bins")
    v = field.values
    obs = ~np.isnan(v)
    if np.unique(v[obs]).size < 2:
        raise DegenerateCovariateError(f"covariate {field.name!r} has fewer than two distinct values")
    lo = float(v[obs].min())
    hi = float(v[obs].max())
    width = (hi - lo) / n_bins
    idx = np.full(v.size, -1, dtype=np.int64)
    idx[obs] = np.minimum(np.floor((v[obs] - lo) / width).astype(np.int64), n_bins - 1)
    mids = lo + (np.arange(n_bins) + 0.5) * width
    return BinnedCovariate(idx, mids, n_bins, lo, hi)


# ---------------------------------------------------------------- file I/O

def read_covariate(path, grid: GridSpec, name: str | None = None) -> CovariateField:
    """Read ``row,col,value`` triples; unlisted cells are missing."""
    values = np.full(grid.n_cells, np.nan)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["row", "col", "value"]:
            raise ParseError("header must be 'row,col,value'", line=1, path=path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j, v = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno, path=path) from exc
            if not (0 <= i < grid.n_row and 0 <= j < grid.n_col):
                raise ParseError(f"cell ({i}, {j}) outside grid", line=lineno, path=path)
            values[i * grid.n_col + j] = v
    return CovariateField(values, grid, name or str(path))


def write_covariate(field: CovariateField, path) -> None:
    g = field.grid
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("row,col,value\n")
        for c in np.flatnonzero(field.observed):
            fh.write(f"{c // g.n_col},{c % g.n_col},{field.values[c]:.17g}\n")


def write_grid_csv(values, grid: GridSpec, path) -> None:
    """Full-grid CSV: ``n_row`` lines of ``n_col`` values, row 0 first; empty field = missing."""
    a = np.asarray(values, dtype=float).reshape(grid.n_row, grid.n_col)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in a:
            fh.write(",".join("" if np.isnan(v) else f"{v:.17g}" for v in row) + "\n")


def read_grid_csv(path, grid: GridSpec) -> np.ndarray:
    """Inverse of :func:`write_grid_csv`; empty fields become NaN."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if len(row) != grid.n_col:
                raise ParseError(f"expected {grid.n_col} fields, got {len(row)}", line=lineno, path=path)
            try:
                rows.append([float(v) if v.strip() else np.nan for v in row])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    if len(rows) != grid.n_row:
        raise ParseError(f"expected {grid.n_row} rows, got {len(rows)}", path=path)
    return np.array(rows).ravel()
