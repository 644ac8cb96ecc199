"""Planar point patterns, rectangular observation windows and lattice counts.

Cells are stored row-major: row ``i`` runs upward from ``y_min`` and column
``j`` runs rightward from ``x_min``.  A point lying on an interior cell edge
belongs to the cell with the larger index; points on the right/top edge of
the window belong to the last row/column.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DimensionError, ParseError


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinate ({self.x}, {self.y})")


@dataclass(frozen=True, eq=False)
class Window:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    cell_mask: np.ndarray | None = None

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DimensionError(
                f"degenerate window [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )
        if self.cell_mask is not None:
            mask = np.array(self.cell_mask, dtype=bool)
            if mask.ndim != 2:
                raise DimensionError("cell_mask must be two-dimensional")
            mask.setflags(write=False)
            object.__setattr__(self, "cell_mask", mask)

    @classmethod
    def unit(cls) -> "Window":
        return cls(0.0, 1.0, 0.0, 1.0)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def extent(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    def dilate(self, margin: float) -> "Window":
        return Window(self.x_min - margin, self.x_max + margin,
                      self.y_min - margin, self.y_max + margin)

    def without_mask(self) -> "Window":
        return Window(*self.extent())

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        if self.extent() != other.extent():
            return False
        if (self.cell_mask is None) != (other.cell_mask is None):
            return False
        if self.cell_mask is None:
            return True
        return self.cell_mask.shape == other.cell_mask.shape and bool(
            np.all(self.cell_mask == other.cell_mask))

    def __hash__(self):
        return hash(self.extent())

    def to_json(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}


@dataclass(frozen=True)
class GridSpec:
    n_row: int
    n_col: int
    window: Window

    def __post_init__(self):
        if self.n_row < 1 or self.n_col < 1:
            raise DimensionError(f"grid needs at least one row and column, got {self.n_row}x{self.n_col}")
        mask = self.window.cell_mask
        if mask is not None and mask.shape != (self.n_row, self.n_col):
            raise DimensionError(
                f"cell_mask shape {mask.shape} does not match grid {self.n_row}x{self.n_col}")

    @property
    def n_cells(self) -> int:
        return self.n_row * self.n_col

    @property
    def dx(self) -> float:
        return self.window.width / self.n_col

    @property
    def dy(self) -> float:
        return self.window.height / self.n_row

    @property
    def cell_area(self) -> float:
        return self.window.area / (self.n_row * self.n_col)

    @property
    def inside(self) -> np.ndarray:
        """Flat boolean vector, True for cells inside the (masked) window."""
        if self.window.cell_mask is None:
            return np.ones(self.n_cells, dtype=bool)
        return self.window.cell_mask.ravel().copy()

    def row_col(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        w = self.window
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        # multiply before dividing so that points on k/n boundaries land exactly on k
        j = np.floor((x - w.x_min) * self.n_col / w.width).astype(np.int64)
        i = np.floor((y - w.y_min) * self.n_row / w.height).astype(np.int64)
        return np.clip(i, 0, self.n_row - 1), np.clip(j, 0, self.n_col - 1)

    def cell_index(self, x, y) -> np.ndarray:
        i, j = self.row_col(x, y)
        return i * self.n_col + j

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat row-major arrays of cell-centre coordinates."""
        w = self.window
        cx = w.x_min + (np.arange(self.n_col) + 0.5) * self.dx
        cy = w.y_min + (np.arange(self.n_row) + 0.5) * self.dy
        gx, gy = np.meshgrid(cx, cy)
        return gx.ravel(), gy.ravel()


def cell_center(grid: GridSpec, i: int, j: int) -> Point:
    if not (0 <= i < grid.n_row and 0 <= j < grid.n_col):
        raise IndexError(f"cell ({i}, {j}) outside {grid.n_row}x{grid.n_col} grid")
    w = grid.window
    return Point(w.x_min + (j + 0.5) * grid.dx, w.y_min + (i + 0.5) * grid.dy)


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Immutable point pattern with optional per-point mark columns."""

    x: np.ndarray
    y: np.ndarray
    window: Window
    marks: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise DimensionError("x and y must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("point coordinates must be finite")
        if not np.all(self.window.contains(x, y)):
            raise ValueError("all points must lie inside the window")
        marks = {}
        for name, values in dict(self.marks).items():
            v = np.array(values).ravel()
            if v.shape != x.shape:
                raise DimensionError(f"mark column {name!r} has {v.size} values for {x.size} points")
            v.setflags(write=False)
            marks[name] = v
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "marks", marks)

    @classmethod
    def empty(cls, window: Window) -> "PointPattern":
        return cls(np.empty(0), np.empty(0), window)

    @classmethod
    def from_points(cls, points, window: Window, marks=None) -> "PointPattern":
        xy = np.array([(p.x, p.y) for p in points], dtype=float).reshape(-1, 2)
        return cls(xy[:, 0], xy[:, 1], window, marks or {})

    def __len__(self) -> int:
        return self.x.size

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def points(self) -> list[Point]:
        return [Point(float(a), float(b)) for a, b in zip(self.x, self.y)]

    def translate(self, dx: float, dy: float) -> "PointPattern":
        w = self.window
        win = Window(w.x_min + dx, w.x_max + dx, w.y_min + dy, w.y_max + dy, w.cell_mask)
        return PointPattern(self.x + dx, self.y + dy, win, self.marks)


@dataclass(frozen=True, eq=False)
class CountGrid:
    counts: np.ndarray  # flat, row-major
    grid: GridSpec

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64).ravel()
        if c.size != self.grid.n_cells:
            raise DimensionError(f"{c.size} counts for {self.grid.n_cells} cells")
        if np.any(c < 0):
            raise ValueError("counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def as_array(self) -> np.ndarray:
        return self.counts.reshape(self.grid.n_row, self.grid.n_col)

    @property
    def observed(self) -> np.ndarray:
        return self.grid.inside

    def total(self) -> int:
        return int(self.counts[self.observed].sum())


def grid_counts(pattern: PointPattern, grid: GridSpec) -> CountGrid:
    if pattern.window != grid.window:
        raise DimensionError("pattern window differs from grid window")
    idx = grid.cell_index(pattern.x, pattern.y)
    return CountGrid(np.bincount(idx, minlength=grid.n_cells), grid)


def aggregate_counts(counts: CountGrid, factor: int) -> CountGrid:
    """Sum ``factor x factor`` blocks of cells into a coarser grid."""
    g = counts.grid
    if g.n_row % factor or g.n_col % factor:
        raise DimensionError(f"grid {g.n_row}x{g.n_col} not divisible by {factor}")
    a = counts.as_array().reshape(g.n_row // factor, factor, g.n_col // factor, factor)
    coarse = GridSpec(g.n_row // factor, g.n_col // factor, g.window.without_mask())
    return CountGrid(a.sum(axis=(1, 3)).ravel(), coarse)


# ---------------------------------------------------------------- file I/O

def _format_number(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def window_sidecar(path) -> str:
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".window.json"


def read_window(path) -> Window:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return Window(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]), float(d["y_max"]))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"bad window file: {exc}", path=path) from exc


def write_window(window: Window, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(window.to_json(), fh, indent=2)
        fh.write("\n")


def read_mask(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [int(v) for v in row]
            except ValueError as exc:
                raise ParseError(f"mask entries must be 0/1: {exc}", line=lineno, path=path) from exc
            if any(v not in (0, 1) for v in vals):
                raise ParseError("mask entries must be 0/1", line=lineno, path=path)
            rows.append(vals)
    if not rows or len({len(r) for r in rows}) != 1:
        raise ParseError("mask must be a non-empty rectangular 0/1 table", path=path)
    # file rows are listed in storage order (row 0 first)
    return np.array(rows, dtype=bool)


def read_pattern(path, window: Window | None = None) -> PointPattern:
    """Read a pattern CSV (``x,y[,mark...]``).

    The window comes from ``window`` or, failing that, the ``.window.json``
    sidecar next to ``path``.
    """
    if window is None:
        side = window_sidecar(path)
        if not os.path.exists(side):
            raise ParseError("no window given and no sidecar window file found", path=path)
        window = read_window(side)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected header 'x,y'", line=1, path=path) from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "x" or header[1] != "y":
            raise ParseError("header must start with 'x,y'", line=1, path=path)
        mark_names = header[2:]
        if len(set(mark_names)) != len(mark_names) or any(not m for m in mark_names):
            raise ParseError("mark column names must be unique and non-empty", line=1, path=path)
        xs, ys = [], []
        cols = [[] for _ in mark_names]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno, path=path)
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ParseError(f"bad coordinate: {exc}", line=lineno, path=path) from exc
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ParseError("non-finite coordinate", line=lineno, path=path)
            if not bool(window.contains(x, y)):
                raise ParseError(f"point ({x}, {y}) outside window", line=lineno, path=path)
            xs.append(x)
            ys.append(y)
            for c, v in zip(cols, row[2:]):
                c.append(v.strip())
    marks = {}
    for name, raw in zip(mark_names, cols):
        try:
            marks[name] = np.array([int(v) for v in raw], dtype=np.int64)
        except ValueError:
            try:
                marks[name] = np.array([float(v) for v in raw], dtype=float)
            except ValueError as exc:
                raise ParseError(f"mark column {name!r}: {exc}", path=path) from exc
    return PointPattern(np.array(xs), np.array(ys), window, marks)


def write_pattern(pattern: PointPattern, path, sidecar: bool = True) -> None:
    names = list(pattern.marks)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["x", "y", *names]) + "\n")
        for k in range(pattern.n):
            fields = [_format_number(pattern.x[k]), _format_number(pattern.y[k])]
            fields += [_format_number(pattern.marks[m][k]) for m in names]
            fh.write(",".join(fields) + "\n")
    if sidecar:
        write_window(pattern.window, window_sidecar(path))
