"""Synthetic marked patterns with a spatial field shared across three likelihoods.

The generator mirrors the structure of a tree survey with two marks: a
Gaussian mark ``leaf`` and a count mark ``freq``.  On each cell s of the
lattice

    count(s)  ~ Poisson(|s| exp(b01 + f(s) + u(s)))
    leaf_k    = b02 + beta2 f(s_k) + e_k,                 e_k ~ N(0, sd_leaf^2)
    freq_k    ~ Poisson(exp(b03 + beta3 f(s_k) + beta4 leaf_k + w_k))

with f a smooth centred field, u and w iid Gaussian noise, and points
placed uniformly inside their cell.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .pattern import GridSpec, PointPattern, Window
from .simulate import make_rng


@dataclass(frozen=True)
class MarkedSettings:
    n_row: int = 20
    n_col: int = 20
    b01: float = 6.0
    b02: float = 0.5
    b03: float = 0.5
    beta2: float = -1.2
    beta3: float = 1.7
    beta4: float = 1.4
    field_sd: float = 0.5
    sd_u: float = 0.3
    sd_leaf: float = 0.3
    sd_w: float = 0.2

    def to_json(self) -> dict:
        return asdict(self)


def smooth_field(grid: GridSpec, rng, sd: float = 0.5, n_waves: int = 6) -> np.ndarray:
    """Sum of random low-frequency cosines, centred and scaled to standard deviation ``sd``."""
    cx, cy = grid.centers()
    w = grid.window
    u = (cx - w.x_min) / w.width
    v = (cy - w.y_min) / w.height
    f = np.zeros(grid.n_cells)
    for _ in range(n_waves):
        kx, ky = rng.uniform(-1.5, 1.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        f += rng.normal() * np.cos(2 * np.pi * (kx * u + ky * v) + phase)
    f -= f.mean()
    return sd * f / f.std()


def marked_pattern(seed, settings: MarkedSettings = MarkedSettings(),
                   window: Window | None = None) -> tuple[PointPattern, GridSpec, dict]:
    """Simulate one marked pattern; returns (pattern, grid, truth)."""
    s = settings
    rng = make_rng(seed)
    w = window or Window(0.0, 1.0, 0.0, 1.0)
    grid = GridSpec(s.n_row, s.n_col, w)
    f = smooth_field(grid, rng, s.field_sd)
    u = rng.normal(0.0, s.sd_u, grid.n_cells)
    counts = rng.poisson(grid.cell_area * np.exp(s.b01 + f + u))
    cell = np.repeat(np.arange(grid.n_cells), counts)
    n = cell.size
    row, col = np.divmod(cell, grid.n_col)
    x = w.x_min + (col + rng.random(n)) * grid.dx
    y = w.y_min + (row + rng.random(n)) * grid.dy
    leaf = s.b02 + s.beta2 * f[cell] + rng.normal(0.0, s.sd_leaf, n)
    wk = rng.normal(0.0, s.sd_w, n)
    freq = rng.poisson(np.exp(s.b03 + s.beta3 * f[cell] + s.beta4 * leaf + wk)).astype(float)
    pattern = PointPattern(x, y, w, marks={"leaf": leaf, "freq": freq})
    truth = dict(settings.to_json(), field=f, u=u)
    return pattern, grid, truth
