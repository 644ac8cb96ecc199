"""Point process simulators: Poisson, Thomas cluster and Strauss processes.

All generators take an integer seed (or a ready ``numpy.random.Generator``)
and draw from a Philox counter-based stream, so a seed fully determines the
output pattern.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np

from .errors import DimensionError, ParameterError
from .pattern import GridSpec, PointPattern, Window


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class LinearTrend:
    """Intensity ``a * x + b`` (x is the first coordinate)."""

    a: float
    b: float = 0.0

    def __call__(self, x, y):
        return self.a * np.asarray(x, dtype=float) + self.b + 0.0 * np.asarray(y, dtype=float)

    def supremum(self, window: Window) -> float:
        return float(max(self.a * window.x_min + self.b, self.a * window.x_max + self.b, 0.0))

    def infimum(self, window: Window) -> float:
        return float(min(self.a * window.x_min + self.b, self.a * window.x_max + self.b))

    def integral(self, window: Window) -> float:
        w = window
        return float(w.height * (0.5 * self.a * (w.x_max**2 - w.x_min**2) + self.b * w.width))


@dataclass(frozen=True, eq=False)
class GridIntensity:
    """Piecewise-constant intensity, one value per grid cell."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.n_cells:
            raise DimensionError("intensity grid does not match its GridSpec")
        object.__setattr__(self, "values", v)

    def __call__(self, x, y):
        return self.values[self.grid.cell_index(x, y)]

    def supremum(self, window: Window) -> float:
        return float(max(self.values.max(), 0.0))

    def infimum(self, window: Window) -> float:
        return float(self.values.min())

    def integral(self, window: Window) -> float:
        return float(self.values.sum() * self.grid.cell_area)


@dataclass(frozen=True)
class StraussParams:
    beta: float
    gamma: float
    r: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError("Strauss beta must be positive")
        if not 0 <= self.gamma <= 1:
            raise ParameterError("Strauss gamma must lie in [0, 1]")
        if not self.r > 0:
            raise ParameterError("Strauss interaction radius must be positive")


@dataclass(frozen=True)
class ThomasParams:
    kappa: object  # float or trend
    sigma: float
    mu: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError("Thomas sigma must be positive")
        if not self.mu > 0:
            raise ParameterError("Thomas mu must be positive")
        if isinstance(self.kappa, (int, float)) and not self.kappa > 0:
            raise ParameterError("Thomas kappa must be positive")


def _uniform(rng, n, window: Window):
    x = window.x_min + window.width * rng.random(n)
    y = window.y_min + window.height * rng.random(n)
    return x, y


def _poisson_xy(intensity, window: Window, rng, check: Window | None = None):
    if isinstance(intensity, (int, float, np.floating, np.integer)):
        lam = float(intensity)
        if lam < 0:
            raise ParameterError("intensity must be nonnegative")
        n = rng.poisson(lam * window.area)
        return _uniform(rng, n, window)
    check = check or window
    if intensity.infimum(check) < 0:
        raise ParameterError("intensity is negative somewhere in the window")
    sup = intensity.supremum(window)
    n = rng.poisson(sup * window.area)
    x, y = _uniform(rng, n, window)
    if n == 0:
        return x, y
    lam = np.maximum(intensity(x, y), 0.0)
    keep = rng.random(n) * sup < lam
    return x[keep], y[keep]


def sim_poisson(intensity, window: Window, seed) -> PointPattern:
    """Homogeneous (constant ``intensity``) or thinned inhomogeneous Poisson process."""
    rng = make_rng(seed)
    x, y = _poisson_xy(intensity, window, rng)
    return PointPattern(x, y, window)


def sim_thomas(params: ThomasParams, window: Window, seed) -> PointPattern:
    """Thomas process; parents live on the window dilated by 4 sigma."""
    rng = make_rng(seed)
    outer = window.dilate(4 * params.sigma)
    px, py = _poisson_xy(params.kappa, outer, rng, check=window)
    n_off = rng.poisson(params.mu, size=px.size)
    total = int(n_off.sum())
    ox = np.repeat(px, n_off) + params.sigma * rng.standard_normal(total)
    oy = np.repeat(py, n_off) + params.sigma * rng.standard_normal(total)
    keep = window.contains(ox, oy)
    return PointPattern(ox[keep], oy[keep], window)


@numba.njit(cache=True)
def _strauss_chain(u, beta, gamma, r, x0, x1, y0, y1, cap, n_max):
    area = (x1 - x0) * (y1 - y0)
    w = x1 - x0
    h = y1 - y0
    r2 = r * r
    xs = np.empty(cap)
    ys = np.empty(cap)
    n = 0
    pb = 0.35
    pd = 0.35
    for s in range(u.shape[0]):
        kind = u[s, 0]
        if kind < pb:
            if n >= cap or n >= n_max:
                continue
            nx = x0 + w * u[s, 1]
            ny = y0 + h * u[s, 2]
            t = 0
            for k in range(n):
                dx = xs[k] - nx
                dy = ys[k] - ny
                if dx * dx + dy * dy <= r2:
                    t += 1
            ratio = beta * area * gamma**t * pd / ((n + 1) * pb)
            if u[s, 3] < ratio:
                xs[n] = nx
                ys[n] = ny
                n += 1
        elif kind < pb + pd:
            if n == 0:
                continue
            i = min(int(u[s, 1] * n), n - 1)
            t = 0
            for k in range(n):
                if k != i:
                    dx = xs[k] - xs[i]
                    dy = ys[k] - ys[i]
                    if dx * dx + dy * dy <= r2:
                        t += 1
            dens = beta * area * gamma**t * pd
            if dens == 0.0 or u[s, 3] < n * pb / dens:
                xs[i] = xs[n - 1]
                ys[i] = ys[n - 1]
                n -= 1
        else:
            if n == 0:
                continue
            i = min(int(u[s, 1] * n), n - 1)
            nx = x0 + w * u[s, 2]
            ny = y0 + h * u[s, 4]
            t_old = 0
            t_new = 0
            for k in range(n):
                if k == i:
                    continue
                dx = xs[k] - xs[i]
                dy = ys[k] - ys[i]
                if dx * dx + dy * dy <= r2:
                    t_old += 1
                dx = xs[k] - nx
                dy = ys[k] - ny
                if dx * dx + dy * dy <= r2:
                    t_new += 1
            if t_new <= t_old:
                accept = True
            else:
                accept = u[s, 3] < gamma ** (t_new - t_old)
            if accept:
                xs[i] = nx
                ys[i] = ny
    return xs[:n].copy(), ys[:n].copy()


def strauss_steps(params: StraussParams, window: Window, n_sweeps: int = 100) -> int:
    return int(n_sweeps * max(1.0, params.beta * window.area))


def sim_strauss(params: StraussParams, window: Window, seed, n_sweeps: int = 100,
                n_max: int | None = None) -> PointPattern:
    """Birth-death-move Metropolis-Hastings sampler started from the empty pattern.

    Runs ``n_sweeps`` times the Poisson-equivalent point count in steps and
    returns the final state; no samples are kept along the way.  ``n_max`` caps
    the number of points (used to make tiny state spaces enumerable).
    """
    rng = make_rng(seed)
    steps = strauss_steps(params, window, n_sweeps)
    u = rng.random((steps, 5))
    cap = n_max if n_max is not None else int(10 * params.beta * window.area + 1000)
    x, y = _strauss_chain(u, float(params.beta), float(params.gamma), float(params.r),
                          window.x_min, window.x_max, window.y_min, window.y_max,
                          cap, cap if n_max is None else int(n_max))
    return PointPattern(x, y, window)


def superimpose(a: PointPattern, b: PointPattern) -> PointPattern:
    if a.window != b.window:
        raise DimensionError("cannot superimpose patterns on different windows")
    marks = {}
    if set(a.marks) == set(b.marks):
        marks = {k: np.concatenate([a.marks[k], b.marks[k]]) for k in a.marks}
    return PointPattern(np.concatenate([a.x, b.x]), np.concatenate([a.y, b.y]), a.window, marks)


def close_pairs(pattern: PointPattern, r: float) -> int:
    """Number of unordered point pairs at distance <= r."""
    if pattern.n < 2:
        return 0
    from scipy.spatial import cKDTree

    return int(cKDTree(pattern.xy).count_neighbors(cKDTree(pattern.xy), r) - pattern.n) // 2


def provenance(kind: str, params, seed, **settings) -> dict:
    p = params
    if hasattr(params, "__dataclass_fields__"):
        p = {k: (v if isinstance(v, (int, float, str)) else repr(v)) for k, v in asdict(params).items()}
    return dict(generator=kind, params=p, seed=int(seed), rng="numpy Philox", settings=settings)
