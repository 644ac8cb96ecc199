"""Resimulation of patterns from a fitted model.

A fixed-size Metropolis chain moves one point at a time to a uniform
location in the window.  The per-cell predictor is the frozen baseline
(intercept plus spatial effects at their posterior means) plus a spline
through the posterior mean of the constructed-covariate effect, re-evaluated
at the covariate of the current state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.interpolate import CubicSpline as _ScipySpline

from .covariate import _nearest_all, boundary_distance, nearest_point_distance
from .errors import DimensionError, ParameterError
from .pattern import GridSpec, PointPattern, Window
from .simulate import make_rng


class CubicSpline:
    """Natural cubic spline with flat extrapolation beyond the end knots."""

    def __init__(self, knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape:
            raise ParameterError("knots and values must be vectors of equal length")
        if knots.size < 3:
            raise ParameterError("a cubic spline needs at least 3 knots")
        if not np.all(np.diff(knots) > 0):
            raise ParameterError("spline knots must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ParameterError("spline values must be finite")
        self.knots = knots
        self.values = values
        self._spline = _ScipySpline(knots, values, bc_type="natural")
        self.coefficients = np.ascontiguousarray(self._spline.c)  # (4, m-1)

    @property
    def second_derivatives(self) -> np.ndarray:
        return self._spline(self.knots, 2)

    def __call__(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.knots[0], self.knots[-1])
        return self._spline(x)


def spline_build(knots, values) -> CubicSpline:
    return CubicSpline(knots, values)


@numba.njit(cache=True)
def _spline_eval(knots, coef, z):
    m = knots.size
    if z <= knots[0]:
        z = knots[0]
    elif z >= knots[m - 1]:
        z = knots[m - 1]
    lo = 0
    hi = m - 2
    while lo < hi:  # last interval start <= z
        mid = (lo + hi + 1) // 2
        if knots[mid] <= z:
            lo = mid
        else:
            hi = mid - 1
    t = z - knots[lo]
    return ((coef[0, lo] * t + coef[1, lo]) * t + coef[2, lo]) * t + coef[3, lo]


@dataclass(frozen=True, eq=False)
class FittedIntensity:
    """Frozen per-cell predictor of a fitted model, ready for resimulation.

    ``baseline`` excludes the log cell area; masked cells carry ``-inf``.
    ``spline`` is ``None`` when the model has no constructed-covariate term.
    """

    grid: GridSpec
    baseline: np.ndarray
    spline: CubicSpline | None = None
    edge_rule: str = "none"
    n_points: int | None = None

    def __post_init__(self):
        b = np.asarray(self.baseline, dtype=float).ravel()
        if b.size != self.grid.n_cells:
            raise DimensionError("baseline does not match the grid")
        object.__setattr__(self, "baseline", b)

    @classmethod
    def from_fit(cls, fit, window: Window | None = None) -> "FittedIntensity":
        if fit.pattern_baseline is None or fit.grid_shape is None:
            raise ParameterError("fit has no gridded count block to resimulate from")
        if window is None:
            x0, x1, y0, y1 = fit.window
            mask = ~np.isfinite(fit.pattern_baseline)
            window = Window(x0, x1, y0, y1,
                            cell_mask=None if not mask.any() else (~mask).reshape(fit.grid_shape))
        grid = GridSpec(fit.grid_shape[0], fit.grid_shape[1], window)
        f = fit.f_zc
        spline = None if f is None else spline_build(f.midpoints, f.mean)
        return cls(grid, fit.pattern_baseline, spline, fit.edge_rule,
                   fit.diagnostics.get("n_points"))

    def f_values(self, raw: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Covariate effect per cell; cells with a missing covariate contribute 0."""
        out = np.zeros(values.size)
        if self.spline is None:
            return out
        ok = ~np.isnan(values)
        out[ok] = self.spline(values[ok])
        return out


def eta_hat(state: PointPattern, fit: FittedIntensity) -> np.ndarray:
    """Per-cell predictor (without the log-area offset) for ``state``."""
    if state.n == 0:
        raise ParameterError("eta_hat needs a nonempty pattern")
    cov = nearest_point_distance(state, fit.grid, fit.edge_rule)
    return fit.baseline + fit.f_values(cov.raw, cov.values)


def pattern_loglik(state: PointPattern, fit: FittedIntensity) -> float:
    """Gridded Poisson log-likelihood log p(y | eta_hat(state))."""
    eta = eta_hat(state, fit)
    y = np.bincount(fit.grid.cell_index(state.x, state.y), minlength=fit.grid.n_cells)
    area = fit.grid.cell_area
    out = 0.0
    for c in range(y.size):
        out += _cell_term(y[c], eta[c], area)
    return out


@numba.njit(cache=True)
def _cell_term(y, eta, area):
    if eta == -np.inf:
        return 0.0 if y == 0 else -np.inf
    return y * (eta + math.log(area)) - area * math.exp(eta) - math.lgamma(y + 1.0)


@numba.njit(cache=True)
def _cell_eta(c, raw, base, border, knots, coef, has_spline):
    e = base[c]
    if has_spline and raw[c] < np.inf and border[c] >= raw[c]:
        e += _spline_eval(knots, coef, raw[c])
    return e


BLOCK = 8  # cells per side of the blocks used to prune covariate updates


@numba.njit(cache=True)
def _ring_nearest(c, cx, cy, n_row, n_col, dx, dy, head, nxt, px, py):
    """Nearest point outside cell ``c``, searching square rings of cells outward."""
    ci = c // n_col
    cj = c % n_col
    h = min(dx, dy)
    best = np.inf
    arg = -1
    last = max(ci, n_row - 1 - ci, cj, n_col - 1 - cj)
    for ring in range(1, last + 1):
        # every point in ring ``ring`` is at least (ring - 0.5) * h from the centre
        if (ring - 0.5) * h >= best:
            break
        for i in range(max(ci - ring, 0), min(ci + ring, n_row - 1) + 1):
            edge_row = i == ci - ring or i == ci + ring
            step = 1 if edge_row else 2 * ring
            j = cj - ring
            while j <= cj + ring:
                if 0 <= j < n_col:
                    k = head[i * n_col + j]
                    while k >= 0:
                        ddx = px[k] - cx[c]
                        ddy = py[k] - cy[c]
                        d = math.sqrt(ddx * ddx + ddy * ddy)
                        if d < best:
                            best = d
                            arg = k
                        k = nxt[k]
                j += step
    return best, arg


@numba.njit(cache=True)
def _rect_dist(x, y, xlo, xhi, ylo, yhi):
    ddx = max(xlo - x, 0.0, x - xhi)
    ddy = max(ylo - y, 0.0, y - yhi)
    return math.sqrt(ddx * ddx + ddy * ddy)


@numba.njit(cache=True)
def _block_bounds(raw, n_row, n_col, bmax):
    nbc = (n_col + BLOCK - 1) // BLOCK
    bmax[:] = 0.0
    for c in range(raw.size):
        bl = (c // n_col) // BLOCK * nbc + (c % n_col) // BLOCK
        if raw[c] > bmax[bl]:
            bmax[bl] = raw[c]


@numba.njit(cache=True)
def _link(k, c, head, nxt, prv):
    prv[k] = -1
    nxt[k] = head[c]
    if head[c] >= 0:
        prv[head[c]] = k
    head[c] = k


@numba.njit(cache=True)
def _unlink(k, c, head, nxt, prv):
    if prv[k] >= 0:
        nxt[prv[k]] = nxt[k]
    else:
        head[c] = nxt[k]
    if nxt[k] >= 0:
        prv[nxt[k]] = prv[k]


@numba.njit(cache=True)
def _pruned_move(k, ox, oy, cx, cy, px, py, pcell, raw, nearest, n_row, n_col, dx, dy,
                 head, nxt, bmax, changed, old_raw, old_nearest):
    """Same update as covariate._apply_move, visiting only blocks that can change.

    A cell whose nearest point was ``k`` lies within its block bound of the
    old location; a cell the new location can improve lies within its block
    bound of the new one.  Block bounds are upper bounds on ``raw`` and are
    raised whenever a rescan increases a value.
    """
    nx = px[k]
    ny = py[k]
    new_cell = pcell[k]
    nbr = (n_row + BLOCK - 1) // BLOCK
    nbc = (n_col + BLOCK - 1) // BLOCK
    m = 0
    for bi in range(nbr):
        i0 = bi * BLOCK
        i1 = min(i0 + BLOCK, n_row)
        for bj in range(nbc):
            bl = bi * nbc + bj
            j0 = bj * BLOCK
            j1 = min(j0 + BLOCK, n_col)
            xlo = cx[i0 * n_col + j0]
            xhi = cx[i0 * n_col + j1 - 1]
            ylo = cy[i0 * n_col + j0]
            yhi = cy[(i1 - 1) * n_col + j0]
            check_old = _rect_dist(ox, oy, xlo, xhi, ylo, yhi) <= bmax[bl]
            check_new = _rect_dist(nx, ny, xlo, xhi, ylo, yhi) < bmax[bl]
            if not (check_old or check_new):
                continue
            for i in range(i0, i1):
                for j in range(j0, j1):
                    c = i * n_col + j
                    before = raw[c]
                    before_k = nearest[c]
                    if before_k == k:
                        raw[c], nearest[c] = _ring_nearest(c, cx, cy, n_row, n_col, dx, dy,
                                                           head, nxt, px, py)
                        if raw[c] > bmax[bl]:
                            bmax[bl] = raw[c]
                    elif new_cell != c and check_new:
                        ddx = cx[c] - nx
                        ddy = cy[c] - ny
                        d = math.sqrt(ddx * ddx + ddy * ddy)
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
def _chain(u, px, py, cx, cy, base, border, knots, coef, has_spline,
           x0, y0, width, height, n_row, n_col, area, paranoid, conditional):
    n = px.size
    n_cells = cx.size
    dx = width / n_col
    dy = height / n_row
    pcell = np.empty(n, np.int64)
    counts = np.zeros(n_cells, np.int64)
    head = -np.ones(n_cells, np.int64)
    nxt = -np.ones(n, np.int64)
    prv = -np.ones(n, np.int64)
    for k in range(n):
        j = min(max(int(math.floor((px[k] - x0) * n_col / width)), 0), n_col - 1)
        i = min(max(int(math.floor((py[k] - y0) * n_row / height)), 0), n_row - 1)
        pcell[k] = i * n_col + j
        counts[pcell[k]] += 1
        _link(k, pcell[k], head, nxt, prv)
    raw = np.empty(n_cells)
    nearest = np.empty(n_cells, np.int64)
    _nearest_all(cx, cy, px, py, pcell, raw, nearest)
    nb = ((n_row + BLOCK - 1) // BLOCK) * ((n_col + BLOCK - 1) // BLOCK)
    bmax = np.empty(nb)
    _block_bounds(raw, n_row, n_col, bmax)
    term = np.empty(n_cells)
    mass = np.empty(n_cells)
    total = 0.0
    for c in range(n_cells):
        e = _cell_eta(c, raw, base, border, knots, coef, has_spline)
        term[c] = _cell_term(counts[c], e, area)
        mass[c] = area * math.exp(e)
        total += mass[c]

    changed = np.empty(n_cells, np.int64)
    old_raw = np.empty(n_cells)
    old_nearest = np.empty(n_cells, np.int64)
    new_term = np.empty(n_cells + 2)
    new_mass = np.empty(n_cells + 2)
    full_mass = np.empty(n_cells)
    full_raw = np.empty(n_cells)
    full_nearest = np.empty(n_cells, np.int64)
    full_term = np.empty(n_cells)
    in_set = np.zeros(n_cells, np.bool_)
    touched = np.empty(n_cells + 2, np.int64)
    n_accept = 0
    max_err = 0.0
    for s in range(u.shape[0]):
        if s % 512 == 511:
            _block_bounds(raw, n_row, n_col, bmax)  # tighten the bounds
            total = mass.sum()  # shed accumulated rounding
        k = min(int(u[s, 0] * n), n - 1)
        ox = px[k]
        oy = py[k]
        a = pcell[k]
        nx = x0 + width * u[s, 1]
        ny = y0 + height * u[s, 2]
        j = min(int(math.floor((nx - x0) * n_col / width)), n_col - 1)
        i = min(int(math.floor((ny - y0) * n_row / height)), n_row - 1)
        b = i * n_col + j
        if base[b] == -np.inf:
            continue  # proposal in a masked cell has zero likelihood
        px[k] = nx
        py[k] = ny
        pcell[k] = b
        counts[a] -= 1
        counts[b] += 1
        _unlink(k, a, head, nxt, prv)
        _link(k, b, head, nxt, prv)
        m = _pruned_move(k, ox, oy, cx, cy, px, py, pcell, raw, nearest, n_row, n_col, dx, dy,
                         head, nxt, bmax, changed, old_raw, old_nearest)
        # cells whose likelihood term may differ: changed covariate + the two count cells
        nt = 0
        for q in range(m):
            c = changed[q]
            in_set[c] = True
            touched[nt] = c
            nt += 1
        for c in (a, b):
            if not in_set[c]:
                in_set[c] = True
                touched[nt] = c
                nt += 1
        delta = 0.0
        d_mass = 0.0
        for q in range(nt):
            c = touched[q]
            in_set[c] = False
            e = _cell_eta(c, raw, base, border, knots, coef, has_spline)
            new_term[q] = _cell_term(counts[c], e, area)
            new_mass[q] = area * math.exp(e)
            delta += new_term[q] - term[c]
            d_mass += new_mass[q] - mass[c]
        new_total = total + d_mass
        if conditional:
            # multinomial given n: add back the total mass, divide by total^n
            delta += d_mass - n * (math.log(new_total) - math.log(total))
        if paranoid:
            _nearest_all(cx, cy, px, py, pcell, full_raw, full_nearest)
            full = 0.0
            full_total = 0.0
            for c in range(n_cells):
                e = _cell_eta(c, full_raw, base, border, knots, coef, has_spline)
                full_term[c] = _cell_term(counts[c], e, area)
                full_mass[c] = area * math.exp(e)
                full += full_term[c] - term[c]
                full_total += full_mass[c]
            if conditional:
                full += full_total - total - n * (math.log(full_total) - math.log(total))
            new_total = full_total
            err = abs(full - delta)
            if err > max_err or err != err:
                max_err = err
            delta = full
        if delta >= 0 or u[s, 3] < math.exp(delta):
            n_accept += 1
            if paranoid:
                raw[:] = full_raw
                nearest[:] = full_nearest
                term[:] = full_term
                mass[:] = full_mass
                _block_bounds(raw, n_row, n_col, bmax)
            else:
                for q in range(nt):
                    term[touched[q]] = new_term[q]
                    mass[touched[q]] = new_mass[q]
            total = new_total
        else:
            px[k] = ox
            py[k] = oy
            pcell[k] = a
            counts[a] += 1
            counts[b] -= 1
            _unlink(k, b, head, nxt, prv)
            _link(k, a, head, nxt, prv)
            for q in range(m):
                raw[changed[q]] = old_raw[q]
                nearest[changed[q]] = old_nearest[q]
    return n_accept, max_err


@dataclass
class ChainResult:
    pattern: PointPattern
    n_accepted: int
    n_iter: int
    max_ratio_error: float

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_iter


def _initial_state(fit: FittedIntensity, n_points: int, rng):
    """Uniform scatter over the unmasked part of the window."""
    w = fit.grid.window
    xs, ys = [], []
    need = n_points
    while need > 0:
        x = w.x_min + w.width * rng.random(2 * need + 8)
        y = w.y_min + w.height * rng.random(2 * need + 8)
        ok = np.isfinite(fit.baseline[fit.grid.cell_index(x, y)])
        xs.append(x[ok][:need])
        ys.append(y[ok][:need])
        need -= xs[-1].size
    return np.concatenate(xs), np.concatenate(ys)


def resample_chain(fit: FittedIntensity, n_points: int, n_iter: int, seed,
                   paranoid: bool = False, start: PointPattern | None = None,
                   conditional: bool = False) -> ChainResult:
    """Run the fixed-size Metropolis chain and report acceptance statistics.

    With ``paranoid`` the constructed covariate and the full likelihood are
    recomputed from scratch at every step and used for the acceptance
    decision; ``max_ratio_error`` then records the largest difference between
    the incremental and the full log acceptance ratio.
    """
    if n_points < 1:
        raise ParameterError("resampling needs at least one point")
    if n_iter < 1:
        raise ParameterError("n_iter must be at least 1")
    if not np.any(np.isfinite(fit.baseline)):
        raise ParameterError("fitted intensity is zero everywhere")
    rng = make_rng(seed)
    if start is None:
        px, py = _initial_state(fit, n_points, rng)
    else:
        if start.n != n_points:
            raise ParameterError("start pattern has the wrong number of points")
        px, py = start.x.copy(), start.y.copy()
    u = rng.random((int(n_iter), 4))
    grid = fit.grid
    w = grid.window
    cx, cy = grid.centers()
    if fit.edge_rule == "censor":
        border = boundary_distance(grid)
    else:
        border = np.full(grid.n_cells, np.inf)
    if fit.spline is None:
        knots = np.zeros(3)
        coef = np.zeros((4, 2))
    else:
        knots, coef = fit.spline.knots, fit.spline.coefficients
    n_acc, err = _chain(u, px, py, cx, cy, fit.baseline, border, knots, coef,
                        fit.spline is not None, w.x_min, w.y_min, w.width, w.height,
                        grid.n_row, grid.n_col, grid.cell_area, bool(paranoid), bool(conditional))
    return ChainResult(PointPattern(px, py, w), int(n_acc), int(n_iter), float(err))


def metropolis_resample(fit: FittedIntensity, n_points: int | None = None,
                        n_iter: int = 100_000, seed=0, paranoid: bool = False,
                        conditional: bool = False) -> PointPattern:
    """Pattern after ``n_iter`` single-point Metropolis moves from a uniform start."""
    if n_points is None:
        n_points = fit.n_points
    if n_points is None:
        raise ParameterError("number of points unknown; pass n_points")
    return resample_chain(fit, int(n_points), n_iter, seed, paranoid, conditional=conditional).pattern
