from math import comb, log

import numpy as np
import pytest
from scipy.linalg import solve_banded
from scipy.stats import poisson

from lgcpkit.covariate import nearest_point_distance
from lgcpkit.errors import ParameterError
from lgcpkit.models import constructed_covariate_model, fit_pattern
from lgcpkit.pattern import GridSpec, PointPattern, Window
from lgcpkit.resimulate import (FittedIntensity, _spline_eval, eta_hat, metropolis_resample,
                                pattern_loglik, resample_chain, spline_build)
from lgcpkit.simulate import close_pairs, sim_poisson, sim_strauss, StraussParams

UNIT = Window(0.0, 1.0, 0.0, 1.0)


def natural_spline_oracle(knots, values, z):
    """Textbook natural cubic spline: tridiagonal solve for the second derivatives."""
    h = np.diff(knots)
    m = knots.size
    rhs = 6 * (np.diff(values[1:]) / h[1:] - np.diff(values[:-1]) / h[:-1])
    ab = np.zeros((3, m - 2))
    ab[0, 1:] = h[1:-1]
    ab[1] = 2 * (h[:-1] + h[1:])
    ab[2, :-1] = h[1:-1]
    sec = np.zeros(m)
    sec[1:-1] = solve_banded((1, 1), ab, rhs)
    z = np.clip(z, knots[0], knots[-1])
    k = np.clip(np.searchsorted(knots, z, side="right") - 1, 0, m - 2)
    a = (knots[k + 1] - z) / h[k]
    b = (z - knots[k]) / h[k]
    return (a * values[k] + b * values[k + 1]
            + ((a**3 - a) * sec[k] + (b**3 - b) * sec[k + 1]) * h[k] ** 2 / 6)


def toy_law(lam, n):
    """Exact stationary law of the number of points in the first of two equal cells."""
    p = np.array([comb(n, k) * 0.5**n * poisson.pmf(k, lam[0]) * poisson.pmf(n - k, lam[1])
                  for k in range(n + 1)])
    return p / p.sum()


def test_spline_matches_tridiagonal_oracle():
    rng = np.random.default_rng(0)
    knots = np.sort(rng.uniform(0, 1, 9))
    values = rng.normal(size=9)
    s = spline_build(knots, values)
    z = np.linspace(-0.2, 1.2, 801)
    assert np.allclose(s(z), natural_spline_oracle(knots, values, z), atol=1e-12)
    assert np.allclose(s(knots), values, atol=1e-14)
    assert abs(s.second_derivatives[0]) < 1e-9 and abs(s.second_derivatives[-1]) < 1e-9


def test_spline_flat_extrapolation_and_linear_reproduction():
    knots = np.array([0.0, 0.1, 0.3, 0.4])
    s = spline_build(knots, 2 * knots + 1)
    assert np.allclose(s([0.05, 0.2, 0.35]), [1.1, 1.4, 1.7])
    assert s(-1.0) == pytest.approx(1.0)
    assert s(5.0) == pytest.approx(1.8)


def test_compiled_spline_matches():
    knots = np.linspace(0.01, 0.3, 12)
    s = spline_build(knots, np.sin(10 * knots))
    for z in np.linspace(-0.1, 0.4, 97):
        assert _spline_eval(s.knots, s.coefficients, z) == pytest.approx(float(s(z)), abs=1e-13)


def test_spline_errors():
    with pytest.raises(ParameterError):
        spline_build([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ParameterError):
        spline_build([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ParameterError):
        spline_build([0.0, 0.5, 1.0], [1.0, np.nan, 3.0])


def test_eta_hat_constant_without_covariate_effect():
    g = GridSpec(5, 5, UNIT)
    fi = FittedIntensity(g, np.full(25, 4.2), spline_build([0.1, 0.2, 0.3], [0.0, 0.0, 0.0]))
    p = sim_poisson(30.0, UNIT, 1)
    assert np.allclose(eta_hat(p, fi), 4.2)


def test_eta_hat_changes_only_where_covariate_changes():
    g = GridSpec(15, 15, UNIT)
    fi = FittedIntensity(g, np.zeros(225), spline_build(np.linspace(0.0, 0.5, 8), np.linspace(2.0, -1.0, 8)))
    p = sim_poisson(40.0, UNIT, 2)
    x = p.x.copy()
    y = p.y.copy()
    x[0], y[0] = 0.93, 0.07
    q = PointPattern(x, y, UNIT)
    changed = nearest_point_distance(p, g).values != nearest_point_distance(q, g).values
    diff = eta_hat(p, fi) != eta_hat(q, fi)
    assert np.array_equal(diff, changed)
    assert changed.any()


def test_pattern_loglik_by_hand():
    g = GridSpec(1, 2, UNIT)
    fi = FittedIntensity(g, np.log([3.0, 8.0]))
    p = PointPattern([0.2, 0.3, 0.8], [0.5, 0.5, 0.5], UNIT)
    expect = poisson.logpmf(2, 1.5) + poisson.logpmf(1, 4.0)
    assert pattern_loglik(p, fi) == pytest.approx(expect, abs=1e-12)


def test_eta_hat_agrees_with_training_predictor():
    g = GridSpec(20, 20, UNIT)
    p = sim_strauss(StraussParams(300.0, 0.5, 0.05), UNIT, 5)
    fit = fit_pattern(p, g, constructed_covariate_model(n_bins=10))
    fi = FittedIntensity.from_fit(fit)
    eta = eta_hat(p, fi)
    train = fit.block_predictors["pattern"] - np.log(g.cell_area)
    cells = fit.block_units["pattern"]
    f = fit.f_zc
    z = nearest_point_distance(p, g).values[cells]
    half = 0.5 * (f.midpoints[1] - f.midpoints[0])
    k = np.clip(np.round((z - f.midpoints[0]) / (2 * half)).astype(int), 0, f.midpoints.size - 1)
    # the spline and the bin value differ by at most the spline's swing inside that bin
    fine = np.linspace(-1, 1, 41)
    swing = np.array([np.max(np.abs(fi.spline(m + half * fine) - fi.spline(m))) for m in f.midpoints])
    assert np.all(np.abs(eta[cells] - train) <= swing[k] + 1e-8)


def test_single_cell_accepts_everything():
    fi = FittedIntensity(GridSpec(1, 1, UNIT), np.array([5.0]))
    r = resample_chain(fi, 10, 500, 1)
    assert r.acceptance_rate == 1.0


def test_point_count_invariant_and_reproducible():
    g = GridSpec(10, 10, UNIT)
    fi = FittedIntensity(g, np.linspace(3, 6, 100), spline_build(np.linspace(0.0, 0.3, 6), [1, 0.5, 0, 0, 0, 0]))
    a = metropolis_resample(fi, 57, 3000, 9)
    b = metropolis_resample(fi, 57, 3000, 9)
    assert a.n == 57
    assert np.array_equal(a.xy, b.xy)
    assert np.all(UNIT.contains(a.x, a.y))


def test_two_cell_toy_law():
    lam = (1.5, 4.0)
    fi = FittedIntensity(GridSpec(1, 2, UNIT), np.log([3.0, 8.0]))
    n = 6
    ks = np.empty(2000, dtype=int)
    state = None
    for s in range(ks.size):
        r = resample_chain(fi, n, 50, s, start=state)
        state = r.pattern
        ks[s] = np.sum(state.x < 0.5)
    emp = np.bincount(ks[100:], minlength=n + 1) / ks[100:].size
    assert 0.5 * np.abs(emp - toy_law(lam, n)).sum() < 0.05


@pytest.mark.parametrize("conditional", [False, True])
def test_paranoid_incremental_ratio(conditional):
    g = GridSpec(12, 12, UNIT)
    fi = FittedIntensity(g, np.full(144, 5.0), spline_build(np.linspace(0.01, 0.2, 10), np.sin(np.linspace(0, 3, 10))))
    r = resample_chain(fi, 60, 2000, 3, paranoid=True, conditional=conditional)
    assert r.max_ratio_error < 1e-10
    assert r.pattern.n == 60


def test_repulsion_preserved():
    g = GridSpec(30, 30, UNIT)
    knots = np.linspace(0.0, 0.2, 9)
    fi = FittedIntensity(g, np.full(900, log(200.0)), spline_build(knots, np.where(knots < 0.06, -2.0, 0.0)))
    n = 200
    pairs = [close_pairs(metropolis_resample(fi, n, 20_000, s), 0.05) for s in range(3)]
    # Poisson expectation of pairs within 0.05, ignoring edge losses (an upper bound)
    poisson_pairs = comb(n, 2) * np.pi * 0.05**2
    assert np.mean(pairs) < 0.8 * poisson_pairs


def test_resample_errors():
    fi = FittedIntensity(GridSpec(2, 2, UNIT), np.zeros(4))
    with pytest.raises(ParameterError):
        metropolis_resample(fi, 0, 10, 1)
    with pytest.raises(ParameterError):
        metropolis_resample(fi, None, 10, 1)
    with pytest.raises(ParameterError):
        resample_chain(fi, 3, 0, 1)
    with pytest.raises(ParameterError):
        resample_chain(FittedIntensity(GridSpec(2, 2, UNIT), np.full(4, -np.inf)), 3, 10, 1)
