import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.stats import chisquare

from lgcpkit.errors import DimensionError, ParameterError
from lgcpkit.pattern import GridSpec, PointPattern, Window, grid_counts
from lgcpkit.simulate import (GridIntensity, LinearTrend, StraussParams, ThomasParams, close_pairs,
                              provenance, sim_poisson, sim_strauss, sim_thomas, superimpose)

UNIT = Window(0.0, 1.0, 0.0, 1.0)


def test_poisson_count_mean_and_dispersion():
    n = np.array([sim_poisson(100.0, UNIT, s).n for s in range(400)])
    se = np.sqrt(100.0 / n.size)
    assert abs(n.mean() - 100.0) < 4 * se
    assert 0.8 < n.var(ddof=1) / n.mean() < 1.2


def test_poisson_uniform_over_cells():
    g = GridSpec(4, 4, UNIT)
    counts = sum(grid_counts(sim_poisson(200.0, UNIT, s), g).counts for s in range(50))
    assert chisquare(counts).pvalue > 1e-3


def test_poisson_on_shifted_window():
    w = Window(2.0, 5.0, -1.0, 1.0)
    p = sim_poisson(10.0, w, 3)
    assert np.all(w.contains(p.x, p.y))


def test_inhomogeneous_poisson_trend():
    trend = LinearTrend(200.0, 0.0)
    assert trend.integral(UNIT) == pytest.approx(100.0)
    pats = [sim_poisson(trend, UNIT, s) for s in range(200)]
    n = np.array([p.n for p in pats])
    assert abs(n.mean() - 100.0) < 4 * np.sqrt(100.0 / n.size)
    xs = np.concatenate([p.x for p in pats])
    # density 2x on [0, 1] has mean 2/3 and variance 1/18
    assert abs(xs.mean() - 2 / 3) < 4 * np.sqrt(1 / 18 / xs.size)


def test_grid_intensity_thinning():
    g = GridSpec(1, 2, UNIT)
    lam = GridIntensity([0.0, 300.0], g)
    p = sim_poisson(lam, UNIT, 9)
    assert np.all(p.x >= 0.5)
    assert lam.integral(UNIT) == pytest.approx(150.0)


def test_negative_intensity_rejected():
    with pytest.raises(ParameterError):
        sim_poisson(LinearTrend(-1.0, 0.0), UNIT, 0)
    with pytest.raises(ParameterError):
        sim_poisson(-5.0, UNIT, 0)


@pytest.mark.parametrize("kappa,mu", [(10.0, 50.0), (5.0, 25.0)])
def test_thomas_mean_count(kappa, mu):
    params = ThomasParams(kappa, 0.05, mu)
    n = np.array([sim_thomas(params, UNIT, s).n for s in range(150)])
    expect = kappa * mu
    # offspring count is compound Poisson: variance kappa mu (1 + mu) per unit area
    se = np.sqrt(kappa * mu * (1 + mu) / n.size)
    assert abs(n.mean() - expect) < 4 * se


def test_thomas_is_clustered():
    p = sim_thomas(ThomasParams(10.0, 0.02, 40.0), UNIT, 1)
    q = sim_poisson(float(p.n), UNIT, 1)
    assert close_pairs(p, 0.02) > 3 * close_pairs(q, 0.02)


def test_strauss_gamma_one_is_poisson():
    n = np.array([sim_strauss(StraussParams(50.0, 1.0, 0.05), UNIT, s).n for s in range(200)])
    assert abs(n.mean() - 50.0) < 4 * np.sqrt(50.0 / n.size)


def test_strauss_hard_core():
    p = sim_strauss(StraussParams(200.0, 0.0, 0.05), UNIT, 4)
    assert p.n > 50
    assert close_pairs(p, 0.05) == 0
    assert pdist(p.xy).min() > 0.05


def test_strauss_inhibition_reduces_close_pairs():
    soft = [close_pairs(sim_strauss(StraussParams(300.0, 0.3, 0.05), UNIT, s), 0.05) for s in range(5)]
    free = [close_pairs(sim_strauss(StraussParams(300.0, 1.0, 0.05), UNIT, s), 0.05) for s in range(5)]
    assert np.mean(soft) < 0.6 * np.mean(free)


def test_strauss_point_cap():
    p = sim_strauss(StraussParams(500.0, 1.0, 0.05), UNIT, 2, n_max=3)
    assert p.n <= 3


def test_parameter_validation():
    with pytest.raises(ParameterError):
        StraussParams(0.0, 0.5, 0.05)
    with pytest.raises(ParameterError):
        StraussParams(10.0, 1.5, 0.05)
    with pytest.raises(ParameterError):
        ThomasParams(10.0, -0.1, 5.0)
    with pytest.raises(ParameterError):
        ThomasParams(0.0, 0.1, 5.0)


def test_determinism():
    a = sim_thomas(ThomasParams(10.0, 0.05, 50.0), UNIT, 123)
    b = sim_thomas(ThomasParams(10.0, 0.05, 50.0), UNIT, 123)
    c = sim_thomas(ThomasParams(10.0, 0.05, 50.0), UNIT, 124)
    assert np.array_equal(a.xy, b.xy)
    assert a.n != c.n or not np.array_equal(a.xy, c.xy)
    s1 = sim_strauss(StraussParams(100.0, 0.5, 0.05), UNIT, 7)
    s2 = sim_strauss(StraussParams(100.0, 0.5, 0.05), UNIT, 7)
    assert np.array_equal(s1.xy, s2.xy)


def test_superimpose():
    a = sim_poisson(20.0, UNIT, 1)
    b = sim_poisson(30.0, UNIT, 2)
    s = superimpose(a, b)
    assert s.n == a.n + b.n
    assert np.array_equal(s.x[:a.n], a.x)
    with pytest.raises(DimensionError):
        superimpose(a, PointPattern.empty(Window(0, 2, 0, 2)))


def test_close_pairs_matches_brute_force():
    rng = np.random.default_rng(0)
    p = PointPattern(rng.random(60), rng.random(60), UNIT)
    assert close_pairs(p, 0.1) == int(np.sum(pdist(p.xy) <= 0.1))
    assert close_pairs(PointPattern([0.5], [0.5], UNIT), 0.1) == 0


def test_provenance_record():
    rec = provenance("strauss", StraussParams(700.0, 0.5, 0.05), 3, n_sweeps=100)
    assert rec["params"] == {"beta": 700.0, "gamma": 0.5, "r": 0.05}
    assert rec["seed"] == 3
    assert rec["settings"] == {"n_sweeps": 100}
