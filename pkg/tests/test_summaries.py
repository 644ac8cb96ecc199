import numpy as np
import pytest

from lgcpkit.errors import InsufficientDataError, ParameterError, ReplicateError
from lgcpkit.pattern import GridSpec, PointPattern, Window
from lgcpkit.simulate import LinearTrend, sim_poisson
from lgcpkit.summaries import (EnvelopeBand, SummaryFunction, band_from, envelopes, isotropic_weights,
                               k_function, l_function, l_inhom, r_grid)

UNIT = Window(0.0, 1.0, 0.0, 1.0)


def angular_fraction_inside(x, y, d, window, n=200_000):
    t = (np.arange(n) + 0.5) * 2 * np.pi / n
    px, py = x + d * np.cos(t), y + d * np.sin(t)
    return np.mean(window.contains(px, py))


def test_single_pair_by_hand():
    p = PointPattern([0.45, 0.55], [0.5, 0.5], UNIT)
    k = k_function(p, n_r=101)
    # |W| / (n (n - 1)) * two ordered pairs, both at distance 0.1 with unit weight
    assert np.all(k.value[k.r < 0.1 - 1e-12] == 0)
    assert np.allclose(k.value[k.r >= 0.1 + 1e-12], 1.0)


def test_isotropic_weight_special_cases():
    assert isotropic_weights(0.5, 0.5, 0.1, UNIT) == pytest.approx(1.0)
    assert isotropic_weights(0.0, 0.5, 0.1, UNIT) == pytest.approx(2.0)
    assert isotropic_weights(0.0, 0.0, 0.1, UNIT) == pytest.approx(4.0)


def test_isotropic_weights_against_angular_oracle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        x, y = rng.random(2)
        d = rng.uniform(0.01, 0.25)
        frac = angular_fraction_inside(x, y, d, UNIT)
        assert 1.0 / isotropic_weights(x, y, d, UNIT) == pytest.approx(frac, abs=1e-4)


def test_poisson_l_is_close_to_identity():
    ls = np.array([l_function(sim_poisson(200.0, UNIT, s), n_r=51).value for s in range(30)])
    r = r_grid(UNIT, n_r=51)
    assert np.max(np.abs(ls.mean(axis=0) - r)) < 0.004


def test_l_inhom_with_constant_intensity_equals_l():
    p = sim_poisson(150.0, UNIT, 2)
    a = l_function(p)
    b = l_inhom(p, np.full(100, 37.0), GridSpec(10, 10, UNIT))
    assert np.allclose(a.value, b.value, rtol=1e-12, atol=1e-15)
    c = l_inhom(p, lambda x, y: np.full(np.shape(x), 5.0))
    assert np.allclose(a.value, c.value, rtol=1e-12, atol=1e-15)


def test_l_inhom_corrects_a_trend():
    trend = LinearTrend(400.0, 0.0)
    vals = [l_inhom(sim_poisson(trend, UNIT, s), trend, n_r=51).value for s in range(20)]
    plain = [l_function(sim_poisson(trend, UNIT, s), n_r=51).value for s in range(20)]
    r = r_grid(UNIT, n_r=51)
    assert np.max(np.abs(np.mean(vals, axis=0) - r)) < np.max(np.abs(np.mean(plain, axis=0) - r))


def test_translation_invariance():
    p = sim_poisson(100.0, UNIT, 3)
    w = Window(10.0, 11.0, -5.0, -4.0)
    q = PointPattern(p.x + 10.0, p.y - 5.0, w)
    assert np.allclose(l_function(p).value, l_function(q).value, atol=1e-12)


def test_insufficient_data_and_bad_radius():
    with pytest.raises(InsufficientDataError):
        k_function(PointPattern([0.5], [0.5], UNIT))
    with pytest.raises(ParameterError):
        r_grid(UNIT, r_max=0.5)
    with pytest.raises(ParameterError):
        l_inhom(sim_poisson(50.0, UNIT, 1), np.zeros(4), GridSpec(2, 2, UNIT))


def test_envelope_ordering_and_membership():
    band = envelopes(lambda s: sim_poisson(100.0, UNIT, s), lambda p: l_function(p, n_r=64), 19, seed=5)
    assert band.n_sim == 19
    assert np.all(band.lower <= band.mean) and np.all(band.mean <= band.upper)
    member = l_function(sim_poisson(100.0, UNIT, 5), n_r=64)
    assert np.all(band.contains(member))


def test_envelopes_are_deterministic_and_thread_independent():
    gen = lambda s: sim_poisson(80.0, UNIT, s)  # noqa: E731
    stat = lambda p: l_function(p, n_r=32)  # noqa: E731
    a = envelopes(gen, stat, 6, seed=1, threads=1)
    b = envelopes(gen, stat, 6, seed=1, threads=3)
    assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)


def test_envelope_errors():
    with pytest.raises(ParameterError):
        envelopes(lambda s: None, lambda p: p, 1)

    def bad(seed):
        if seed == 3:
            raise ValueError("boom")
        return sim_poisson(50.0, UNIT, seed)

    with pytest.raises(ReplicateError):
        envelopes(bad, l_function, 5, seed=0)
    f = SummaryFunction(np.array([0.0, 0.1]), np.array([0.0, 0.1]), "L")
    g = SummaryFunction(np.array([0.0, 0.2]), np.array([0.0, 0.2]), "L")
    with pytest.raises(ParameterError):
        band_from([f, g])
    band = EnvelopeBand(g.r, g.value, g.value, g.value, 2)
    with pytest.raises(ParameterError):
        band.contains(f)


def test_summary_function_validation_and_csv(tmp_path):
    with pytest.raises(ParameterError):
        SummaryFunction(np.array([0.1, 0.2]), np.array([1.0, 2.0]), "L")
    with pytest.raises(ParameterError):
        SummaryFunction(np.array([0.0, 0.2]), np.array([1.0, 2.0]), "Q")
    f = SummaryFunction(np.array([0.0, 0.1, 0.2]), np.array([0.0, 0.5, 1.0]), "L")
    assert f.at(0.09) == 0.5
    path = tmp_path / "l.csv"
    f.write_csv(path)
    assert path.read_text().splitlines()[:2] == ["r,value", "0.0,0.0"]
