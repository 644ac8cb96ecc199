import numpy as np
import pytest
from scipy.optimize import brentq, minimize

from lgcpkit.engine import Block, Component, InlaEngine, ModelSpec, Term, assemble
from lgcpkit.errors import ModelError
from lgcpkit.gmrf import rw1_structure


def gaussian_spec(y, idx, n_levels, log_tau_f=1.0, log_tau_obs=0.7):
    return ModelSpec([Component("b0", "intercept"),
                      Component("f", "rw1_function", length=n_levels, log_precision=log_tau_f)],
                     [Block("obs", "gaussian", response=y, terms=[Term("b0"), Term("f", idx)],
                            log_precision=log_tau_obs)], n_bins=None)


def test_assembly_layout_and_design():
    y = np.array([1.0, 2.0, 3.0])
    spec = ModelSpec([Component("b0", "intercept"), Component("u", "iid", length=2)],
                     [Block("obs", "poisson_log", response=y, terms=[Term("b0"), Term("u", np.array([0, 1, 1]))])],
                     n_bins=None)
    m = assemble(spec)
    assert m.layout == {"b0": (0, 1), "u": (1, 3)}
    assert m.theta_names == ["log_tau[u]"]
    a = m.design(m.initial_theta()).toarray()
    assert a.tolist() == [[1, 1, 0], [1, 0, 1], [1, 0, 1]]
    assert np.array_equal(m.offset, np.zeros(3))


def test_assembly_rejects_bad_references():
    with pytest.raises(ModelError):
        assemble(ModelSpec([Component("b0", "intercept")],
                           [Block("obs", "poisson_log", response=np.ones(2), terms=[Term("nope")])], n_bins=None))
    with pytest.raises(ModelError):
        assemble(ModelSpec([Component("b0", "intercept")],
                           [Block("obs", "poisson_log", response=np.array([0.5]), terms=[Term("b0")])],
                           n_bins=None))


def test_missing_responses_are_dropped():
    y = np.array([1.0, np.nan, 3.0])
    spec = ModelSpec([Component("b0", "intercept")],
                     [Block("obs", "gaussian", response=y, terms=[Term("b0")], log_precision=0.0)], n_bins=None)
    m = assemble(spec)
    assert m.y.tolist() == [1.0, 3.0]


def test_scalar_poisson_mode():
    prec = 1e-3
    spec = ModelSpec([Component("b0", "intercept", fixed_precision=prec)],
                     [Block("obs", "poisson_log", response=np.array([3.0]), terms=[Term("b0")])], n_bins=None)
    ga = InlaEngine(assemble(spec), tol=1e-12).gaussian_approx(np.zeros(0))
    root = brentq(lambda b: 3.0 - np.exp(b) - prec * b, -5, 5, xtol=1e-14)
    assert ga.mode[0] == pytest.approx(root, abs=1e-10)
    assert ga.mode[0] == pytest.approx(np.log(3.0), abs=1e-3)


def test_two_cell_dense_newton_and_laplace():
    y = np.array([2.0, 5.0])
    off = np.log([0.5, 0.5])
    spec = ModelSpec([Component("u", "iid", length=2, log_precision=0.0)],
                     [Block("obs", "poisson_log", response=y, terms=[Term("u", np.array([0, 1]))], offset=off)],
                     n_bins=None)
    ga = InlaEngine(assemble(spec), tol=1e-12).gaussian_approx(np.zeros(0))

    def negpost(u):
        eta = u + off
        return 0.5 * u @ u - (y @ eta - np.exp(eta).sum())

    # the problem separates: u_k + 0.5 exp(u_k) = y_k
    u = np.array([brentq(lambda v, yk=yk: v + 0.5 * np.exp(v) - yk, -10, 10, xtol=1e-15) for yk in y])
    assert np.allclose(ga.mode, u, atol=1e-10)
    assert minimize(negpost, np.zeros(2)).fun >= negpost(u) - 1e-12
    # Laplace approximation of the marginal likelihood, written out by hand
    h = np.eye(2) + np.diag(np.exp(u + off))
    lgy = np.log(2.0) + np.log(120.0)
    laplace = -negpost(u) - lgy - 0.5 * np.linalg.slogdet(h)[1]
    assert ga.log_posterior == pytest.approx(laplace, abs=1e-9)


def test_gaussian_model_matches_dense_posterior():
    rng = np.random.default_rng(11)
    n, k = 40, 5
    idx = rng.integers(0, k, n)
    y = rng.normal(0.5, 1.0, n)
    fit = InlaEngine(assemble(gaussian_spec(y, idx, k))).fit()
    a = np.zeros((n, 1 + k))
    a[:, 0] = 1
    a[np.arange(n), 1 + idx] = 1
    q = np.zeros((1 + k, 1 + k))
    q[0, 0] = 1e-3
    q[1:, 1:] = np.e * (rw1_structure(k).toarray() + 1e-6 * np.eye(k))
    tau = np.exp(0.7)
    s = np.linalg.inv(q + tau * a.T @ a)
    mu = s @ (tau * a.T @ y)
    c = np.zeros((1, 1 + k))
    c[0, 1:] = 1
    gain = s @ c.T @ np.linalg.inv(c @ s @ c.T)
    mu_c = mu - gain @ (c @ mu)
    s_c = s - gain @ c @ s
    assert np.allclose(fit.latent_mean, mu_c, atol=1e-9)
    assert np.allclose(fit.latent_sd, np.sqrt(np.diag(s_c)), atol=1e-6)
    # sum-to-zero holds for the posterior mean of the random walk
    assert abs(fit.component("f").mean.sum()) < 1e-9
    # with every precision fixed, p_D is the trace of tau * A S A'
    assert fit.p_d == pytest.approx(tau * np.trace(a @ s_c @ a.T), rel=1e-6)


def test_mixture_weights_and_moments():
    rng = np.random.default_rng(3)
    y = rng.poisson(4.0, 30).astype(float)
    idx = rng.integers(0, 3, 30)
    spec = ModelSpec([Component("b0", "intercept"), Component("u", "iid", length=3)],
                     [Block("obs", "poisson_log", response=y, terms=[Term("b0"), Term("u", idx)])], n_bins=None)
    engine = InlaEngine(assemble(spec))
    fit = engine.fit()
    w = fit.weights
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(w > 0)
    assert len(w) == fit.thetas.shape[0] > 1
    # re-derive the mixture mean from the stored hyper points
    modes = np.array([engine.gaussian_approx(t, tol=1e-10).mode for t in fit.thetas])
    assert np.allclose(w @ modes, fit.latent_mean, atol=1e-5)
    h = fit.hypers["log_tau[u]"]
    assert h.mean == pytest.approx(w @ fit.thetas[:, 0], abs=1e-12)
    assert h.lower < h.mean < h.upper


def test_dic_is_deviance_plus_twice_pd():
    rng = np.random.default_rng(4)
    y = rng.poisson(6.0, 20).astype(float)
    spec = ModelSpec([Component("b0", "intercept")],
                     [Block("obs", "poisson_log", response=y, terms=[Term("b0")])], n_bins=None)
    fit = InlaEngine(assemble(spec)).fit()
    assert fit.dic == pytest.approx(fit.deviance_at_mean + 2 * fit.p_d)
    # one free parameter, almost no prior information
    assert fit.p_d == pytest.approx(1.0, abs=0.05)


def test_fit_result_json_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    y = rng.normal(size=12)
    fit = InlaEngine(assemble(gaussian_spec(y, rng.integers(0, 3, 12), 3))).fit()
    path = tmp_path / "fit.json"
    fit.save(path)
    back = type(fit).load(path)
    assert np.array_equal(back.latent_mean, fit.latent_mean)
    assert back.dic == fit.dic
    assert list(back.components) == list(fit.components)
