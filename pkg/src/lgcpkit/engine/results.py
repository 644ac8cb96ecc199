"""Posterior summaries, DIC and FitResult serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

LOG_2PI = float(np.log(2 * np.pi))
Z95 = 1.96


@dataclass
class ComponentSummary:
    name: str
    kind: str
    mean: np.ndarray
    sd: np.ndarray
    shape: tuple[int, ...] | None = None
    midpoints: np.ndarray | None = None
    cov: np.ndarray | None = None

    @property
    def lower(self) -> np.ndarray:
        return self.mean - Z95 * self.sd

    @property
    def upper(self) -> np.ndarray:
        return self.mean + Z95 * self.sd

    def linear_combination(self, weights) -> tuple[float, float]:
        """Posterior mean and sd of ``weights @ component`` (needs ``cov``)."""
        w = np.asarray(weights, dtype=float)
        if self.cov is None:
            raise ValueError(f"no posterior covariance stored for {self.name!r}")
        return float(w @ self.mean), float(np.sqrt(max(w @ self.cov @ w, 0.0)))

    def interpolation_weights(self, x: float) -> np.ndarray:
        """Weights reproducing linear interpolation between bin midpoints at ``x``."""
        m = self.midpoints
        w = np.zeros(m.size)
        if x <= m[0]:
            w[0] = 1.0
        elif x >= m[-1]:
            w[-1] = 1.0
        else:
            k = int(np.searchsorted(m, x) - 1)
            t = (x - m[k]) / (m[k + 1] - m[k])
            w[k] = 1 - t
            w[k + 1] = t
        return w


@dataclass
class HyperSummary:
    name: str
    mean: float
    sd: float
    mode: float

    @property
    def lower(self) -> float:
        return self.mean - Z95 * self.sd

    @property
    def upper(self) -> float:
        return self.mean + Z95 * self.sd


@dataclass
class FitResult:
    theta_names: list[str]
    thetas: np.ndarray  # K x d
    log_posteriors: np.ndarray
    weights: np.ndarray
    latent_mean: np.ndarray
    latent_sd: np.ndarray
    components: dict[str, ComponentSummary]
    hypers: dict[str, HyperSummary]
    dic: float = float("nan")
    p_d: float = float("nan")
    mean_deviance: float = float("nan")
    deviance_at_mean: float = float("nan")
    block_predictors: dict[str, np.ndarray] = field(default_factory=dict)
    block_units: dict[str, np.ndarray] = field(default_factory=dict)
    pattern_baseline: np.ndarray | None = None
    grid_shape: tuple[int, int] | None = None
    cell_area: float | None = None
    window: tuple[float, float, float, float] | None = None
    edge_rule: str = "none"
    diagnostics: dict = field(default_factory=dict)
    # per-point observation-level quantities used by dic()
    _eta_mean: np.ndarray | None = None
    _eta_var: np.ndarray | None = None
    _obs_log_tau: np.ndarray | None = None
    _y: np.ndarray | None = None
    _pois: np.ndarray | None = None

    def component(self, name: str) -> ComponentSummary:
        return self.components[name]

    @property
    def f_zc(self) -> ComponentSummary | None:
        for c in self.components.values():
            if c.kind == "rw1_function" and c.midpoints is not None:
                return c
        return None

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float).tolist()

        comps = {}
        for name, c in self.components.items():
            comps[name] = dict(kind=c.kind, mean=arr(c.mean), sd=arr(c.sd),
                               shape=None if c.shape is None else list(c.shape),
                               midpoints=arr(c.midpoints), cov=arr(c.cov))
        return dict(
            theta_names=self.theta_names,
            hyper_points=[dict(theta=arr(t), log_posterior=float(lp), weight=float(w))
                          for t, lp, w in zip(self.thetas, self.log_posteriors, self.weights)],
            hypers={k: dict(mean=h.mean, sd=h.sd, mode=h.mode, lower=h.lower, upper=h.upper)
                    for k, h in self.hypers.items()},
            latent_mean=arr(self.latent_mean), latent_sd=arr(self.latent_sd),
            components=comps,
            dic=self.dic, p_d=self.p_d, mean_deviance=self.mean_deviance,
            deviance_at_mean=self.deviance_at_mean,
            pattern_baseline=None if self.pattern_baseline is None else [
                None if not np.isfinite(v) else float(v) for v in self.pattern_baseline],
            grid_shape=None if self.grid_shape is None else list(self.grid_shape),
            cell_area=self.cell_area, window=None if self.window is None else list(self.window),
            edge_rule=self.edge_rule, diagnostics=self.diagnostics,
        )

    @classmethod
    def from_json(cls, d: dict) -> "FitResult":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)

        comps = {}
        for name, c in d["components"].items():
            comps[name] = ComponentSummary(name, c["kind"], arr(c["mean"]), arr(c["sd"]),
                                           None if c["shape"] is None else tuple(c["shape"]),
                                           arr(c["midpoints"]), arr(c["cov"]))
        hp = d["hyper_points"]
        d_theta = len(d["theta_names"])
        base = d.get("pattern_baseline")
        return cls(
            theta_names=list(d["theta_names"]),
            thetas=np.array([p["theta"] for p in hp], dtype=float).reshape(len(hp), d_theta),
            log_posteriors=np.array([p["log_posterior"] for p in hp]),
            weights=np.array([p["weight"] for p in hp]),
            latent_mean=arr(d["latent_mean"]), latent_sd=arr(d["latent_sd"]),
            components=comps,
            hypers={k: HyperSummary(k, v["mean"], v["sd"], v["mode"]) for k, v in d["hypers"].items()},
            dic=d["dic"], p_d=d["p_d"], mean_deviance=d["mean_deviance"],
            deviance_at_mean=d["deviance_at_mean"],
            pattern_baseline=None if base is None else np.array(
                [-np.inf if v is None else v for v in base], dtype=float),
            grid_shape=None if d["grid_shape"] is None else tuple(d["grid_shape"]),
            cell_area=d["cell_area"], window=None if d["window"] is None else tuple(d["window"]),
            edge_rule=d.get("edge_rule", "none"), diagnostics=d.get("diagnostics", {}),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FitResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _deviance_terms(y, pois, eta, var, log_tau):
    """-2 log-likelihood per observation; ``var`` > 0 gives its posterior expectation."""
    out = np.empty(y.size)
    p = pois
    ec = np.clip(eta[p], -30.0, 30.0)
    # second-order expansion of E[exp(eta)] about the mean
    out[p] = -2.0 * (y[p] * ec - np.exp(ec) * (1.0 + 0.5 * var[p]) - gammaln(y[p] + 1.0))
    q = ~p
    if np.any(q):
        tau = np.exp(log_tau[q])
        r = y[q] - eta[q]
        out[q] = -(log_tau[q] - LOG_2PI - tau * (r * r + var[q]))
    return out


def dic(fit: FitResult) -> tuple[float, float]:
    """(DIC, p_D) with the deviance evaluated at the posterior-mean predictor."""
    w = fit.weights
    y, pois = fit._y, fit._pois
    mean_dev = 0.0
    for k in range(w.size):
        mean_dev += w[k] * _deviance_terms(y, pois, fit._eta_mean[k], fit._eta_var[k], fit._obs_log_tau[k]).sum()
    eta_bar = np.einsum("k,ki->i", w, fit._eta_mean)
    if np.any(~pois):
        tau_bar = np.einsum("k,ki->i", w, np.exp(np.nan_to_num(fit._obs_log_tau, nan=0.0)))
        lt_bar = np.log(tau_bar)
    else:
        lt_bar = np.zeros(y.size)
    dev_mean = _deviance_terms(y, pois, eta_bar, np.zeros(y.size), lt_bar).sum()
    p_d = mean_dev - dev_mean
    fit.mean_deviance = float(mean_dev)
    fit.deviance_at_mean = float(dev_mean)
    return float(dev_mean + 2 * p_d), float(p_d)


def build_fit_result(engine, points) -> FitResult:
    model = engine.model
    w = np.array([p.weight for p in points])
    modes = np.array([p.summary.mode for p in points])
    vars_ = np.array([p.summary.var for p in points])
    mean = w @ modes
    var = np.maximum(w @ (vars_ + modes**2) - mean**2, 0.0)
    sd = np.sqrt(var)

    idx = points[0].summary.cov_index
    covs = None
    if idx.size:
        second = sum(wk * (p.summary.cov + np.outer(p.summary.mode[idx], p.summary.mode[idx]))
                     for wk, p in zip(w, points))
        covs = second - np.outer(mean[idx], mean[idx])
    pos_in_idx = {int(i): k for k, i in enumerate(idx)}

    comps = {}
    for comp in model.spec.components:
        start, stop = model.layout[comp.name]
        cov = None
        if covs is not None and start in pos_in_idx and (stop - 1) in pos_in_idx:
            sel = [pos_in_idx[i] for i in range(start, stop)]
            cov = covs[np.ix_(sel, sel)]
        mids = None
        if comp.kind == "rw1_function" and model.bin_midpoints is not None and stop - start == model.bin_midpoints.size:
            mids = np.array(model.bin_midpoints)
        comps[comp.name] = ComponentSummary(comp.name, comp.kind, mean[start:stop], sd[start:stop],
                                            model.shapes.get(comp.name), mids, cov)

    thetas = np.array([p.theta for p in points]).reshape(len(points), model.n_theta)
    hypers = {}
    cov_t = getattr(engine, "theta_cov", None)
    for k, name in enumerate(model.theta_names):
        m = float(w @ thetas[:, k])
        if model.n_theta <= 2:
            s = float(np.sqrt(max(w @ (thetas[:, k] - m) ** 2, 0.0)))
        else:
            s = float(np.sqrt(cov_t[k, k]))
        best = int(np.argmax([p.log_posterior for p in points]))
        hypers[name] = HyperSummary(name, m, s, float(thetas[best, k]))

    eta_mean = np.array([p.summary.eta_mean for p in points])
    eta_var = np.array([p.summary.eta_var for p in points])
    obs_lt = np.array([p.summary.obs_log_tau for p in points])
    block_pred = {}
    block_units = {}
    eta_bar = w @ eta_mean
    for b in model.blocks:
        block_pred[b.name] = eta_bar[b.rows]
        block_units[b.name] = b.units

    fit = FitResult(
        theta_names=model.theta_names, thetas=thetas,
        log_posteriors=np.array([p.log_posterior for p in points]), weights=w,
        latent_mean=mean, latent_sd=sd, components=comps, hypers=hypers,
        block_predictors=block_pred, block_units=block_units,
        diagnostics=dict(n_hyper_points=len(points), n_clamped=int(engine.n_clamped),
                         n_gaussian_approx=int(engine.n_evaluations)),
        _eta_mean=eta_mean, _eta_var=eta_var, _obs_log_tau=obs_lt, _y=model.y,
        _pois=model.family_code == 0,
    )
    if model.grid is not None:
        g = model.grid
        fit.grid_shape = (g.n_row, g.n_col)
        fit.cell_area = g.cell_area
        fit.window = g.window.extent()
        fit.pattern_baseline = _pattern_baseline(model, fit, w, thetas)
    fit.dic, fit.p_d = dic(fit)
    return fit


def _pattern_baseline(model, fit: FitResult, w, thetas):
    """Posterior-mean predictor of the first count block without its binned-covariate term."""
    block = next((b for b in model.blocks if b.family == "poisson_count"), None)
    if block is None:
        return None
    g = model.grid
    base = np.full(g.n_cells, -np.inf)
    total = np.zeros(model.y.size)
    for info in model.term_info:
        if info["block"] != block.name or info["source"] == "bin":
            continue
        if info["hyper"] is None:
            total += info["factor"] * (info["matrix"] @ fit.latent_mean)
        else:
            scale = float(w @ thetas[:, info["hyper"]])
            total += scale * (info["matrix"] @ fit.latent_mean)
    base[block.units] = total[block.rows]
    return base
