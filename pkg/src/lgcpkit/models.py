"""Standard model specifications and the model/run config file format.

Config files are YAML or JSON key-value trees::

    config_version: 1
    grid: {n_row: 100, n_col: 100}
    n_bins: 25
    edge_rule: none            # or censor
    model: covariate           # shorthand for a built-in model, or:
    components:
      - {name: b0, kind: intercept}
      - {name: f, kind: rw1_function, prior: {shape: 1.0, rate: 5.0e-5}}
      - {name: fs, kind: rw2_spatial}
    scalings:
      - {name: beta2, prior_mean: 1.0, prior_sd: 10.0}
    blocks:
      - name: pattern
        family: poisson_count
        response: counts
        terms:
          - {component: b0}
          - {component: f, index: bin}
          - {component: fs, index: cell, scale: beta2}
"""
from __future__ import annotations

import json
from pathlib import Path

import yaml

from .engine.model import Block, Component, ModelSpec, Scaling, Term
from .errors import ModelError, ParseError
from .gmrf import PrecisionPrior

CONFIG_VERSION = 1


def intercept_only() -> ModelSpec:
    return ModelSpec([Component("b0", "intercept")],
                     [Block("pattern", "poisson_count", terms=[Term("b0")])], n_bins=None)


def constructed_covariate_model(n_bins: int = 25, edge_rule: str | None = None) -> ModelSpec:
    """eta = b0 + f(z_c): intercept plus a random-walk effect of the binned covariate."""
    return ModelSpec([Component("b0", "intercept"), Component("f", "rw1_function")],
                     [Block("pattern", "poisson_count", terms=[Term("b0"), Term("f", "bin")])],
                     n_bins=n_bins, edge_rule=edge_rule)


def spatial_model(n_bins: int | None = 25, edge_rule: str | None = None) -> ModelSpec:
    """eta = b0 + f(z_c) + f_s(s): adds a lattice RW2 spatial effect.

    With ``n_bins=None`` the constructed-covariate term is left out.
    """
    comps = [Component("b0", "intercept"), Component("fs", "rw2_spatial")]
    terms = [Term("b0"), Term("fs", "cell")]
    if n_bins:
        comps.insert(1, Component("f", "rw1_function"))
        terms.insert(1, Term("f", "bin"))
    return ModelSpec(comps, [Block("pattern", "poisson_count", terms=terms)],
                     n_bins=n_bins, edge_rule=edge_rule)


def covariate_joint_model(covariate: str, n_bins: int | None = None) -> ModelSpec:
    """Pattern and a noisy, partially observed covariate sharing one spatial field.

    Pattern: eta = b0 + beta * g(s) + f_s(s); covariate: z = a0 + g(s) + noise,
    so the covariate's effect enters through its smooth latent version ``g``.
    """
    comps = [Component("b0", "intercept"), Component("a0", "intercept"),
             Component("g", "rw2_spatial"), Component("fs", "rw2_spatial")]
    blocks = [
        Block("pattern", "poisson_count", terms=[Term("b0"), Term("g", "cell", scale="beta"),
                                                 Term("fs", "cell")]),
        Block("covariate", "gaussian", response=f"covariate:{covariate}",
              terms=[Term("a0"), Term("g", "cell")]),
    ]
    return ModelSpec(comps, blocks, [Scaling("beta", prior_mean=0.0)], n_bins=n_bins)


def marked_model(step: int = 4, leaf: str = "leaf", freq: str = "freq") -> ModelSpec:
    """Pattern with a Gaussian and a Poisson mark, built up in four steps.

    1. error terms only (iid cell effect u, iid tree effect w; the Gaussian
       mark's own error is its observation noise);
    2. adds one intercept per block;
    3. adds the Gaussian mark as a fixed-effect covariate of the Poisson mark;
    4. adds a shared RW2 spatial field, scaled by 1 (fixed) in the pattern
       block and by hyperparameters beta2, beta3 in the mark blocks.
    """
    if step not in (1, 2, 3, 4):
        raise ModelError("marked model step must be 1, 2, 3 or 4")
    comps = [Component("u", "iid"), Component("w", "iid")]
    pattern = [Term("u", "cell")]
    leaf_terms: list[Term] = []
    freq_terms = [Term("w", "point")]
    scalings: list[Scaling] = []
    if step >= 2:
        comps += [Component("b01", "intercept"), Component("b02", "intercept"),
                  Component("b03", "intercept")]
        pattern.append(Term("b01"))
        leaf_terms.append(Term("b02"))
        freq_terms.append(Term("b03"))
    if step >= 3:
        comps.append(Component("beta4", "fixed_effect", length=1))
        freq_terms.append(Term("beta4", "const", weight=f"mark:{leaf}"))
    if step >= 4:
        comps.append(Component("fs", "rw2_spatial"))
        scalings = [Scaling("beta1", value=1.0), Scaling("beta2", prior_mean=0.0),
                    Scaling("beta3", prior_mean=0.0)]
        pattern.append(Term("fs", "cell", scale="beta1"))
        leaf_terms.append(Term("fs", "cell_of_point", scale="beta2"))
        freq_terms.append(Term("fs", "cell_of_point", scale="beta3"))
    blocks = [Block("pattern", "poisson_count", terms=pattern),
              Block("leaf", "gaussian", response=f"mark:{leaf}", terms=leaf_terms),
              Block("freq", "poisson_log", response=f"mark:{freq}", terms=freq_terms)]
    return ModelSpec(comps, blocks, scalings, n_bins=None)


def fit_pattern(pattern, grid, spec: ModelSpec, covariates=None, **engine_kw):
    """Grid ``pattern``, assemble ``spec`` against it and run the engine."""
    from .engine import InlaEngine, ModelData, assemble

    data = ModelData.from_pattern(pattern, grid, covariates, n_bins=spec.n_bins,
                                  edge_rule=spec.edge_rule)
    model = assemble(spec, data)
    fit = InlaEngine(model, **engine_kw).fit()
    fit.edge_rule = data.constructed.edge_rule if data.constructed is not None else "none"
    fit.diagnostics["n_points"] = int(pattern.n)
    return fit


BUILTIN = {
    "intercept": intercept_only,
    "covariate": constructed_covariate_model,
    "covariate_spatial": spatial_model,
}


def _prior(d) -> PrecisionPrior:
    if d is None:
        return PrecisionPrior()
    return PrecisionPrior(float(d.get("shape", 1.0)), float(d.get("rate", 5e-5)))


def _check_keys(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ModelError(f"{where}: unknown keys {sorted(extra)}")


def spec_from_dict(cfg: dict) -> ModelSpec:
    """Build a ModelSpec from a parsed config tree."""
    if not isinstance(cfg, dict):
        raise ModelError("model config must be a mapping")
    version = cfg.get("config_version")
    if version != CONFIG_VERSION:
        raise ModelError(f"unsupported config_version {version!r} (expected {CONFIG_VERSION})")
    n_bins = cfg.get("n_bins", 25)
    edge_rule = cfg.get("edge_rule")
    if "model" in cfg:
        name = cfg["model"]
        if name not in BUILTIN:
            raise ModelError(f"unknown built-in model {name!r}; choose from {sorted(BUILTIN)}")
        if name == "intercept":
            return intercept_only()
        return BUILTIN[name](n_bins=n_bins, edge_rule=edge_rule)
    try:
        comps = []
        for c in cfg["components"]:
            _check_keys(c, {"name", "kind", "length", "prior", "log_precision", "sum_to_zero",
                            "fixed_precision", "jitter", "initial_log_precision"}, "component")
            comps.append(Component(c["name"], c["kind"], length=c.get("length"),
                                   prior=_prior(c.get("prior")),
                                   log_precision=c.get("log_precision"),
                                   sum_to_zero=c.get("sum_to_zero"),
                                   fixed_precision=float(c.get("fixed_precision", 1e-3)),
                                   jitter=float(c.get("jitter", 1e-6)),
                                   initial_log_precision=float(c.get("initial_log_precision", 0.0))))
        scalings = []
        for s in cfg.get("scalings", []):
            _check_keys(s, {"name", "prior_mean", "prior_sd", "value"}, "scaling")
            scalings.append(Scaling(s["name"], float(s.get("prior_mean", 1.0)),
                                    float(s.get("prior_sd", 10.0)), s.get("value")))
        blocks = []
        for b in cfg["blocks"]:
            _check_keys(b, {"name", "family", "response", "terms", "offset", "prior",
                            "log_precision", "initial_log_precision"}, "block")
            terms = []
            for t in b.get("terms", []):
                _check_keys(t, {"component", "index", "weight", "scale"}, "term")
                terms.append(Term(t["component"], t.get("index", "const"), t.get("weight"), t.get("scale")))
            blocks.append(Block(b["name"], b["family"], b.get("response", "counts"), terms,
                                b.get("offset"), _prior(b.get("prior")), b.get("log_precision"),
                                float(b.get("initial_log_precision", 0.0))))
    except KeyError as exc:
        raise ModelError(f"model config is missing required key {exc}") from None
    uses_bins = any(t.index == "bin" for b in blocks for t in b.terms)
    return ModelSpec(comps, blocks, scalings, n_bins=n_bins if uses_bins else None, edge_rule=edge_rule)


def load_config(path) -> dict:
    """Parse a YAML or JSON config file (JSON is valid YAML, so both go through yaml)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc.strerror}", path=str(path)) from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=str(path)) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(str(getattr(exc, "problem", exc)), line=None if mark is None else mark.line + 1,
                         path=str(path)) from None


def load_spec(path) -> tuple[ModelSpec, dict]:
    cfg = load_config(path)
    return spec_from_dict(cfg), cfg
