"""Declarative latent Gaussian model specification and its assembly.

A model is a set of latent components (intercepts, fixed effects, random
walks, i.i.d. effects) and likelihood blocks.  Each block lists predictor
terms; a term adds one component, indexed per observation, optionally
multiplied by a per-observation weight and by a scaling hyperparameter
(the "copy" mechanism that lets several blocks share one spatial field).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..covariate import BinnedCovariate, ConstructedCovariate, CovariateField, bin_covariate, nearest_point_distance
from ..errors import ModelError
from ..gmrf import PrecisionPrior, iid_structure, rw1_structure, rw2_lattice_structure
from ..pattern import CountGrid, GridSpec, PointPattern, grid_counts

FAMILIES = ("poisson_count", "poisson_log", "gaussian")
KINDS = ("intercept", "fixed_effect", "rw1_function", "rw2_spatial", "iid")
RANDOM_KINDS = ("rw1_function", "rw2_spatial", "iid")


@dataclass
class Component:
    name: str
    kind: str
    length: int | None = None
    prior: PrecisionPrior = field(default_factory=PrecisionPrior)
    log_precision: float | None = None  # fixes the precision when set
    sum_to_zero: bool | None = None
    fixed_precision: float = 1e-3  # prior precision for intercept / fixed_effect
    jitter: float = 1e-6
    shape: tuple[int, int] | None = None  # lattice for rw2_spatial
    initial_log_precision: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"component {self.name!r}: unknown kind {self.kind!r}")
        if self.sum_to_zero is None:
            self.sum_to_zero = self.kind in ("rw1_function", "rw2_spatial")
        if self.kind == "intercept":
            self.length = 1
        if self.kind == "rw2_spatial" and self.shape is not None and self.length is None:
            self.length = self.shape[0] * self.shape[1]

    @property
    def is_random(self) -> bool:
        return self.kind in RANDOM_KINDS

    @property
    def has_hyper(self) -> bool:
        return self.is_random and self.log_precision is None


@dataclass
class Term:
    component: str
    index: Any = "const"  # "const" | "cell" | "bin" | "point" | "cell_of_point" | int array
    weight: Any = None  # None | "mark:<name>" | "covariate:<name>" | float array
    scale: str | None = None


@dataclass
class Block:
    name: str
    family: str
    response: Any = "counts"  # "counts" | "mark:<name>" | "covariate:<name>" | array
    terms: list[Term] = field(default_factory=list)
    offset: Any = None  # None | "log_area" | array; poisson_count defaults to log cell area
    prior: PrecisionPrior = field(default_factory=PrecisionPrior)
    log_precision: float | None = None  # gaussian observation precision, fixed when set
    initial_log_precision: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"block {self.name!r}: unknown family {self.family!r}")


@dataclass
class Scaling:
    name: str
    prior_mean: float = 1.0
    prior_sd: float = 10.0
    value: float | None = None  # fixes the scaling when set

    @property
    def initial(self) -> float:
        return self.prior_mean if self.value is None else self.value


@dataclass
class ModelSpec:
    components: list[Component]
    blocks: list[Block]
    scalings: list[Scaling] = field(default_factory=list)
    n_bins: int = 25
    edge_rule: str | None = None

    def component(self, name: str) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise ModelError(f"unknown component {name!r}")


@dataclass
class ModelData:
    """Everything a model's index and response sources can refer to."""

    grid: GridSpec | None = None
    counts: CountGrid | None = None
    pattern: PointPattern | None = None
    covariates: dict[str, CovariateField] = field(default_factory=dict)
    constructed: ConstructedCovariate | None = None
    binned: BinnedCovariate | None = None

    @classmethod
    def from_pattern(cls, pattern: PointPattern, grid: GridSpec, covariates=None,
                     n_bins: int | None = 25, edge_rule: str | None = None) -> "ModelData":
        if edge_rule is None:
            edge_rule = "none" if grid.window.cell_mask is None else "censor"
        data = cls(grid=grid, counts=grid_counts(pattern, grid), pattern=pattern,
                   covariates=dict(covariates or {}))
        if n_bins and pattern.n >= 2:
            data.constructed = nearest_point_distance(pattern, grid, edge_rule)
            data.binned = bin_covariate(data.constructed, n_bins)
        return data


@dataclass
class HyperSpec:
    name: str
    kind: str  # "log_precision" | "obs_log_precision" | "scaling"
    target: str
    initial: float

    def log_prior(self, value: float, owner) -> float:
        if self.kind == "scaling":
            z = (value - owner.prior_mean) / owner.prior_sd
            return float(-0.5 * z * z - np.log(owner.prior_sd) - 0.5 * np.log(2 * np.pi))
        return owner.prior.logpdf_log(value)


@dataclass
class AssembledBlock:
    name: str
    family: str
    rows: slice  # rows of the stacked observation vector
    y: np.ndarray
    offset: np.ndarray
    units: np.ndarray  # cell or point index of each retained observation
    hyper: int | None = None  # index into theta of the gaussian precision
    log_precision: float | None = None


@dataclass
class AssembledModel:
    spec: ModelSpec
    layout: dict[str, tuple[int, int]]
    dim: int
    blocks: list[AssembledBlock]
    hypers: list[HyperSpec]
    a_fixed: sp.csr_matrix
    a_scaled: list[tuple[int, sp.csr_matrix]]  # (theta index, matrix)
    y: np.ndarray
    offset: np.ndarray
    family_code: np.ndarray  # 0 poisson, 1 gaussian
    constraints: np.ndarray  # k x dim
    component_logdet: dict[str, float]  # logdet of (R + jitter I) per random component
    constraint_var: dict[str, float]  # 1'(R + jitter I)^{-1} 1 per constrained component
    structures: dict[str, sp.csc_matrix]
    term_info: list[dict] = field(default_factory=list)
    grid: GridSpec | None = None
    bin_midpoints: np.ndarray | None = None
    hyper_index: dict = field(default_factory=dict)
    shapes: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def n_theta(self) -> int:
        return len(self.hypers)

    @property
    def theta_names(self) -> list[str]:
        return [h.name for h in self.hypers]

    def initial_theta(self) -> np.ndarray:
        return np.array([h.initial for h in self.hypers], dtype=float)

    def hyper_owner(self, h: HyperSpec):
        if h.kind == "log_precision":
            return self.spec.component(h.target)
        if h.kind == "obs_log_precision":
            return next(b for b in self.spec.blocks if b.name == h.target)
        return next(s for s in self.spec.scalings if s.name == h.target)

    def log_prior_theta(self, theta) -> float:
        return float(sum(h.log_prior(theta[k], self.hyper_owner(h)) for k, h in enumerate(self.hypers)))

    def design(self, theta) -> sp.csr_matrix:
        a = self.a_fixed
        for k, m in self.a_scaled:
            a = a + theta[k] * m
        return a.tocsr()

    def precision(self, theta) -> sp.csc_matrix:
        """Prior precision Q(theta): tau * (R + jitter I) per random block."""
        diag_blocks = []
        for comp in self.spec.components:
            start, stop = self.layout[comp.name]
            n = stop - start
            if comp.is_random:
                diag_blocks.append(np.exp(self.log_tau(comp, theta)) * self.structures[comp.name])
            else:
                diag_blocks.append(comp.fixed_precision * sp.identity(n, format="csc"))
        return sp.block_diag(diag_blocks, format="csc")

    def log_tau(self, comp: Component, theta) -> float:
        if comp.log_precision is not None:
            return comp.log_precision
        return float(theta[self.hyper_index[("log_precision", comp.name)]])

    def obs_log_precision(self, block: AssembledBlock, theta) -> float:
        if block.hyper is not None:
            return float(theta[block.hyper])
        return float(block.log_precision if block.log_precision is not None else 0.0)

    def prior_log_terms(self, theta) -> tuple[float, float]:
        """(logdet Q(theta), logdet C Q^{-1} C') from cached per-component constants."""
        logdet = 0.0
        cons = 0.0
        for comp in self.spec.components:
            start, stop = self.layout[comp.name]
            n = stop - start
            if comp.is_random:
                lt = self.log_tau(comp, theta)
                logdet += n * lt + self.component_logdet[comp.name]
                if comp.sum_to_zero:
                    cons += np.log(self.constraint_var[comp.name]) - lt
            else:
                logdet += n * np.log(comp.fixed_precision)
        return logdet, cons

    def term_predictor(self, info: dict, latent, theta) -> np.ndarray:
        """Contribution of one term to the stacked predictor."""
        scale = info["factor"] if info["hyper"] is None else theta[info["hyper"]]
        return scale * (info["matrix"] @ latent)

    def block(self, name: str) -> AssembledBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise ModelError(f"unknown block {name!r}")

    def component_slice(self, name: str) -> slice:
        start, stop = self.layout[name]
        return slice(start, stop)


def _resolve_response(block: Block, data: ModelData):
    """Response vector and the unit type ('cell' or 'point') of its observations."""
    r = block.response
    if isinstance(r, str):
        if r == "counts":
            if data.counts is None:
                raise ModelError(f"block {block.name!r} needs counts")
            y = data.counts.counts.astype(float)
            y[~data.counts.observed] = np.nan
            return y, "cell"
        src, _, name = r.partition(":")
        if src == "mark":
            if data.pattern is None or name not in data.pattern.marks:
                raise ModelError(f"block {block.name!r}: unknown mark {name!r}")
            return data.pattern.marks[name].astype(float), "point"
        if src == "covariate":
            if name not in data.covariates:
                raise ModelError(f"block {block.name!r}: unknown covariate {name!r}")
            return np.array(data.covariates[name].values, dtype=float), "cell"
        raise ModelError(f"block {block.name!r}: bad response {r!r}")
    return np.asarray(r, dtype=float).ravel(), "explicit"


def _resolve_index(term: Term, units: str, n_obs: int, data: ModelData, block_name: str):
    idx = term.index
    if isinstance(idx, str):
        if idx == "const":
            return np.zeros(n_obs, dtype=np.int64), "const"
        if idx == "cell" and units == "cell":
            return np.arange(n_obs, dtype=np.int64), "cell"
        if idx == "bin" and units == "cell":
            if data.binned is None:
                raise ModelError(f"block {block_name!r}: no binned constructed covariate available")
            return data.binned.bin_index.astype(np.int64), "bin"
        if idx == "point" and units == "point":
            return np.arange(n_obs, dtype=np.int64), "point"
        if idx == "cell_of_point" and units == "point":
            return data.grid.cell_index(data.pattern.x, data.pattern.y), "cell"
        raise ModelError(f"block {block_name!r}: index {idx!r} not valid for {units} observations")
    arr = np.asarray(idx, dtype=np.int64).ravel()
    if arr.size != n_obs:
        raise ModelError(f"block {block_name!r}: index array has {arr.size} entries for {n_obs} observations")
    return arr, "explicit"


def _resolve_weight(term: Term, units: str, n_obs: int, data: ModelData, block_name: str):
    w = term.weight
    if w is None:
        return np.ones(n_obs)
    if isinstance(w, str):
        src, _, name = w.partition(":")
        if src == "mark" and units == "point" and data.pattern is not None and name in data.pattern.marks:
            return data.pattern.marks[name].astype(float)
        if src == "covariate" and units == "cell" and name in data.covariates:
            return np.array(data.covariates[name].values, dtype=float)
        raise ModelError(f"block {block_name!r}: bad weight {w!r}")
    arr = np.asarray(w, dtype=float).ravel()
    if arr.size != n_obs:
        raise ModelError(f"block {block_name!r}: weight array has {arr.size} entries for {n_obs} observations")
    return arr


def _infer_length(comp: Component, source: str, data: ModelData):
    if source == "cell":
        return data.grid.n_cells
    if source == "bin":
        return data.binned.n_bins
    if source == "point":
        return data.pattern.n
    return None


def assemble(spec: ModelSpec, data: ModelData | None = None) -> AssembledModel:
    """Lay out the stacked latent vector and build the design map."""
    data = data or ModelData()
    names = [c.name for c in spec.components]
    if len(set(names)) != len(names):
        raise ModelError("component names must be unique")
    scal_names = {s.name for s in spec.scalings}
    if not spec.blocks:
        raise ModelError("model has no likelihood blocks")

    # first pass: responses, indices, lengths
    resolved = []
    lengths: dict[str, int] = {}
    for block in spec.blocks:
        y, units = _resolve_response(block, data)
        keep = ~np.isnan(y)
        if not np.any(keep):
            raise ModelError(f"block {block.name!r} has no observed values")
        if block.family != "gaussian":
            if np.any(y[keep] < 0) or np.any(y[keep] != np.round(y[keep])):
                raise ModelError(f"block {block.name!r}: Poisson responses must be nonnegative integers")
        terms = []
        for term in block.terms:
            if term.component not in names:
                raise ModelError(f"block {block.name!r} references unknown component {term.component!r}")
            if term.scale is not None and term.scale not in scal_names:
                raise ModelError(f"block {block.name!r} references unknown scaling {term.scale!r}")
            idx, source = _resolve_index(term, units, y.size, data, block.name)
            wt = _resolve_weight(term, units, y.size, data, block.name)
            comp = spec.component(term.component)
            n_inf = _infer_length(comp, source, data)
            if comp.length is None:
                if n_inf is not None:
                    lengths.setdefault(comp.name, n_inf)
                else:
                    valid = idx[idx >= 0]
                    need = int(valid.max()) + 1 if valid.size else 1
                    lengths[comp.name] = max(lengths.get(comp.name, 0), need)
            terms.append((term, idx, wt, source))
        resolved.append((block, y, keep, units, terms))

    layout: dict[str, tuple[int, int]] = {}
    start = 0
    structures: dict[str, sp.csc_matrix] = {}
    shapes: dict[str, tuple[int, int]] = {}
    for comp in spec.components:
        n = int(comp.length if comp.length is not None else lengths.get(comp.name, 1))
        if comp.kind == "rw2_spatial":
            shape = comp.shape
            if shape is None:
                if data.grid is None:
                    raise ModelError(f"component {comp.name!r}: rw2_spatial needs a lattice shape")
                shape = (data.grid.n_row, data.grid.n_col)
            if shape[0] * shape[1] != n:
                raise ModelError(f"component {comp.name!r}: lattice {shape} does not match length {n}")
            shapes[comp.name] = shape
            structures[comp.name] = rw2_lattice_structure(*shape).to_scipy()
        elif comp.kind == "rw1_function":
            structures[comp.name] = rw1_structure(n).to_scipy()
        elif comp.kind == "iid":
            structures[comp.name] = iid_structure(n).to_scipy()
        layout[comp.name] = (start, start + n)
        start += n
    dim = start

    # hyperparameters: component precisions, observation precisions, scalings
    hypers: list[HyperSpec] = []
    hyper_index: dict[tuple[str, str], int] = {}
    for comp in spec.components:
        if comp.has_hyper:
            hyper_index[("log_precision", comp.name)] = len(hypers)
            hypers.append(HyperSpec(f"log_tau[{comp.name}]", "log_precision", comp.name,
                                    comp.initial_log_precision))
    for block in spec.blocks:
        if block.family == "gaussian" and block.log_precision is None:
            hyper_index[("obs_log_precision", block.name)] = len(hypers)
            hypers.append(HyperSpec(f"log_tau_obs[{block.name}]", "obs_log_precision", block.name,
                                    block.initial_log_precision))
    for s in spec.scalings:
        if s.value is None:
            hyper_index[("scaling", s.name)] = len(hypers)
            hypers.append(HyperSpec(s.name, "scaling", s.name, s.initial))

    # design map
    fixed_r, fixed_c, fixed_v = [], [], []
    scaled: dict[int, tuple[list, list, list]] = {}
    ablocks: list[AssembledBlock] = []
    ys, offs, fam = [], [], []
    row0 = 0
    term_info = []
    for block, y, keep, units, terms in resolved:
        obs = np.flatnonzero(keep)
        n_obs = obs.size
        new_row = -np.ones(y.size, dtype=np.int64)
        new_row[obs] = row0 + np.arange(n_obs)
        for term, idx, wt, source in terms:
            comp = spec.component(term.component)
            c0, c1 = layout[comp.name]
            ok = keep & (idx >= 0) & ~np.isnan(wt) & (wt != 0)
            if np.any(idx[ok] >= c1 - c0):
                raise ModelError(f"block {block.name!r}: index out of range for {comp.name!r}")
            r = new_row[ok]
            c = c0 + idx[ok]
            v = wt[ok]
            info = dict(block=block.name, component=comp.name, source=source, scale=term.scale,
                        hyper=None, factor=1.0, entries=(r, c, v))
            if term.scale is None:
                fixed_r.append(r), fixed_c.append(c), fixed_v.append(v)
            else:
                sc = next(s for s in spec.scalings if s.name == term.scale)
                if sc.value is not None:
                    info["factor"] = sc.value
                    fixed_r.append(r), fixed_c.append(c), fixed_v.append(sc.value * v)
                else:
                    k = hyper_index[("scaling", sc.name)]
                    info["hyper"] = k
                    lists = scaled.setdefault(k, ([], [], []))
                    lists[0].append(r), lists[1].append(c), lists[2].append(v)
            term_info.append(info)
        if block.offset is None:
            off = np.full(y.size, np.log(data.grid.cell_area)) if block.family == "poisson_count" else np.zeros(y.size)
        elif isinstance(block.offset, str) and block.offset == "log_area":
            off = np.full(y.size, np.log(data.grid.cell_area))
        else:
            off = np.asarray(block.offset, dtype=float).ravel()
            if off.size != y.size:
                raise ModelError(f"block {block.name!r}: offset length mismatch")
        hyper = hyper_index.get(("obs_log_precision", block.name))
        ablocks.append(AssembledBlock(block.name, block.family, slice(row0, row0 + n_obs), y[obs],
                                      off[obs], obs, hyper, block.log_precision))
        ys.append(y[obs])
        offs.append(off[obs])
        fam.append(np.full(n_obs, 1 if block.family == "gaussian" else 0, dtype=np.int8))
        row0 += n_obs
    n_rows = row0

    def _csr(r, c, v):
        if not r:
            return sp.csr_matrix((n_rows, dim))
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n_rows, dim))

    a_fixed = _csr(fixed_r, fixed_c, fixed_v)
    for info in term_info:
        r, c, v = info.pop("entries")
        info["matrix"] = _csr([r], [c], [v])
    a_scaled = [(k, _csr(*lists)) for k, lists in sorted(scaled.items())]

    # constraints and per-component constants
    cons_rows = []
    comp_logdet: dict[str, float] = {}
    cons_var: dict[str, float] = {}
    for comp in spec.components:
        if not comp.is_random:
            continue
        c0, c1 = layout[comp.name]
        n = c1 - c0
        r = structures[comp.name]
        if comp.kind != "iid":
            r = (r + comp.jitter * sp.identity(n, format="csc")).tocsc()
            structures[comp.name] = r
        fac = splu(r, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
        comp_logdet[comp.name] = float(np.sum(np.log(fac.U.diagonal())))
        if comp.sum_to_zero:
            row = np.zeros(dim)
            row[c0:c1] = 1.0
            cons_rows.append(row)
            cons_var[comp.name] = float(np.ones(n) @ fac.solve(np.ones(n)))
    constraints = np.array(cons_rows).reshape(len(cons_rows), dim)

    model = AssembledModel(
        spec=spec, layout=layout, dim=dim, blocks=ablocks, hypers=hypers,
        a_fixed=a_fixed, a_scaled=a_scaled,
        y=np.concatenate(ys), offset=np.concatenate(offs), family_code=np.concatenate(fam),
        constraints=constraints, component_logdet=comp_logdet, constraint_var=cons_var,
        structures=structures, term_info=term_info, grid=data.grid,
        bin_midpoints=None if data.binned is None else data.binned.bin_midpoints,
        hyper_index=hyper_index, shapes=shapes,
    )
    return model
