"""Scripted simulation studies for the constructed covariate.

Each study simulates a pattern, fits a model with the nearest-outside-point
covariate, resimulates from the fit and compares L-functions, then scores
the outcome with PASS/FAIL verdicts.  Every stage is a plain library call,
so the pipeline can be rerun piecemeal.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .covariate import nearest_point_distance, write_grid_csv
from .errors import ParameterError
from .models import constructed_covariate_model, fit_pattern, spatial_model
from .pattern import GridSpec, PointPattern, Window, write_pattern
from .plots import Series, write_svg
from .resimulate import FittedIntensity, metropolis_resample
from .simulate import (LinearTrend, StraussParams, ThomasParams, sim_poisson, sim_strauss,
                       sim_thomas, superimpose)
from .summaries import band_from, l_function, l_inhom

STUDIES = ("strauss", "thomas", "inhom", "null")
STRAUSS = StraussParams(beta=700.0, gamma=0.5, r=0.05)
THOMAS = ThomasParams(kappa=10.0, sigma=0.05, mu=50.0)
INHOM_THOMAS = ThomasParams(kappa=LinearTrend(50.0, 0.0), sigma=0.01, mu=5.0)
INHOM_POISSON = LinearTrend(0.25, 0.0)
NULL_INTENSITY = 700.0

# offsets separating the seed streams of one study run
RESIM_SEED = 1_000_000
GENERATOR_SEED = 2_000_000


@dataclass
class Verdict:
    label: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{self.label}: {'PASS' if self.passed else 'FAIL'}" + (f" ({self.detail})" if self.detail else "")


@dataclass
class StudyResult:
    name: str
    seed: int
    pattern: PointPattern
    fit: object
    verdicts: list[Verdict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def report(self) -> str:
        return "\n".join(v.line() for v in self.verdicts) + "\n"


def unit_square() -> Window:
    return Window(0.0, 1.0, 0.0, 1.0)


def generate(name: str, seed: int, window: Window | None = None) -> PointPattern:
    """One pattern from the named study's generating process."""
    w = window or unit_square()
    if name == "strauss":
        return sim_strauss(STRAUSS, w, seed)
    if name == "thomas":
        return sim_thomas(THOMAS, w, seed)
    if name == "inhom":
        rng = np.random.Generator(np.random.Philox(int(seed)))
        return superimpose(sim_thomas(INHOM_THOMAS, w, rng), sim_poisson(INHOM_POISSON, w, rng))
    if name == "null":
        return sim_poisson(NULL_INTENSITY, w, seed)
    raise ParameterError(f"unknown study {name!r}; choose from {STUDIES}")


def credible_difference(comp, a: float, b: float) -> tuple[float, float, float, float]:
    """Posterior mean, sd and 95% bounds of f(a) - f(b), linear between bin midpoints."""
    w = comp.interpolation_weights(a) - comp.interpolation_weights(b)
    m, s = comp.linear_combination(w)
    return m, s, m - 1.96 * s, m + 1.96 * s


def credible_slope(comp, lower: float, upper: float | None = None) -> tuple[float, float, float, float]:
    """Least-squares slope of f over bin midpoints in [lower, upper] with 95% bounds."""
    x = comp.midpoints
    sel = x >= lower
    if upper is not None:
        sel &= x <= upper
    if np.count_nonzero(sel) < 2:
        raise ParameterError(f"fewer than two bins in [{lower}, {upper}]")
    xc = x[sel] - x[sel].mean()
    w = np.zeros(x.size)
    w[sel] = xc / np.sum(xc * xc)
    m, s = comp.linear_combination(w)
    return m, s, m - 1.96 * s, m + 1.96 * s


def fit_study_model(name: str, pattern: PointPattern, grid: GridSpec, threads: int = 1):
    spec = spatial_model() if name == "inhom" else constructed_covariate_model()
    return fit_pattern(pattern, grid, spec, threads=threads)


def resimulated(fit, n_sim: int, seed: int, n_iter: int, threads: int = 1) -> list[PointPattern]:
    from .parallel import parallel_map

    fi = FittedIntensity.from_fit(fit)
    return parallel_map(lambda i: metropolis_resample(fi, fit.diagnostics["n_points"], n_iter, seed + i),
                        range(n_sim), threads)


def fitted_trend(fit, grid: GridSpec) -> np.ndarray:
    """Per-cell intensity from the intercept and spatial terms (constructed covariate left out)."""
    return np.exp(fit.pattern_baseline)


def run_study(name: str, seed: int = 1, grid_shape=(100, 100), n_sim: int = 50,
              n_iter: int = 100_000, threads: int = 1, intensity: str = "fitted") -> StudyResult:
    if name not in STUDIES:
        raise ParameterError(f"unknown study {name!r}; choose from {STUDIES}")
    w = unit_square()
    grid = GridSpec(grid_shape[0], grid_shape[1], w)
    pattern = generate(name, seed, w)
    fit = fit_study_model(name, pattern, grid, threads)
    f = fit.f_zc
    res = StudyResult(name, seed, pattern, fit)
    res.metrics.update(n_points=pattern.n, dic=fit.dic, p_d=fit.p_d)

    # shape of the fitted covariate effect
    if name == "strauss":
        d = credible_difference(f, 0.045, 0.005)
        sl = credible_slope(f, 0.07)
        res.metrics.update(diff_045_005=d, slope_beyond_007=sl)
        res.verdicts.append(Verdict("f increasing on [0,0.05] then flat", d[2] > 0 and sl[2] <= 0 <= sl[3],
                                    f"f(0.045)-f(0.005) 95% [{d[2]:.3f}, {d[3]:.3f}]; "
                                    f"slope beyond 0.07 95% [{sl[2]:.3f}, {sl[3]:.3f}]"))
    elif name in ("thomas", "inhom"):
        lo, hi = (0.01, 0.1) if name == "thomas" else (0.01, 0.05)
        d = credible_difference(f, lo, hi)
        res.metrics.update(diff_small_large=d)
        res.verdicts.append(Verdict("f decreasing at small distances", d[2] > 0,
                                    f"f({lo})-f({hi}) 95% [{d[2]:.3f}, {d[3]:.3f}]"))
    else:
        inside = (f.lower <= 0) & (f.upper >= 0)
        res.metrics.update(bins_excluding_zero=int(np.count_nonzero(~inside)))
        res.verdicts.append(Verdict("f 95% band contains 0 everywhere", bool(inside.all()),
                                    f"{int(np.count_nonzero(~inside))} of {inside.size} bins exclude 0"))
    if name == "inhom":
        fs = fit.component("fs").mean
        cx, _ = grid.centers()
        corr = float(np.corrcoef(fs, cx)[0, 1])
        res.metrics["corr_fs_x1"] = corr
        res.verdicts.append(Verdict("spatial effect follows the x1 trend", corr > 0.5, f"corr {corr:.3f}"))

    # resimulation and L-function comparison
    if n_sim >= 2:
        sims = resimulated(fit, n_sim, seed + RESIM_SEED, n_iter, threads)
        if name == "inhom":
            if intensity == "true":
                lam = _true_inhom_intensity(grid)
            else:
                lam = fitted_trend(fit, grid)

            def stat(p):
                return l_inhom(p, lam, grid=grid)
        else:
            stat = l_function
        original = stat(pattern)
        sim_fns = [stat(p) for p in sims]
        band = band_from(sim_fns)
        res.curves.update(original=original, resimulated=sim_fns[0], band=band)
        res.metrics["resimulated_pattern"] = sims[0]
        inside = band.contains(original)
        res.metrics["frac_r_inside_band"] = float(inside.mean())
        if name == "strauss":
            res.verdicts.append(Verdict("original L inside resimulation envelopes at all r", bool(inside.all()),
                                        f"{int(np.count_nonzero(~inside))} of {inside.size} r values outside"))
        elif name == "thomas":
            gen = band_from([l_function(generate("thomas", seed + GENERATOR_SEED + i, w))
                             for i in range(n_sim)])
            r05 = float(band.r[np.argmin(np.abs(band.r - 0.05))])
            sim_mean = band.mean[np.argmin(np.abs(band.r - 0.05))]
            gen_mean = gen.mean[np.argmin(np.abs(gen.r - 0.05))]
            res.curves["generator"] = gen
            res.metrics.update(sim_mean_L_005=float(sim_mean), gen_mean_L_005=float(gen_mean))
            res.verdicts.append(Verdict("resimulated clustering weaker than generator",
                                        bool(r05 < sim_mean < gen_mean),
                                        f"L(0.05): Poisson {r05:.4f}, resimulated {sim_mean:.4f}, "
                                        f"generator {gen_mean:.4f}"))
        elif name == "inhom":
            i = np.argmin(np.abs(band.r - 0.02))
            res.verdicts.append(Verdict("inhomogeneous L above the Poisson line at small r",
                                        bool(original.value[i] > band.r[i]),
                                        f"L_inhom({band.r[i]:.3f}) = {original.value[i]:.4f}"))
    return res


def _true_inhom_intensity(grid: GridSpec) -> np.ndarray:
    cx, cy = grid.centers()
    k = INHOM_THOMAS
    return k.kappa(cx, cy) * k.mu + INHOM_POISSON(cx, cy)


def write_study(res: StudyResult, out_dir, plots: bool = False) -> list[str]:
    """Write the figure-equivalent CSV set (and SVGs) for a study run."""
    os.makedirs(out_dir, exist_ok=True)
    files = []

    def path(name):
        p = os.path.join(out_dir, name)
        files.append(p)
        return p

    fit = res.fit
    grid = GridSpec(fit.grid_shape[0], fit.grid_shape[1], res.pattern.window)
    write_pattern(res.pattern, path("pattern.csv"))
    zc = nearest_point_distance(res.pattern, grid, fit.edge_rule)
    write_grid_csv(zc.values, grid, path("zc_grid.csv"))
    fit.save(path("fit.json"))
    write_f_zc(fit, path("f_zc.csv"))
    if "fs" in fit.components:
        write_grid_csv(fit.component("fs").mean, grid, path("fs_mean_grid.csv"))
    if "resimulated_pattern" in res.metrics:
        write_pattern(res.metrics["resimulated_pattern"], path("resimulated_pattern.csv"))
    for key in ("original", "resimulated"):
        if key in res.curves:
            res.curves[key].write_csv(path(f"L_{key}.csv"))
    if "band" in res.curves:
        res.curves["band"].write_csv(path("L_envelope.csv"))
    if "generator" in res.curves:
        res.curves["generator"].write_csv(path("L_generator_envelope.csv"))
    metrics = {k: v for k, v in res.metrics.items() if k != "resimulated_pattern"}
    with open(path("metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=1, default=float)
        fh.write("\n")
    with open(path("verdict.txt"), "w", encoding="utf-8") as fh:
        fh.write(res.report())
    if plots:
        f = fit.f_zc
        write_svg(path("f_zc.svg"), [Series(f.midpoints, f.mean, "posterior mean"),
                                     Series(f.midpoints, f.lower, "95% lower", dashed=True),
                                     Series(f.midpoints, f.upper, "95% upper", dashed=True)],
                  title="constructed covariate effect", xlabel="z_c", ylabel="f")
        if "band" in res.curves:
            b = res.curves["band"]
            o = res.curves["original"]
            write_svg(path("L_envelope.svg"),
                      [Series(b.r, b.lower - b.r, "lower", dashed=True),
                       Series(b.r, b.upper - b.r, "upper", dashed=True),
                       Series(b.r, b.mean - b.r, "mean of resimulated"),
                       Series(o.r, o.value - o.r, "original")],
                      title="L(r) - r with resimulation envelopes", xlabel="r", ylabel="L(r) - r")
    return files


def write_f_zc(fit, path) -> None:
    f = fit.f_zc
    if f is None:
        raise ParameterError("fit has no constructed-covariate effect")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("midpoint,mean,sd,lower,upper\n")
        for row in zip(f.midpoints, f.mean, f.sd, f.lower, f.upper):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
