"""Command-line interface: ``lgcpkit <subcommand> ...``.

Every run writes ``manifest.json`` into its output directory before any
result file.  Exit codes: 0 success, 2 bad input (parse, model or parameter
errors, missing files), 3 numerical failure (convergence, indefinite
matrix), 4 a study or replicate stage failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__
from .errors import (ConvergenceError, IndefiniteError, LgcpError, ReplicateError)

log = logging.getLogger("lgcpkit")

EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_STAGE = 4


class StageError(Exception):
    """Wraps a failure inside a study stage (exit code 4)."""


def _grid_arg(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 100x100, got {text!r}") from None
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return r, c


def _window_arg(text: str):
    from .pattern import Window

    try:
        x0, x1, y0, y1 = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("window must be x_min,x_max,y_min,y_max") from None
    return Window(x0, x1, y0, y1)


def _versions() -> dict:
    import numba
    import scipy

    out = {"lgcpkit": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "numba": numba.__version__}
    try:
        import cvxopt
        out["cvxopt"] = cvxopt.__version__
    except ImportError:  # pragma: no cover - optional backend
        pass
    return out


def _echo(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        if isinstance(v, tuple):
            v = list(v)
        elif not isinstance(v, (int, float, str, bool, list, type(None))):
            v = repr(v)
        out[k] = v
    return out


def write_manifest(out_dir, args, extra: dict | None = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"subcommand": args.command, "config": _echo(args), "versions": _versions(),
                "seed": getattr(args, "seed", None), "rng": "numpy Philox (counter-based, 64-bit)"}
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _grid_for(window, shape):
    from .pattern import GridSpec

    return GridSpec(shape[0], shape[1], window)


# ------------------------------------------------------------------ simulate

def cmd_simulate(args) -> int:
    from .pattern import write_pattern
    from .simulate import (LinearTrend, StraussParams, ThomasParams, provenance, sim_poisson,
                           sim_strauss, sim_thomas)

    write_manifest(args.out, args)
    w = args.window
    if args.process == "poisson":
        params = LinearTrend(args.slope, args.intensity) if args.slope else args.intensity
        pat = sim_poisson(params, w, args.seed)
        settings = {}
    elif args.process == "strauss":
        params = StraussParams(args.beta, args.gamma, args.r)
        pat = sim_strauss(params, w, args.seed, n_sweeps=args.n_sweeps)
        settings = {"n_sweeps": args.n_sweeps, "burn_in": 0.5}
    elif args.process == "thomas":
        params = ThomasParams(args.kappa, args.sigma, args.mu)
        pat = sim_thomas(params, w, args.seed)
        settings = {"parent_margin": 4 * args.sigma}
    else:
        from .studies import generate

        params = {"study": args.process}
        pat = generate(args.process, args.seed, w)
        settings = {}
    write_pattern(pat, os.path.join(args.out, "pattern.csv"))
    prov = provenance(args.process, params if not isinstance(params, (int, float)) else {"intensity": params},
                      args.seed, **settings)
    prov["n_points"] = int(pat.n)
    with open(os.path.join(args.out, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(prov, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"{pat.n} points written to {os.path.join(args.out, 'pattern.csv')}")
    return 0


# ----------------------------------------------------------------------- fit

def write_fit_outputs(fit, grid, out_dir) -> None:
    from .covariate import write_grid_csv
    from .studies import write_f_zc

    fit.save(os.path.join(out_dir, "fit.json"))
    for name, comp in fit.components.items():
        if comp.mean.size == grid.n_cells and comp.kind != "fixed_effect":
            write_grid_csv(comp.mean, grid, os.path.join(out_dir, f"{name}_mean.csv"))
            write_grid_csv(comp.sd, grid, os.path.join(out_dir, f"{name}_sd.csv"))
    if fit.pattern_baseline is not None:
        write_grid_csv(np.where(np.isfinite(fit.pattern_baseline), fit.pattern_baseline, np.nan), grid,
                       os.path.join(out_dir, "baseline_eta.csv"))
    if fit.f_zc is not None:
        write_f_zc(fit, os.path.join(out_dir, "f_zc.csv"))
    with open(os.path.join(out_dir, "dic.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"DIC {fit.dic:.10g}\np_D {fit.p_d:.10g}\n")
    with open(os.path.join(out_dir, "hyperparameters.csv"), "w", encoding="utf-8") as fh:
        fh.write("name,mean,sd,lower,upper\n")
        for name, h in fit.hypers.items():
            fh.write(f"{name},{h.mean:.17g},{h.sd:.17g},{h.lower:.17g},{h.upper:.17g}\n")


def cmd_fit(args) -> int:
    from .covariate import read_covariate
    from .models import fit_pattern, load_spec
    from .pattern import read_pattern

    write_manifest(args.out, args)
    spec, cfg = load_spec(args.model)
    pattern = read_pattern(args.pattern)
    shape = args.grid
    if shape is None:
        g = cfg.get("grid") or {}
        shape = (int(g.get("n_row", 100)), int(g.get("n_col", 100)))
    grid = _grid_for(pattern.window, shape)
    covariates = {}
    for item in args.covariate or []:
        name, _, path = item.partition("=")
        if not path:
            raise argparse.ArgumentTypeError(f"--covariate expects NAME=PATH, got {item!r}")
        covariates[name] = read_covariate(path, grid, name)
    fit = fit_pattern(pattern, grid, spec, covariates, threads=args.threads)
    write_fit_outputs(fit, grid, args.out)
    print(f"DIC {fit.dic:.2f} (p_D {fit.p_d:.2f}); results in {args.out}")
    return 0


# ---------------------------------------------------------------- resimulate

def _split_out(out: str, default_name: str) -> tuple[str, str]:
    if out.endswith(".csv"):
        return os.path.dirname(out) or ".", out
    return out, os.path.join(out, default_name)


def cmd_resimulate(args) -> int:
    from .engine import FitResult
    from .pattern import write_pattern
    from .resimulate import FittedIntensity, resample_chain

    out_dir, out_file = _split_out(args.out, "pattern.csv")
    write_manifest(out_dir, args)
    fit = FittedIntensity.from_fit(FitResult.load(args.fit))
    n = args.n_points or fit.n_points
    if n is None:
        raise argparse.ArgumentTypeError("fit.json does not record the point count; pass --n-points")
    res = resample_chain(fit, n, args.iters, args.seed, paranoid=args.paranoid,
                         conditional=args.conditional)
    write_pattern(res.pattern, out_file)
    msg = f"acceptance rate {res.acceptance_rate:.3f}"
    if args.paranoid:
        msg += f"; max |incremental - full| log ratio {res.max_ratio_error:.3e}"
    print(msg)
    return 0


# --------------------------------------------------------- summary, envelope

def _statistic(args, window):
    from .summaries import k_function, l_function, l_inhom

    if args.kind == "K":
        return lambda p: k_function(p, args.r_max, args.n_r)
    if args.kind == "L":
        return lambda p: l_function(p, args.r_max, args.n_r)
    if not args.intensity:
        raise argparse.ArgumentTypeError("L_inhom needs --intensity GRID.csv")
    from .covariate import read_grid_csv

    if args.grid is None:
        raise argparse.ArgumentTypeError("L_inhom needs --grid RxC matching the intensity file")
    grid = _grid_for(window, args.grid)
    lam = read_grid_csv(args.intensity, grid)
    return lambda p: l_inhom(p, lam, grid=grid, r_max=args.r_max, n_r=args.n_r)


def cmd_summary(args) -> int:
    from .pattern import read_pattern

    write_manifest(args.out, args)
    pattern = read_pattern(args.pattern)
    fn = _statistic(args, pattern.window)(pattern)
    fn.write_csv(os.path.join(args.out, f"{args.kind}.csv"))
    return 0


def cmd_envelope(args) -> int:
    from .engine import FitResult
    from .pattern import read_pattern
    from .resimulate import FittedIntensity, metropolis_resample
    from .studies import generate
    from .summaries import envelopes

    write_manifest(args.out, args)
    observed = read_pattern(args.pattern) if args.pattern else None
    if args.fit:
        fi = FittedIntensity.from_fit(FitResult.load(args.fit))
        window = fi.grid.window
        n = fi.n_points or (observed.n if observed is not None else None)

        def gen(seed):
            return metropolis_resample(fi, n, args.iters, seed)
    elif args.process:
        window = observed.window if observed is not None else _window_arg("0,1,0,1")

        def gen(seed):
            return generate(args.process, seed, window)
    else:
        raise argparse.ArgumentTypeError("envelope needs --fit or --process")
    stat = _statistic(args, window)
    band = envelopes(gen, stat, args.n_sim, seed=args.seed, threads=args.threads)
    band.write_csv(os.path.join(args.out, "envelope.csv"))
    if observed is not None:
        fn = stat(observed)
        fn.write_csv(os.path.join(args.out, "observed.csv"))
        inside = band.contains(fn)
        print(f"observed inside envelope at {int(inside.sum())} of {inside.size} r values")
    return 0


# --------------------------------------------------------------------- study

def cmd_study(args) -> int:
    from .studies import run_study, write_study

    write_manifest(args.out, args)
    try:
        res = run_study(args.name, seed=args.seed, grid_shape=args.grid or (100, 100),
                        n_sim=args.n_sim, n_iter=args.iters, threads=args.threads,
                        intensity=args.intensity_source)
        write_study(res, args.out, plots=args.plots)
    except Exception as exc:  # any failing stage
        raise StageError(f"study {args.name} failed: {exc}") from exc
    sys.stdout.write(res.report())
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgcpkit", description="Lattice log-Gaussian Cox process toolkit.")
    p.add_argument("--version", action="version", version=f"lgcpkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker pool size")
        sp.add_argument("--grid", type=_grid_arg, default=None, help="lattice size RxC")
        if seed:
            sp.add_argument("--seed", type=int, default=1)
        sp.add_argument("--paranoid", action="store_true",
                        help="recompute resampler likelihoods from scratch each step")
        sp.add_argument("--plots", action="store_true", help="also write SVG plots")

    s = sub.add_parser("simulate", help="simulate a point pattern")
    common(s)
    s.add_argument("--process", required=True, choices=["poisson", "strauss", "thomas", "inhom"])
    s.add_argument("--window", type=_window_arg, default="0,1,0,1")
    s.add_argument("--intensity", type=float, default=700.0)
    s.add_argument("--slope", type=float, default=0.0, help="Poisson intensity slope in x")
    s.add_argument("--beta", type=float, default=700.0)
    s.add_argument("--gamma", type=float, default=0.5)
    s.add_argument("--r", type=float, default=0.05)
    s.add_argument("--n-sweeps", type=int, default=100)
    s.add_argument("--kappa", type=float, default=10.0)
    s.add_argument("--sigma", type=float, default=0.05)
    s.add_argument("--mu", type=float, default=50.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="fit a model to a pattern")
    common(s)
    s.add_argument("--pattern", required=True)
    s.add_argument("--model", required=True, help="YAML/JSON model config")
    s.add_argument("--covariate", action="append", metavar="NAME=PATH")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("resimulate", help="Metropolis resampling from a fitted model")
    common(s)
    s.add_argument("--fit", required=True)
    s.add_argument("--iters", type=int, default=100_000)
    s.add_argument("--n-points", type=int, default=None)
    s.add_argument("--conditional", action="store_true",
                   help="target the multinomial law given the point count")
    s.set_defaults(func=cmd_resimulate)

    for name, func in (("summary", cmd_summary), ("envelope", cmd_envelope)):
        s = sub.add_parser(name, help=f"{name} of K/L functions")
        common(s)
        s.add_argument("--pattern", required=(name == "summary"))
        s.add_argument("--kind", choices=["K", "L", "L_inhom"], default="L")
        s.add_argument("--intensity", help="full-grid intensity CSV for L_inhom")
        s.add_argument("--r-max", type=float, default=None)
        s.add_argument("--n-r", type=int, default=512)
        if name == "envelope":
            s.add_argument("--fit", help="resimulate from this fit")
            s.add_argument("--process", choices=["strauss", "thomas", "inhom", "null"],
                           help="simulate replicates from a study generator")
            s.add_argument("--n-sim", type=int, default=50)
            s.add_argument("--iters", type=int, default=100_000)
        s.set_defaults(func=func)

    s = sub.add_parser("study", help="run a scripted simulation study")
    common(s)
    s.add_argument("name", choices=["strauss", "thomas", "inhom", "null"])
    s.add_argument("--n-sim", type=int, default=50)
    s.add_argument("--iters", type=int, default=100_000)
    s.add_argument("--intensity-source", choices=["fitted", "true"], default="fitted",
                   help="intensity used for the inhomogeneous L-function")
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConvergenceError, IndefiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StageError, ReplicateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (LgcpError, OSError, argparse.ArgumentTypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
