import json

import numpy as np
import pytest

from lgcpkit import cli
from lgcpkit.engine import FitResult
from lgcpkit.errors import ConvergenceError
from lgcpkit.pattern import read_pattern


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def poisson_pattern(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--process", "poisson", "--intensity", 100, "--seed", 4, "--out", out) == 0
    return out / "pattern.csv"


@pytest.fixture
def intercept_model(tmp_path):
    path = tmp_path / "intercept.yaml"
    path.write_text("config_version: 1\nmodel: intercept\n")
    return path


def test_simulate_writes_manifest_pattern_and_provenance(tmp_path):
    out = tmp_path / "a"
    assert run("simulate", "--process", "strauss", "--beta", 100, "--seed", 2, "--out", out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "simulate"
    assert manifest["seed"] == 2
    assert manifest["config"]["beta"] == 100.0
    assert {"lgcpkit", "numpy", "scipy"} <= set(manifest["versions"])
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["params"] == {"beta": 100.0, "gamma": 0.5, "r": 0.05}
    assert prov["n_points"] == read_pattern(out / "pattern.csv").n


def test_identical_runs_are_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--process", "thomas", "--seed", 8, "--out", tmp_path / d) == 0
    for name in ("pattern.csv", "provenance.json", "manifest.json"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        if name == "manifest.json":  # the output directory is echoed
            a, b = a.replace(b"/a", b"/X"), b.replace(b"/b", b"/X")
        assert a == b, name


def test_intercept_fit_recovers_log_intensity(tmp_path, poisson_pattern, intercept_model):
    out = tmp_path / "fit"
    assert run("fit", "--pattern", poisson_pattern, "--model", intercept_model, "--grid", "20x20",
               "--out", out) == 0
    fit = FitResult.load(out / "fit.json")
    b0 = fit.component("b0")
    n = read_pattern(poisson_pattern).n
    assert b0.lower[0] < np.log(n) < b0.upper[0]
    assert b0.lower[0] < np.log(100.0) < b0.upper[0]
    assert (out / "dic.txt").read_text().startswith("DIC ")
    assert (out / "baseline_eta.csv").exists()
    assert (out / "hyperparameters.csv").read_text().splitlines() == ["name,mean,sd,lower,upper"]


def test_covariate_model_fit_writes_25_bins(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--process", "strauss", "--beta", 200, "--seed", 1, "--out", sim) == 0
    model = tmp_path / "cov.yaml"
    model.write_text("config_version: 1\nmodel: covariate\n")
    out = tmp_path / "fit"
    assert run("fit", "--pattern", sim / "pattern.csv", "--model", model, "--grid", "50x50", "--out", out) == 0
    rows = (out / "f_zc.csv").read_text().splitlines()
    assert rows[0] == "midpoint,mean,sd,lower,upper"
    assert len(rows) == 26
    hyper = (out / "hyperparameters.csv").read_text().splitlines()
    assert hyper[1].startswith("log_tau[f],")


def test_missing_model_file_exits_2_with_manifest_only(tmp_path, poisson_pattern):
    out = tmp_path / "fit"
    assert run("fit", "--pattern", poisson_pattern, "--model", tmp_path / "nope.yaml", "--out", out) == 2
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]


def test_bad_config_exits_2(tmp_path, poisson_pattern):
    bad = tmp_path / "bad.yaml"
    bad.write_text("config_version: 7\nmodel: intercept\n")
    assert run("fit", "--pattern", poisson_pattern, "--model", bad, "--out", tmp_path / "o") == 2
    broken = tmp_path / "broken.yaml"
    broken.write_text("config_version: 1\nmodel: [unclosed\n")
    assert run("fit", "--pattern", poisson_pattern, "--model", broken, "--out", tmp_path / "o2") == 2


def test_bad_grid_argument_is_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("simulate", "--process", "poisson", "--grid", "ten", "--out", tmp_path)
    assert exc.value.code == 2


def test_convergence_failure_exits_3(tmp_path, poisson_pattern, intercept_model, monkeypatch):
    import lgcpkit.models

    def fail(*a, **k):
        raise ConvergenceError("Newton iteration did not converge", 0.7)

    monkeypatch.setattr(lgcpkit.models, "fit_pattern", fail)
    assert run("fit", "--pattern", poisson_pattern, "--model", intercept_model, "--out", tmp_path / "o") == 3


def test_failing_study_stage_exits_4(tmp_path, monkeypatch):
    import lgcpkit.studies

    def fail(*a, **k):
        raise RuntimeError("simulated stage failure")

    monkeypatch.setattr(lgcpkit.studies, "run_study", fail)
    out = tmp_path / "study"
    assert run("study", "null", "--out", out) == 4
    assert (out / "manifest.json").exists()


def test_resimulate_summary_and_envelope(tmp_path, poisson_pattern, intercept_model, capsys):
    fit_dir = tmp_path / "fit"
    assert run("fit", "--pattern", poisson_pattern, "--model", intercept_model, "--grid", "10x10",
               "--out", fit_dir) == 0
    n = read_pattern(poisson_pattern).n
    for name in ("r1.csv", "r2.csv"):
        assert run("resimulate", "--fit", fit_dir / "fit.json", "--iters", 2000, "--seed", 3,
                   "--out", tmp_path / name) == 0
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()
    assert read_pattern(tmp_path / "r1.csv").n == n
    assert run("resimulate", "--fit", fit_dir / "fit.json", "--iters", 500, "--paranoid",
               "--out", tmp_path / "p") == 0
    assert "max |incremental - full|" in capsys.readouterr().out

    assert run("summary", "--pattern", poisson_pattern, "--kind", "L", "--n-r", 64, "--out", tmp_path / "s") == 0
    assert len((tmp_path / "s" / "L.csv").read_text().splitlines()) == 65

    env = tmp_path / "e"
    assert run("envelope", "--pattern", poisson_pattern, "--fit", fit_dir / "fit.json", "--n-sim", 4,
               "--iters", 500, "--n-r", 32, "--out", env) == 0
    rows = (env / "envelope.csv").read_text().splitlines()
    assert rows[0] == "r,lower,mean,upper" and len(rows) == 33
    assert (env / "observed.csv").exists()


def test_l_inhom_needs_intensity(tmp_path, poisson_pattern):
    assert run("summary", "--pattern", poisson_pattern, "--kind", "L_inhom", "--out", tmp_path / "s") == 2
