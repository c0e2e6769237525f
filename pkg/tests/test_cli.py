import json
import subprocess
import sys

import numpy as np
import pytest

from netcca.cli import main
from netcca.io import read_rows_csv, write_data_csv
from netcca.simulation import ScenarioSpec, build_scenario, sample_mvn
from netcca.tuning import TIE_TOLERANCE


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    truth = build_scenario(ScenarioSpec(2, 40, 40, 60))
    X, Y = sample_mvn(truth, 60, 2)
    write_data_csv(d / "x.csv", X)
    write_data_csv(d / "y.csv", Y)
    write_data_csv(d / "y_short.csv", Y[:50])
    edges = "\n".join(f"{i + 1} {j + 1}" for i, j in truth.graph_x.edges)
    (d / "g.txt").write_text("# star graph\n" + edges + "\n")
    return d


def base(d, *extra):
    return ["--x", str(d / "x.csv"), "--y", str(d / "y.csv"), "--graph-x", str(d / "g.txt"),
            "--graph-y", str(d / "g.txt"), *extra]


def test_fit_writes_model(inputs, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["fit", *base(inputs, "--tau-x", "0.1", "--tau-y", "0.1", "--out", str(out))]) == 0
    model = json.loads(out.read_text())
    assert len(model["components"]) == 1
    assert model["config"]["tauX"] == 0.1
    assert model["manifest"]["inputs"]["x"]["sha256"]
    assert "component 1" in capsys.readouterr().out


def test_row_mismatch(inputs, tmp_path, capsys):
    args = ["fit", "--x", str(inputs / "x.csv"), "--y", str(inputs / "y_short.csv"),
            "--tau-x", "0.1", "--tau-y", "0.1", "--out", str(tmp_path / "m.json")]
    assert main(args) == 1
    assert "row count mismatch: 60 vs 50" in capsys.readouterr().err


def test_trivial_fit_exit_code(inputs, tmp_path, capsys):
    assert main(["fit", *base(inputs, "--tau-x", "50", "--tau-y", "50", "--out", str(tmp_path / "m.json"))]) == 2
    assert "trivial" in capsys.readouterr().err


@pytest.mark.parametrize(
    "args",
    [
        ["fit", "--tau-x", "0.1"],
        ["fit", "--x", "missing.csv", "--y", "missing.csv", "--tau-x", "0.1", "--tau-y", "0.1", "--out", "m.json"],
        ["simulate", "--scenario", "5", "--out", "o"],
        ["bogus"],
    ],
)
def test_usage_errors(args, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        code = main(args)
        raise SystemExit(code)
    assert info.value.code == 1


def test_bad_penalty_values(inputs, tmp_path):
    args = ["fit", *base(inputs, "--tau-x", "0.1", "--tau-y", "0.1", "--eta", "1.5", "--out", str(tmp_path / "m"))]
    assert main(args) == 1


def test_cv_too_many_folds(inputs, tmp_path):
    assert main(["cv", *base(inputs, "--folds", "100", "--out", str(tmp_path / "cv"))]) == 1


def test_cv_outputs(inputs, tmp_path):
    out = tmp_path / "cv"
    args = ["cv", *base(inputs, "--folds", "3", "--tau-grid-size", "3", "--grid-low", "0.2", "--out", str(out))]
    assert main(args) == 0
    rows = read_rows_csv(out / "cv_scores.csv")
    assert {"tau_x", "tau_y", "score", "degenerate"} <= set(rows[0])
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["foldAssignment"]) == 60
    live = [r for r in rows if not r["degenerate"]]
    opt = [r for r in live if [r["tau_x"], r["tau_y"]] == manifest["tauOpt"]]
    assert opt and opt[0]["score"] <= min(r["score"] for r in live) + TIE_TOLERANCE
    model = json.loads((out / "model.json").read_text())
    assert model["config"]["tauX"] == manifest["tauOpt"][0]


def test_cv_single_pair_matches_fit(inputs, tmp_path):
    out = tmp_path / "cv"
    assert main(["cv", *base(inputs, "--folds", "3", "--tau-x", "0.05", "--tau-y", "0.05", "--out", str(out))]) == 0
    assert main(["fit", *base(inputs, "--tau-x", "0.05", "--tau-y", "0.05", "--out", str(tmp_path / "m.json"))]) == 0
    a = json.loads((out / "model.json").read_text())["components"][0]["alpha"]
    b = json.loads((tmp_path / "m.json").read_text())["components"][0]["alpha"]
    assert np.array_equal(a, b)


def test_cv_all_degenerate(inputs, tmp_path, capsys):
    out = tmp_path / "cv"
    assert main(["cv", *base(inputs, "--folds", "3", "--tau-x", "40,50", "--tau-y", "40,50", "--out", str(out))]) == 2
    assert "degenerate" in capsys.readouterr().err


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "netcca.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("netcca ")


@pytest.mark.slow
def test_simulate_is_byte_reproducible(tmp_path):
    args = ["simulate", "--scenario", "1", "--reps", "1", "--p", "40", "--q", "40", "--n", "40",
            "--folds", "3", "--tau-grid-size", "3", "--seed", "7"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("replicates.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["timings"][0]["runtimeSeconds"] > 0
