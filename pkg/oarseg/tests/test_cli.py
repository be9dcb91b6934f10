"""
Tests for the command-line interface.
"""

import json
from pathlib import Path

import pandas as pd
import pytest

from oarseg.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, run
from oarseg.data.case import read_dataset
from oarseg.evaluation.aggregate import metrics_frame
from oarseg.utils.errors import NumericError
from oarseg.utils.manifest import MANIFEST_NAME, RunManifest

SYNTH = ["--patients", "3", "--classes", "2", "--extent", "4", "32", "32", "--seed", "5"]


def _payload_files(root: Path):
    """Relative path -> bytes of every output except the manifest and logs."""
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != MANIFEST_NAME and p.suffix != ".log"
    }


# Test synth
def test_synth_is_byte_identical(tmp_path):
    """Two runs with one seed write the same bytes."""
    assert run(["synth", "--out", str(tmp_path / "a"), *SYNTH]) == EXIT_OK
    assert run(["synth", "--out", str(tmp_path / "b"), *SYNTH]) == EXIT_OK
    a, b = _payload_files(tmp_path / "a"), _payload_files(tmp_path / "b")
    assert "dataset.json" in a and "class_histogram.csv" in a
    assert a == b
    assert len(read_dataset(tmp_path / "a")) == 3

    manifest = RunManifest.read(tmp_path / "a")
    assert manifest.command == "synth"
    assert manifest.seeds == {"seed": 5}

def test_config_file_sets_flag_defaults(tmp_path):
    """Flat config entries act as defaults; explicit flags still win."""
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"patients": 2, "classes": 3, "runtime": {"deterministic": True}}))
    out = tmp_path / "data"
    assert run(["synth", "--out", str(out), "--config", str(config), "--classes", "2", "--extent", "4", "32", "32"]) == EXIT_OK
    cases = read_dataset(out)
    assert len(cases) == 2
    assert len(cases[0].class_names) == 2
    assert RunManifest.read(out).deterministic

def test_rerun_replays_command(tmp_path):
    """Replaying a manifest reproduces the outputs."""
    out = tmp_path / "data"
    assert run(["synth", "--out", str(out), *SYNTH]) == EXIT_OK
    before = _payload_files(out)
    for path in out.rglob("*.raw"):
        path.unlink()
    assert run(["rerun", str(out / MANIFEST_NAME)]) == EXIT_OK
    assert _payload_files(out) == before

# Test exit codes
def test_invalid_input_exit_codes(tmp_path):
    """Missing data and usage errors exit 1."""
    assert run(["train", "--data", str(tmp_path / "missing"), "--arch", "unet", "--out", str(tmp_path / "run")]) == EXIT_INVALID
    assert run(["rerun", str(tmp_path / "nowhere.json")]) == EXIT_INVALID

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["synth", "--out", str(tmp_path / "x"), "--config", str(bad)]) == EXIT_INVALID

    with pytest.raises(SystemExit) as excinfo:
        run(["train", "--data", "d", "--arch", "resnet", "--out", "o"])
    assert excinfo.value.code == EXIT_INVALID

def test_gradcheck_subset(tmp_path):
    """Passing checks exit 0; failing checks exit 2."""
    out = tmp_path / "grad"
    assert run(["gradcheck", "--only", "softmax", "Linear", "--out", str(out)]) == EXIT_OK
    table = pd.read_csv(out / "gradcheck.csv")
    assert sorted(table["name"]) == ["Linear", "softmax"]
    assert table["passed"].all()

    assert run(["gradcheck", "--only", "softmax", "--tolerance=-1"]) == EXIT_NUMERIC

# Test params
def test_params_desk(tmp_path, capsys):
    """Desk-scale counts print and save without a published column."""
    out = tmp_path / "params"
    assert run(["params", "--arch", "unet", "--preset", "desk", "--out", str(out)]) == EXIT_OK
    assert "unet" in capsys.readouterr().out
    table = pd.read_csv(out / "params.csv")
    assert list(table["arch"]) == ["unet"]
    assert table["measured"].iloc[0] > 0
    assert table["published"].isna().all()

# Test stats
def _metrics_file(path: Path, model: str, offset: float) -> Path:
    rows = [
        {"model": model, "fold": i % 2, "patient": f"p{i}", "class": name,
         "dice": 0.6 + offset + 0.02 * i + (0.001 if name == "b" else 0.0), "hd95_mm": 2.0}
        for i in range(7) for name in ("a", "b")
    ]
    path.mkdir(parents=True, exist_ok=True)
    metrics_frame(rows).to_csv(path / "metrics.csv", index=False)
    return path / "metrics.csv"

def test_stats_two_files(tmp_path):
    """Two single-model tables are compared patient by patient."""
    a = _metrics_file(tmp_path / "a", "unet", 0.05)
    b = _metrics_file(tmp_path / "b", "cunet", 0.0)
    out = tmp_path / "stats"
    assert run(["stats", "--metrics", str(a), str(b), "--out", str(out)]) == EXIT_OK
    test = json.loads((out / "stats.json").read_text())["tests"][0]
    assert (test["a"], test["b"], test["n"]) == ("unet", "cunet", 7)
    assert test["p_value"] == pytest.approx(2.0 / 128.0)

def test_stats_same_model_name(tmp_path):
    """Runs of one architecture are told apart by their directory."""
    a = _metrics_file(tmp_path / "run1", "unet", 0.05)
    b = _metrics_file(tmp_path / "run2", "unet", 0.0)
    out = tmp_path / "stats"
    assert run(["stats", "--metrics", str(a), str(b), "--out", str(out)]) == EXIT_OK
    test = json.loads((out / "stats.json").read_text())["tests"][0]
    assert (test["a"], test["b"]) == ("unet@run1", "unet@run2")

def test_stats_needs_a_pair(tmp_path):
    """A single table without --models or --auto is rejected."""
    a = _metrics_file(tmp_path / "a", "unet", 0.0)
    assert run(["stats", "--metrics", str(a), "--out", str(tmp_path / "s")]) == EXIT_INVALID

# Test the full pipeline
@pytest.mark.slow
def test_end_to_end(tmp_path):
    """synth, train, infer, ensemble, eval, pairwise, stats and visualize."""
    data, run_a, run_b = tmp_path / "data", tmp_path / "run_a", tmp_path / "run_b"
    common = ["--preset", "desk", "--deterministic"]
    assert run(["synth", "--out", str(data), "--patients", "4", "--classes", "2",
                "--extent", "4", "64", "64", "--seed", "1"]) == EXIT_OK
    for arch, out in (("unet", run_a), ("cunet", run_b)):
        assert run(["train", "--data", str(data), "--arch", arch, "--out", str(out), "--folds", "2",
                    "--epochs", "1", "--iterations", "1", *common]) == EXIT_OK
        assert (out / "folds.json").exists()

    preds_a, preds_b, ens = tmp_path / "preds_a", tmp_path / "preds_b", tmp_path / "ens"
    assert run(["infer", "--model", str(run_a), "--data", str(data), "--out", str(preds_a), *common]) == EXIT_OK
    assert run(["infer", "--model", str(run_b), "--data", str(data), "--out", str(preds_b), *common]) == EXIT_OK
    assert run(["ensemble", "--members", str(preds_a), str(preds_b), "--out", str(ens), *common]) == EXIT_OK

    evaluation = tmp_path / "eval"
    assert run(["eval", "--preds", str(preds_a), str(preds_b), str(ens), "--refs", str(data),
                "--out", str(evaluation)]) == EXIT_OK
    metrics = pd.read_csv(evaluation / "metrics.csv")
    assert metrics["model"].nunique() == 3
    assert len(metrics) == 3 * 4 * 2
    assert metrics["dice"].dropna().between(0.0, 1.0).all()

    assert run(["pairwise", "--preds", str(preds_a), str(preds_b), "--out", str(tmp_path / "pw")]) == EXIT_OK
    assert (tmp_path / "pw" / "pairwise.csv").exists()
    assert run(["visualize", "--preds", str(preds_a), str(ens), "--refs", str(data),
                "--out", str(tmp_path / "png"), "--max-cases", "1"]) == EXIT_OK
    assert len(list((tmp_path / "png").glob("*.png"))) == 1

def test_numeric_failure_exit_code(tmp_path, mocker):
    """A NumericError escaping a command exits 2."""
    mocker.patch("oarseg.cli.run_suite", side_effect=NumericError("Non-finite output", "NUM_001", op="conv2d"))
    assert run(["gradcheck"]) == EXIT_NUMERIC
