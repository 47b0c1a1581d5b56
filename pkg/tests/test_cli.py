"""Test the amcloss command line."""
import csv
import json
import math

import numpy as np
import pytest

from amcloss import __version__
from amcloss.cli import CHECKPOINT_FILE, EPOCHS_FILE, REPORT_FILE, main, sweep_configs
from amcloss.config import RunConfig
from amcloss.errors import ConfigError
from amcloss.report import RunReport


def _run_flags(data_dir, out, *extra):
    return [
        "--data-dir", str(data_dir),
        "--epochs", "1", "--rampup", "0", "--rampdown", "0",
        "--batch-size", "8", "--train-subset", "16", "--test-subset", "16",
        "--embed-dim", "2", "--out", str(out), *extra,
    ]


@pytest.fixture(scope="module")
def trained(mnist_dir, tmp_path_factory):
    """One finished run on the synthetic MNIST files."""
    out = tmp_path_factory.mktemp("run")
    assert main(["-q", "train", *_run_flags(mnist_dir, out)]) == 0
    return out


def test_train_writes_artifacts(trained):
    assert (trained / CHECKPOINT_FILE).exists()
    assert (trained / f"{EPOCHS_FILE}.meta.json").exists()
    report = RunReport.load(trained / REPORT_FILE)
    assert len(report.epochs) == 1
    assert 0.0 <= report.final.accuracy <= 100.0
    assert report.config["embed_dim"] == 2
    assert report.config["preset"] == "mnist_net"
    with (trained / EPOCHS_FILE).open(newline="") as stream:
        assert len(list(csv.DictReader(stream))) == 1


def test_train_prints_accuracy(mnist_dir, tmp_path, capsys):
    assert main(["-q", "train", *_run_flags(mnist_dir, tmp_path, "--loss", "ce")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["accuracy"] == RunReport.load(tmp_path / REPORT_FILE).final.accuracy


def test_eval_prints_metrics(trained, capsys):
    assert main(["-q", "eval", str(trained / CHECKPOINT_FILE)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["split"] == "test"
    assert result["config"]["embed_dim"] == 2
    assert result["metrics"]["accuracy"] == RunReport.load(trained / REPORT_FILE).final.accuracy


def test_export_embeddings(trained, tmp_path):
    target = tmp_path / "features.csv"
    checkpoint = str(trained / CHECKPOINT_FILE)
    assert main(["-q", "export-embeddings", checkpoint, "--out", str(target), "--normalized", "--subset", "5"]) == 0
    with target.open(newline="") as stream:
        rows = list(csv.reader(stream))
    assert rows[0] == ["index", "label", "f1", "f2"]
    assert len(rows) == 6
    indices = [int(row[0]) for row in rows[1:]]
    assert indices == sorted(set(indices))
    assert max(indices) < 32
    features = np.array([[float(v) for v in row[2:]] for row in rows[1:]])
    np.testing.assert_allclose(np.linalg.norm(features, axis=1), 1.0, atol=1e-12)
    assert (tmp_path / "features.csv.meta.json").exists()


def test_gradcam_command(trained, tmp_path):
    pytest.importorskip("PIL")
    out = tmp_path / "maps"
    assert main(["-q", "gradcam", str(trained / CHECKPOINT_FILE), "--indices", "0", "3", "--out", str(out), "--csv"]) == 0
    names = sorted(path.name for path in out.iterdir())
    assert names == [
        "heatmap_0.csv",
        "heatmap_0.csv.meta.json",
        "heatmap_0.png",
        "heatmap_3.csv",
        "heatmap_3.csv.meta.json",
        "heatmap_3.png",
        "overlay_0.png",
        "overlay_3.png",
    ]


@pytest.mark.parametrize("command", ["gradcam", "explain"])
def test_gradcam_index_out_of_range(trained, tmp_path, caplog, command):
    assert main([command, str(trained / CHECKPOINT_FILE), "--indices", "16", "--out", str(tmp_path)]) == 2
    assert "indices" in caplog.text


def test_summarize(trained, tmp_path, capsys):
    target = tmp_path / "summary.csv"
    assert main(["-q", "summarize", str(trained), "--out", str(target)]) == 0
    printed = capsys.readouterr().out
    assert printed == target.read_text(encoding="utf-8")
    header, row = printed.splitlines()
    assert header == "group,runs,mean,sd,p_value"
    assert row.startswith("amc,1,")
    sidecar = json.loads((tmp_path / "summary.csv.meta.json").read_text())
    assert sidecar["config"] == {"reports": [str(trained)], "runs": 1, "group_by": "loss", "baseline": None}
    assert sidecar["amcloss_version"] == __version__


def test_summarize_without_reports(tmp_path, caplog):
    assert main(["summarize", str(tmp_path)]) == 2
    assert "no run reports" in caplog.text


def test_missing_checkpoint_returns_two(tmp_path, caplog):
    assert main(["eval", str(tmp_path / "absent.npz")]) == 2
    assert "CheckpointError" in caplog.text


def test_invalid_flag_value_returns_two(mnist_dir, tmp_path, caplog):
    assert main(["train", *_run_flags(mnist_dir, tmp_path, "--lambda", "-1")]) == 2
    assert "lambda" in caplog.text


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == f"amcloss {__version__}"


def test_sweep_configs(tmp_path):
    base = RunConfig(out=str(tmp_path), seed=7).resolve()
    jobs = sweep_configs(base, "lam", [0.1, 0.2], repeats=2)
    assert [group for group, _ in jobs] == ["baseline", "lam=0.1", "lam=0.2"] * 2
    assert [config.seed for _, config in jobs] == [7, 7, 7, 8, 8, 8]
    baseline = jobs[0][1]
    assert (baseline.loss, baseline.lam) == ("ce", 0.0)
    assert [config.lam for _, config in jobs[1:3]] == [0.1, 0.2]
    assert jobs[4][1].out == str(tmp_path / "lam=0.1" / "run1")


@pytest.mark.parametrize(
    ("axis", "values", "repeats", "message"),
    [
        ("lr", [0.1], 1, "axis"),
        ("lam", [], 1, "values"),
        ("lam", [0.1], 0, "repeats"),
        ("margin_g", [4.0], 1, "margin_g"),
    ],
)
def test_sweep_configs_rejects(tmp_path, axis, values, repeats, message):
    with pytest.raises(ConfigError, match=message):
        sweep_configs(RunConfig(out=str(tmp_path)).resolve(), axis, values, repeats)


@pytest.mark.slow()
def test_sweep_command(mnist_dir, tmp_path, capsys):
    argv = ["-q", "sweep", *_run_flags(mnist_dir, tmp_path), "--axis", "margin_g", "--values", "1.0", "--repeats", "2"]
    assert main(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "group,runs,mean,sd,p_value"
    assert [line.split(",")[:2] for line in lines[1:]] == [["baseline", "2"], ["margin_g=1", "2"]]
    p_value = lines[2].split(",")[4]
    assert 0.0 <= float(p_value) <= 1.0 or math.isnan(float(p_value))
    assert (tmp_path / "summary.csv").read_text(encoding="utf-8") == "\n".join(lines) + "\n"
    assert (tmp_path / "baseline" / "run1" / REPORT_FILE).exists()
