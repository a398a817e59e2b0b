"""
Command-line surface: exit codes, output files and error payloads.
"""
import json
import os

import pytest
from click.testing import CliRunner

from main import _flags_to_config, cli


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def dataset(runner, tmp_path):
    out = str(tmp_path / "data")
    result = runner.invoke(cli, ["synth", "--out", out, "--num-nodes", "200", "--mean-degree", "6", "--seed", "1"])
    assert result.exit_code == 0, result.output
    return out


def error_payload(result):
    return json.loads(result.stderr.strip().splitlines()[-1])


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert "1.0.0" in result.output


def test_synth_writes_dataset(dataset):
    for name in ("edges.tsv", "features.csv", "labels.txt", "split.json", "truth.json"):
        assert os.path.exists(os.path.join(dataset, name))


def test_patterns_and_split(runner, dataset, tmp_path):
    z_path = str(tmp_path / "z.csv")
    result = runner.invoke(cli, ["patterns", "--graph-dir", dataset, "--metric", "LocalSim", "--out", z_path])
    assert result.exit_code == 0, result.output
    with open(z_path, encoding="utf-8") as fh:
        assert fh.readline().startswith("# metric=LocalSim")

    setting_path = str(tmp_path / "setting.json")
    result = runner.invoke(cli, ["split", "--graph-dir", dataset, "--setting", "simulation_high_to_low",
                                 "--out", setting_path])
    assert result.exit_code == 0, result.output
    with open(setting_path, encoding="utf-8") as fh:
        assert json.load(fh)["eval_group"] == "low"


def test_train_on_files(runner, dataset, tmp_path):
    out = str(tmp_path / "run")
    result = runner.invoke(cli, [
        "train", "--graph-dir", dataset, "--trainer", "ERM", "--backbone", "SgcLite",
        "--hidden", "8", "--layers", "1", "--epochs", "3", "--output-dir", out,
    ])
    assert result.exit_code == 0, result.output
    assert os.path.exists(os.path.join(out, "result.json"))
    assert os.path.exists(os.path.join(out, "trial_0", "model.ckpt"))


def test_invalid_config_exits_2(runner, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("train:\n  trainer: VREX\n  K: 1\n", encoding="utf-8")
    result = runner.invoke(cli, ["experiment", "--config", str(path)])
    assert result.exit_code == 2
    payload = error_payload(result)
    assert payload["error"] == "ConfigError"
    assert payload["trial"] is None


def test_missing_graph_inputs_exit_2(runner, tmp_path):
    result = runner.invoke(cli, ["patterns", "--out", str(tmp_path / "z.csv")])
    assert result.exit_code == 2
    assert error_payload(result)["error"] == "ConfigError"


def test_dangling_edge_exits_1(runner, tmp_path):
    (tmp_path / "edges.tsv").write_text("0\t7\n", encoding="utf-8")
    (tmp_path / "features.csv").write_text("1,0\n0,1\n", encoding="utf-8")
    (tmp_path / "labels.txt").write_text("0\n1\n", encoding="utf-8")
    result = runner.invoke(cli, ["patterns", "--graph-dir", str(tmp_path), "--out", str(tmp_path / "z.csv")])
    assert result.exit_code == 1
    payload = error_payload(result)
    assert payload["error"] == "DanglingNodeError"
    assert "hint" in payload


def test_report_without_results_exits_1(runner):
    result = runner.invoke(cli, ["report"])
    assert result.exit_code == 1
    assert error_payload(result)["error"] == "ReportError"


def test_sweep_bad_values_exit_2(runner, dataset):
    result = runner.invoke(cli, ["sweep", "--graph-dir", dataset, "--trainer", "HEI", "--epochs", "3",
                                 "--warmup", "1", "--param", "K", "--values", "two,three"])
    assert result.exit_code == 2
    assert error_payload(result)["error"] == "ConfigError"


def test_report_command(runner, dataset, tmp_path):
    runs = []
    for trainer in ("ERM", "VREX"):
        out = str(tmp_path / trainer)
        result = runner.invoke(cli, [
            "experiment", "--graph-dir", dataset, "--trainer", trainer, "--backbone", "SgcLite",
            "--hidden", "8", "--layers", "1", "--epochs", "3", "-K", "2", "--trials", "2", "--output-dir", out,
        ])
        assert result.exit_code == 0, result.output
        runs.append(out)
    result = runner.invoke(cli, ["report", *runs, "--out", str(tmp_path / "rep")])
    assert result.exit_code == 0, result.output
    assert "| ERM | standard |" in result.stdout
    assert os.path.exists(tmp_path / "rep" / "report.csv")


def test_omitted_list_flags_stay_out_of_config():
    out = _flags_to_config({"trainer": "ERM", "metrics": (), "epochs": None})
    assert out == {"train": {"trainer": "ERM"}}
    out = _flags_to_config({"metrics": ("LocalSim", "SimRank")})
    assert out["train"]["z_metrics"] == ["LocalSim", "SimRank"]


def test_hei_metric_flag_reaches_result(runner, dataset, tmp_path):
    out = str(tmp_path / "hei")
    result = runner.invoke(cli, [
        "train", "--graph-dir", dataset, "--trainer", "HEI", "--backbone", "SgcLite", "--hidden", "8",
        "--layers", "1", "--epochs", "3", "--warmup", "1", "-K", "2", "--metric", "AggSim",
        "--no-checkpoint", "--output-dir", out,
    ])
    assert result.exit_code == 0, result.output
    with open(os.path.join(out, "result.json"), encoding="utf-8") as fh:
        assert json.load(fh)["config"]["train"]["z_metrics"] == ["AggSim"]
    assert not os.path.exists(os.path.join(out, "trial_0", "model.ckpt"))
