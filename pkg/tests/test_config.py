"""
Config validation, error payloads and the epoch log writer.
"""
import json

import pytest

from app.config import Config
from app.env_validator import ConfigValidator, validate_or_raise
from app.errors import ConfigError, DanglingNodeError, SplitError, TrialError, format_error_payload
from app.logger import EpochLogWriter
from hei.harness import parse_config


def test_defaults_validate_with_trial_warning_only():
    validator = ConfigValidator(parse_config({"trials": 2}))
    ok, errors, warnings = validator.validate_all()
    assert ok and errors == []
    assert any("trial" in w for w in warnings)


def test_large_graphs_expect_fewer_trials():
    synth = {"num_nodes": Config.LARGE_GRAPH_NODES}
    _, _, enough = ConfigValidator(parse_config({"data": {"synth": synth}, "trials": 5})).validate_all()
    assert not any("trial" in w for w in enough)
    _, _, too_few = ConfigValidator(parse_config({"data": {"synth": synth}, "trials": 4})).validate_all()
    assert any("large-graph" in w and "over 5" in w for w in too_few)
    _, _, small = ConfigValidator(parse_config({"trials": 5})).validate_all()
    assert any("small-graph" in w and "over 10" in w for w in small)


def test_file_graph_size_comes_from_labels(tmp_path):
    for name in ("edges.tsv", "features.csv", "split.json"):
        (tmp_path / name).write_text("", encoding="utf-8")
    (tmp_path / "labels.txt").write_text("0\n1\n\n2\n", encoding="utf-8")
    cfg = parse_config({"data": {"source": "files", "graph_dir": str(tmp_path)}, "trials": 3})
    validator = ConfigValidator(cfg)
    assert validator._num_nodes() == 3
    _, _, warnings = validator.validate_all()
    assert any("small-graph" in w for w in warnings)


def test_grid_warnings():
    cfg = parse_config({
        "train": {"trainer": "HEI", "K": 20, "lambda": 0.5, "lr": 0.02, "lr_rho": 0.002, "rho_hidden": 7},
        "trials": 10,
    })
    _, errors, warnings = ConfigValidator(cfg).validate_all()
    assert errors == []
    text = " ".join(warnings)
    for key in ("K=20", "lambda=0.5", "lr=0.02", "lr_rho=0.002", "rho_hidden=7"):
        assert key in text


def test_zero_lambda_warns_for_environment_trainers():
    cfg = parse_config({"train": {"trainer": "VREX", "lambda": 0.0}, "trials": 10})
    _, _, warnings = ConfigValidator(cfg).validate_all()
    assert any("lambda=0" in w for w in warnings)


def test_missing_files_raise_config_error(tmp_path):
    cfg = parse_config({"data": {"source": "files", "graph_dir": str(tmp_path)}})
    with pytest.raises(ConfigError, match="Missing edges file"):
        validate_or_raise(cfg)


def test_error_payload_for_trial_failure():
    payload = format_error_payload(TrialError(3, SplitError("too few test nodes")))
    assert payload["error"] == "SplitError"
    assert payload["trial"] == 3
    assert "trial 3 failed" in payload["message"]
    assert payload["hint"]


def test_error_payload_for_plain_errors():
    assert format_error_payload(DanglingNodeError("id 7"))["trial"] is None
    unknown = format_error_payload(RuntimeError("boom"))
    assert unknown["error"] == "RuntimeError"
    assert "HEI_LOG_LEVEL" in unknown["hint"]


def test_epoch_log_writer_keeps_known_fields(tmp_path):
    path = tmp_path / "log" / "epochs.jsonl"
    with EpochLogWriter(str(path)) as log:
        log.write({"epoch": 0, "phase": "erm", "train_loss": 1.5, "extra": "dropped"})
        log.write({"epoch": 1, "phase": "erm", "train_loss": 1.2, "val_acc": 0.5})
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert len(lines) == 2
    assert "extra" not in lines[0]
    assert lines[0]["val_acc"] is None
    assert lines[1]["train_loss"] == 1.2
    assert log.records == lines


def test_epoch_log_writer_memory_only():
    log = EpochLogWriter()
    log.write({"epoch": 0})
    log.close()
    assert log.records[0]["epoch"] == 0


def test_epoch_log_writer_meta_line_is_not_a_record(tmp_path):
    path = tmp_path / "epochs.jsonl"
    meta = {"tool": Config.TOOL_NAME, "version": Config.TOOL_VERSION, "seeds": [3], "config": {"trials": 1}}
    with EpochLogWriter(str(path), meta=meta) as log:
        log.write({"epoch": 0, "phase": "erm", "train_loss": 0.5})
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert lines[0] == {"meta": meta}
    assert lines[1:] == log.records
    assert len(log.records) == 1
