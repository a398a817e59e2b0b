"""
Experiment harness, sweeps and comparison reports.
"""
import json
import os

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from app.config import Config
from app.errors import ConfigError, ReportError, SplitError, TrialError
from app.utils import read_provenance
from hei.graph import NodeSplit, save_split
from hei.harness import (
    GROUPS,
    RESULT_CSV,
    RESULT_JSON,
    SWEEP_CSV,
    ExperimentConfig,
    deep_merge,
    load_experiment_config,
    parse_config,
    run_experiment,
    sweep,
    with_overrides,
)
from hei.report import REPORT_CSV, REPORT_MD, build_table, load_result, paired_delta, report
from hei.synthgen import SynthConfig, generate, save_synth
from scripts.acceptance_run import (
    ACCEPTANCE_CONFIG,
    K_HIGH,
    K_LOW,
    METRICS,
    k_sensitivity,
    metric_comparison,
)


def small_config(tmp_path, **train):
    payload = {
        "data": {"source": "synth", "synth": {"num_nodes": 240, "mean_degree": 6, "seed": 1}},
        "backbone": {"kind": "SgcLite", "hidden_dim": 8, "num_layers": 1, "sgc_hops": 1},
        "train": {"epochs": 6, "warmup_epochs": 2, "K": 2, **train},
        "trials": 1,
        "output_dir": str(tmp_path / "runs"),
    }
    return parse_config(payload)


def test_single_trial_has_zero_std(tmp_path):
    result = run_experiment(small_config(tmp_path), progress=False)
    for group, agg in result.aggregate.items():
        assert agg["std"] == 0.0
        assert agg["mean"] == result.trials[0][group]
        assert 0.0 <= agg["mean"] <= 100.0


def test_result_files_written(tmp_path):
    cfg = small_config(tmp_path).model_copy(update={"trials": 2, "save_checkpoints": True})
    result = run_experiment(cfg, progress=False)
    out = cfg.output_dir
    for name in (RESULT_JSON, RESULT_CSV):
        assert os.path.exists(os.path.join(out, name))
    for t in range(2):
        assert os.path.exists(os.path.join(out, f"trial_{t}", "epochs.jsonl"))
        assert os.path.exists(os.path.join(out, f"trial_{t}", "model.ckpt"))
    with open(os.path.join(out, "trial_0", "epochs.jsonl"), encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh]
    assert len(lines) == 7
    meta = lines[0]["meta"]
    assert meta["tool"] == Config.TOOL_NAME and meta["version"] == Config.TOOL_VERSION
    assert meta["seeds"] == [0]
    assert meta["config"]["trials"] == 2
    assert [row["epoch"] for row in lines[1:]] == list(range(6))

    frame = pd.read_csv(os.path.join(out, RESULT_CSV), comment="#")
    mean_row = frame[frame["trial"] == "mean"].iloc[0]
    assert mean_row["full_test"] == pytest.approx(result.aggregate["full_test"]["mean"])
    assert result.seeds == [0, 1]

    header = read_provenance(os.path.join(out, RESULT_CSV))
    assert header["tool"] == Config.TOOL_NAME
    assert header["version"] == Config.TOOL_VERSION
    assert header["seeds"] == [0, 1]
    assert header["config"] == result.config


def test_reruns_are_identical(tmp_path):
    cfg = small_config(tmp_path, trainer="HEI")
    run_experiment(cfg, output_dir=str(tmp_path / "a"), progress=False)
    run_experiment(cfg, output_dir=str(tmp_path / "b"), progress=False)
    a = (tmp_path / "a" / RESULT_JSON).read_text(encoding="utf-8")
    b = (tmp_path / "b" / RESULT_JSON).read_text(encoding="utf-8")
    assert a == b


def test_result_json_echoes_config(tmp_path):
    cfg = small_config(tmp_path, trainer="VREX", **{"lambda": 0.1})
    run_experiment(cfg, progress=False)
    payload = json.loads((tmp_path / "runs" / RESULT_JSON).read_text(encoding="utf-8"))
    assert payload["method"] == "VREX"
    assert payload["setting"] == "standard"
    assert payload["config"]["train"]["lambda"] == 0.1
    assert payload["config"]["data"]["synth"]["num_nodes"] == 240


def test_simulation_setting_trains_on_one_half(tmp_path):
    cfg = with_overrides(small_config(tmp_path), {"setting": "simulation_low_to_high"})
    result = run_experiment(cfg, progress=False)
    assert result.trials[0]["eval_group"] == "high"
    assert result.setting == "simulation_low_to_high"


def test_file_source(tmp_path):
    synth = SynthConfig(num_nodes=200, mean_degree=6, seed=4)
    g, split, truth = generate(synth)
    data_dir = tmp_path / "graph"
    save_synth(str(data_dir), g, split, truth, synth)
    cfg = small_config(tmp_path)
    cfg = with_overrides(cfg, {"data": {"source": "files", "graph_dir": str(data_dir)}, "trials": 2})
    result = run_experiment(cfg, progress=False)
    assert len(result.trials) == 2
    assert result.trials[0]["train_nodes"] > 0


def test_trial_failure_is_wrapped(tmp_path):
    synth = SynthConfig(num_nodes=200, mean_degree=6, seed=4)
    g, split, truth = generate(synth)
    data_dir = tmp_path / "graph"
    save_synth(str(data_dir), g, split, truth, synth)
    # a single test node cannot be split into high/low halves
    save_split(NodeSplit(train=split.train, val=split.val, test=split.test[:1]), str(data_dir / "split.json"))
    cfg = with_overrides(small_config(tmp_path), {"data": {"source": "files", "graph_dir": str(data_dir)}})
    with pytest.raises(TrialError) as info:
        run_experiment(cfg, progress=False)
    assert info.value.trial == 0
    assert isinstance(info.value.cause, SplitError)


def test_sweep_cardinality(tmp_path):
    cfg = small_config(tmp_path, trainer="HEI")
    result = sweep(cfg, "K", [2, 3], progress=False)
    assert len(result.results) == 2
    out = cfg.output_dir
    assert os.path.exists(os.path.join(out, "K=2", RESULT_JSON))
    assert os.path.exists(os.path.join(out, "K=3", RESULT_JSON))
    frame = pd.read_csv(os.path.join(out, SWEEP_CSV), comment="#")
    assert frame["value"].tolist() == [2, 3]
    header = read_provenance(os.path.join(out, SWEEP_CSV))
    assert header["config"]["sweep"] == {"param": "K", "values": [2, 3]}
    assert header["seeds"] == [0]
    assert result.results[1].config["train"]["K"] == 3


def test_metric_sweep_rows_are_tagged(tmp_path):
    cfg = small_config(tmp_path, trainer="HEI")
    result = sweep(cfg, "metric", ["LocalSim", "AggSim", "SimRank"], progress=False)
    assert result.values == ["LocalSim", "AggSim", "SimRank"]
    assert [r.config["train"]["z_metrics"] for r in result.results] == [["LocalSim"], ["AggSim"], ["SimRank"]]


def test_sweep_rejects_bad_input(tmp_path):
    cfg = small_config(tmp_path)
    with pytest.raises(ConfigError, match="unknown sweep parameter"):
        sweep(cfg, "dropout", [0.1])
    with pytest.raises(ConfigError):
        sweep(cfg, "metric", ["Jaccard"])
    with pytest.raises(ConfigError):
        sweep(cfg, "K", [])


def test_config_file_overrides_flags(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("train:\n  trainer: HEI\n  lambda: 0.01\ntrials: 3\n", encoding="utf-8")
    flags = {"train": {"trainer": "VREX", "K": 4, "lambda": 1.0}, "trials": 5}
    cfg = load_experiment_config(str(path), base=flags)
    assert cfg.train.trainer.value == "HEI"
    assert cfg.train.penalty_weight == 0.01
    assert cfg.train.K == 4
    assert cfg.trials == 3


@pytest.mark.parametrize("text", ["train: [1, 2\n", "- just\n- a list\n", "bogus_key: 1\n"])
def test_bad_config_files(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment_config(str(path))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_experiment_config(str(tmp_path / "nope.yaml"))


def test_deep_merge_keeps_untouched_keys():
    merged = deep_merge({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"b": 5}})
    assert merged == {"a": {"b": 5, "c": 2}, "d": 3}


def test_files_source_needs_paths():
    with pytest.raises(ConfigError):
        parse_config({"data": {"source": "files"}})
    cfg = ExperimentConfig.model_validate({"data": {"source": "files", "graph_dir": "g"}})
    assert cfg.data.edges == os.path.join("g", "edges.tsv")


# ============================================================================
# REPORT
# ============================================================================

def fake_result(method, values, seeds=(0, 1, 2)):
    trials = [
        {"trial": i, "seed": s, "full_test": v, "high_hom_test": v + 5.0, "low_hom_test": v - 5.0}
        for i, (s, v) in enumerate(zip(seeds, values))
    ]
    return {"method": method, "setting": "standard", "trials": trials}


def test_paired_delta_and_t_test():
    erm = fake_result("ERM", [70.0, 71.0, 75.0])
    hei = fake_result("HEI", [80.0, 82.0, 84.0])
    delta, p_value = paired_delta(hei, erm, "full_test")
    assert delta == pytest.approx(10.0)
    assert p_value == pytest.approx(stats.ttest_rel([80, 82, 84], [70, 71, 75]).pvalue)


def test_paired_delta_constant_difference_has_no_p_value():
    delta, p_value = paired_delta(fake_result("A", [2.0, 3.0]), fake_result("B", [1.0, 2.0]), "low_hom_test")
    assert delta == pytest.approx(1.0)
    assert p_value is None


def test_paired_delta_without_common_seeds():
    delta, p_value = paired_delta(fake_result("A", [1.0], seeds=(9,)), fake_result("B", [1.0]), "full_test")
    assert delta is None and p_value is None


def test_build_table_single_result_has_no_deltas():
    table = build_table([fake_result("ERM", [70.0, 72.0])])
    assert "full_test_delta" not in table.columns
    assert table.loc[0, "full_test_mean"] == pytest.approx(71.0)
    assert table.loc[0, "full_test_std"] == pytest.approx(1.0)


def test_report_writes_markdown_and_csv(tmp_path):
    erm_cfg = small_config(tmp_path).model_copy(update={"trials": 2})
    hei_cfg = with_overrides(erm_cfg, {"train": {"trainer": "HEI"}})
    run_experiment(erm_cfg, output_dir=str(tmp_path / "erm"), progress=False)
    run_experiment(hei_cfg, output_dir=str(tmp_path / "hei"), progress=False)

    markdown, table = report([str(tmp_path / "erm"), str(tmp_path / "hei" / RESULT_JSON)], str(tmp_path / "rep"))
    assert markdown.splitlines()[0].startswith("| method | setting |")
    assert "HEI" in markdown and "ERM" in markdown
    written = (tmp_path / "rep" / REPORT_MD).read_text(encoding="utf-8")
    assert written.startswith("<!--\ntool=hei-toolkit,") and written.endswith(markdown)

    back = pd.read_csv(tmp_path / "rep" / REPORT_CSV, comment="#")
    header = read_provenance(str(tmp_path / "rep" / REPORT_CSV))
    assert header["seeds"] == [0, 1]
    assert [c["train"]["trainer"] for c in header["config"]["configs"]] == ["ERM", "HEI"]
    assert back["method"].tolist() == ["ERM", "HEI"]
    np.testing.assert_allclose(back["full_test_mean"].to_numpy(), table["full_test_mean"].to_numpy())
    assert back.loc[0, "full_test_delta"] == 0.0


def test_report_errors(tmp_path):
    with pytest.raises(ReportError):
        report([])
    with pytest.raises(ReportError, match="not found"):
        load_result(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"method": "ERM"}), encoding="utf-8")
    with pytest.raises(ReportError, match="missing"):
        load_result(str(broken))


def reduced_acceptance(tmp_path):
    return with_overrides(parse_config(ACCEPTANCE_CONFIG), {
        "data": {"synth": {"num_nodes": 600}},
        "train": {"trainer": "HEI", "epochs": 40, "warmup_epochs": 10, "lambda": 1.0},
        "trials": 2,
        "output_dir": str(tmp_path),
    })


@pytest.mark.slow
def test_k_sensitivity_compares_both_ranges(tmp_path):
    assert K_LOW == [2, 4, 6] and K_HIGH == [6, 8, 10, 12]
    spreads = k_sensitivity(reduced_acceptance(tmp_path), str(tmp_path))
    assert spreads["low"] >= 0.0 and spreads["high"] >= 0.0
    assert spreads["stable"] == (spreads["high"] <= spreads["low"])
    for name, ks in (("k_low", K_LOW), ("k_high", K_HIGH)):
        frame = pd.read_csv(tmp_path / name / SWEEP_CSV, comment="#")
        assert frame["value"].tolist() == ks
        assert frame["full_test_mean"].between(0.0, 100.0).all()
    low = pd.read_csv(tmp_path / "k_low" / SWEEP_CSV, comment="#")["full_test_mean"]
    assert spreads["low"] == pytest.approx(low.max() - low.min())


@pytest.mark.slow
def test_metric_comparison_emits_three_rows(tmp_path):
    table = metric_comparison(reduced_acceptance(tmp_path), str(tmp_path))
    assert table["value"].tolist() == METRICS == ["LocalSim", "AggSim", "SimRank"]
    assert (table["trials"] == 2).all()
    for group in GROUPS:
        assert table[f"{group}_mean"].between(0.0, 100.0).all()
    written = pd.read_csv(tmp_path / "metric" / SWEEP_CSV, comment="#")
    assert written["value"].tolist() == METRICS
