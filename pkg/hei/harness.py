"""
Experiment orchestration: multi-seed trials, sweeps and result files.

Trial t regenerates synthetic data with synth.seed + t and initializes the
model with train.seed + t, so different trainers share data and seeds.
"""
import copy
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from app.config import Config
from app.errors import ConfigError, TrialError
from app.logger import EpochLogWriter, get_logger
from app.utils import atomic_write_json, atomic_write_text, provenance, provenance_header
from hei.backbones import EncoderSpec, prepare_inputs
from hei.checkpoint import save_checkpoint
from hei.graph import EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLIT_FILE, Graph, NodeSplit, load_graph, load_split
from hei.nn_core import as_index
from hei.similarity import SimilarityConfig, SimilarityMetric, compute_patterns
from hei.splits import EvalSetting, SettingKind, build_setting
from hei.synthgen import SynthConfig, generate
from hei.trainers import TrainConfig, TrainerKind, accuracy, train

logger = get_logger(__name__)

GROUPS = ("full_test", "high_hom_test", "low_hom_test")
RESULT_JSON = "result.json"
RESULT_CSV = "result.csv"
SWEEP_CSV = "sweep.csv"
SWEEP_PARAMS = ("K", "lambda", "metric")


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: Literal["synth", "files"] = "synth"
    synth: SynthConfig = Field(default_factory=SynthConfig)
    graph_dir: Optional[str] = None
    edges: Optional[str] = None
    features: Optional[str] = None
    labels: Optional[str] = None
    split: Optional[str] = None
    num_classes: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _resolve_files(self):
        if self.source != "files":
            return self
        if self.graph_dir:
            self.edges = self.edges or os.path.join(self.graph_dir, EDGES_FILE)
            self.features = self.features or os.path.join(self.graph_dir, FEATURES_FILE)
            self.labels = self.labels or os.path.join(self.graph_dir, LABELS_FILE)
            self.split = self.split or os.path.join(self.graph_dir, SPLIT_FILE)
        missing = [k for k in ("edges", "features", "labels", "split") if not getattr(self, k)]
        if missing:
            raise ValueError(f"file data source needs paths for {missing} (or graph_dir)")
        return self


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    data: DataConfig = Field(default_factory=DataConfig)
    setting: SettingKind = SettingKind.STANDARD
    backbone: EncoderSpec = Field(default_factory=EncoderSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    similarity: SimilarityConfig = Field(default_factory=SimilarityConfig)
    trials: int = Field(default=Config.DEFAULT_TRIALS, ge=1)
    output_dir: str = Config.OUTPUT_DIR
    save_checkpoints: bool = False

    @property
    def method(self) -> str:
        return self.name or self.train.trainer.value

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


# ============================================================================
# CONFIG FILES
# ============================================================================

def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Nested dict update; override wins on conflicts."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_config(payload: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload or {})
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {e}") from e


def load_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = yaml.safe_load(fh) or {}
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return payload


def load_experiment_config(path: str, base: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Flags (base) first, then the file's values on top."""
    return parse_config(deep_merge(base or {}, load_config_file(path)))


def with_overrides(cfg: ExperimentConfig, override: Dict[str, Any]) -> ExperimentConfig:
    return parse_config(deep_merge(cfg.model_dump(mode="python", by_alias=True), override))


# ============================================================================
# RESULTS
# ============================================================================

@dataclass
class ExperimentResult:
    method: str
    setting: str
    config: Dict[str, Any]
    seeds: List[int]
    trials: List[Dict[str, Any]]
    histories: List[List[Dict[str, Any]]] = field(default_factory=list, repr=False)

    def values(self, group: str) -> np.ndarray:
        return np.array([row[group] for row in self.trials], dtype=np.float64)

    @property
    def aggregate(self) -> Dict[str, Dict[str, float]]:
        """Mean and population std per test group, in percent."""
        out = {}
        for group in GROUPS:
            vals = self.values(group)
            out[group] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool": Config.TOOL_NAME,
            "tool_version": Config.TOOL_VERSION,
            "method": self.method,
            "setting": self.setting,
            "seeds": self.seeds,
            "config": self.config,
            "trials": self.trials,
            "aggregate": self.aggregate,
        }

    def to_frame(self) -> pd.DataFrame:
        rows = [{"trial": str(row["trial"]), "seed": row["seed"], **{g: row[g] for g in GROUPS}}
                for row in self.trials]
        agg = self.aggregate
        for stat in ("mean", "std"):
            rows.append({"trial": stat, "seed": None, **{g: agg[g][stat] for g in GROUPS}})
        frame = pd.DataFrame(rows, columns=["trial", "seed", *GROUPS])
        frame.insert(0, "setting", self.setting)
        frame.insert(0, "method", self.method)
        return frame

    def write(self, directory: str):
        atomic_write_json(os.path.join(directory, RESULT_JSON), self.to_dict())
        atomic_write_text(os.path.join(directory, RESULT_CSV),
                          provenance_header(self.config, self.seeds)
                          + self.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n"))


# ============================================================================
# TRIALS
# ============================================================================

def load_trial_data(cfg: ExperimentConfig, trial: int) -> Tuple[Graph, NodeSplit]:
    data = cfg.data
    if data.source == "synth":
        synth = data.synth.model_copy(update={"seed": data.synth.seed + trial})
        g, split, _ = generate(synth)
        return g, split
    g = load_graph(data.edges, data.features, data.labels, data.num_classes)
    return g, load_split(data.split)


def evaluate_groups(state, inputs, labels, setting: EvalSetting) -> Dict[str, float]:
    out = {}
    for name, idx in setting.groups().items():
        acc = accuracy(state.model, inputs, labels, idx)
        out[name] = float("nan") if acc is None else 100.0 * acc
    return out


def run_trial(cfg: ExperimentConfig, trial: int, out_dir: Optional[str] = None,
              data: Optional[Tuple[Graph, NodeSplit]] = None) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    g, split = data if data is not None else load_trial_data(cfg, trial)
    setting = build_setting(g, split, cfg.setting)
    train_cfg = cfg.train.model_copy(update={"seed": cfg.train.seed + trial})

    patterns = None
    if train_cfg.trainer is TrainerKind.HEI:
        patterns = compute_patterns(g, train_cfg.z_metrics, cfg.similarity)

    log_path = os.path.join(out_dir, f"trial_{trial}", "epochs.jsonl") if out_dir else None
    meta = provenance(cfg.echo(), [train_cfg.seed])
    with EpochLogWriter(log_path, meta=meta) as log:
        state = train(train_cfg, g, setting, cfg.backbone, patterns=patterns, log=log)

    inputs = prepare_inputs(cfg.backbone, g)
    labels = as_index(np.where(g.labels >= 0, g.labels, 0))
    row = {
        "trial": trial,
        "seed": train_cfg.seed,
        **evaluate_groups(state, inputs, labels, setting),
        "best_epoch": state.best_epoch,
        "best_val_acc": None if state.best_val_acc is None else 100.0 * state.best_val_acc,
        "train_nodes": int(setting.train_idx.size),
        "eval_group": setting.eval_group,
    }
    if out_dir and cfg.save_checkpoints:
        save_checkpoint(state.model.state_dict(), os.path.join(out_dir, f"trial_{trial}", "model.ckpt"))
    return row, state.history


def run_experiment(cfg: ExperimentConfig, output_dir: Optional[str] = None,
                   progress: Optional[bool] = None) -> ExperimentResult:
    out_dir = output_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    show = Config.PROGRESS if progress is None else progress

    shared = None
    if cfg.data.source == "files":
        shared = load_trial_data(cfg, 0)

    rows, histories = [], []
    for t in tqdm(range(cfg.trials), desc=cfg.method, disable=not show):
        try:
            row, history = run_trial(cfg, t, out_dir, shared)
        except Exception as e:
            if isinstance(e, TrialError):
                raise
            raise TrialError(t, e) from e
        rows.append(row)
        histories.append(history)
        logger.info(
            f"[{cfg.method}] trial {t}: full={row['full_test']:.2f} "
            f"high={row['high_hom_test']:.2f} low={row['low_hom_test']:.2f}"
        )

    result = ExperimentResult(
        method=cfg.method,
        setting=cfg.setting.value,
        config=cfg.echo(),
        seeds=[cfg.train.seed + t for t in range(cfg.trials)],
        trials=rows,
        histories=histories,
    )
    result.write(out_dir)
    logger.info(f"Results written to {out_dir}")
    return result


# ============================================================================
# SWEEPS
# ============================================================================

def _sweep_override(param: str, value) -> Dict[str, Any]:
    if param == "K":
        return {"train": {"K": int(value)}}
    if param == "lambda":
        return {"train": {"lambda": float(value)}}
    metric = SimilarityMetric(value)
    return {"train": {"z_metrics": [metric]}, "similarity": {"metric": metric}}


@dataclass
class SweepResult:
    param: str
    values: List[Any]
    results: List[ExperimentResult]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for value, result in zip(self.values, self.results):
            row = {"param": self.param, "value": value, "method": result.method, "trials": len(result.trials)}
            for group, stats in result.aggregate.items():
                row[f"{group}_mean"] = stats["mean"]
                row[f"{group}_std"] = stats["std"]
            rows.append(row)
        return pd.DataFrame(rows)


def sweep(cfg: ExperimentConfig, param: str, values: Sequence[Any], output_dir: Optional[str] = None,
          progress: Optional[bool] = None) -> SweepResult:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter '{param}' (use one of {', '.join(SWEEP_PARAMS)})")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_dir = output_dir or cfg.output_dir
    results = []
    for value in values:
        try:
            point = with_overrides(cfg, _sweep_override(param, value))
        except ValueError as e:
            raise ConfigError(f"invalid {param} value {value!r}: {e}") from e
        label = value.value if isinstance(value, SimilarityMetric) else value
        logger.info(f"Sweep {param}={label}")
        results.append(run_experiment(point, os.path.join(out_dir, f"{param}={label}"), progress))

    labels = [v.value if isinstance(v, SimilarityMetric) else v for v in values]
    out = SweepResult(param=param, values=labels, results=results)
    seeds = [cfg.train.seed + t for t in range(cfg.trials)]
    atomic_write_text(os.path.join(out_dir, SWEEP_CSV),
                      provenance_header({**cfg.echo(), "sweep": {"param": param, "values": labels}}, seeds)
                      + out.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    return out
