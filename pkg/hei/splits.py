"""
Homophily-stratified evaluation settings.

Standard: test nodes split at the homophily median into High/Low Hom Test.
Simulation: train on one homophily half, evaluate on the opposite test half.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from app.errors import SplitError
from app.logger import get_logger
from app.utils import atomic_write_json, read_json
from hei.graph import Graph, NodeSplit, usable_homophily

logger = get_logger(__name__)


class SettingKind(str, Enum):
    STANDARD = "standard"
    SIMULATION_LOW_TO_HIGH = "simulation_low_to_high"
    SIMULATION_HIGH_TO_LOW = "simulation_high_to_low"


@dataclass
class EvalSetting:
    kind: SettingKind
    train_idx: np.ndarray
    val_idx: np.ndarray
    full_test: np.ndarray
    high_hom_test: np.ndarray
    low_hom_test: np.ndarray
    eval_group: str = "full"  # full | high | low: the shifted target group

    @property
    def eval_idx(self) -> np.ndarray:
        return {"full": self.full_test, "high": self.high_hom_test, "low": self.low_hom_test}[self.eval_group]

    def groups(self) -> dict:
        return {
            "full_test": self.full_test,
            "high_hom_test": self.high_hom_test,
            "low_hom_test": self.low_hom_test,
        }

    def check(self):
        union = np.union1d(self.high_hom_test, self.low_hom_test)
        if not np.array_equal(union, np.sort(self.full_test)):
            raise SplitError("high/low test groups do not cover the full test set")
        if np.intersect1d(self.high_hom_test, self.low_hom_test).size:
            raise SplitError("high/low test groups overlap")
        if abs(self.high_hom_test.size - self.low_hom_test.size) > 1:
            raise SplitError("high/low test groups differ in size by more than one")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "eval_group": self.eval_group,
            "train_idx": self.train_idx.tolist(),
            "val_idx": self.val_idx.tolist(),
            "full_test": self.full_test.tolist(),
            "high_hom_test": self.high_hom_test.tolist(),
            "low_hom_test": self.low_hom_test.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalSetting":
        setting = cls(
            kind=SettingKind(payload["kind"]),
            train_idx=np.asarray(payload["train_idx"], dtype=np.int64),
            val_idx=np.asarray(payload.get("val_idx", []), dtype=np.int64),
            full_test=np.asarray(payload["full_test"], dtype=np.int64),
            high_hom_test=np.asarray(payload["high_hom_test"], dtype=np.int64),
            low_hom_test=np.asarray(payload["low_hom_test"], dtype=np.int64),
            eval_group=payload.get("eval_group", "full"),
        )
        setting.check()
        return setting


def median_halves(idx: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    (low, high) halves: high holds the floor(n/2) nodes strictly above the
    median; ties at the median go to low first, ordered by node id.
    """
    order = np.lexsort((idx, values))
    n = idx.size
    n_high = n // 2
    low = np.sort(idx[order[: n - n_high]])
    high = np.sort(idx[order[n - n_high:]])
    return low, high


def build_standard_setting(g: Graph, split: NodeSplit) -> EvalSetting:
    split.validate(g)
    test_idx, test_h = usable_homophily(g, split.test, "test")
    if test_idx.size < 2:
        raise SplitError(f"need at least 2 test nodes with defined homophily, got {test_idx.size}")
    low, high = median_halves(test_idx, test_h)
    setting = EvalSetting(
        kind=SettingKind.STANDARD,
        train_idx=np.sort(split.train),
        val_idx=np.sort(split.val),
        full_test=np.sort(test_idx),
        high_hom_test=high,
        low_hom_test=low,
        eval_group="full",
    )
    setting.check()
    logger.info(
        f"Standard setting: {setting.train_idx.size} train, "
        f"{high.size} high-hom / {low.size} low-hom test"
    )
    return setting


def build_simulation_settings(g: Graph, split: NodeSplit) -> Tuple[EvalSetting, EvalSetting]:
    """(LowHomTrain -> HighHomTest, HighHomTrain -> LowHomTest)."""
    standard = build_standard_setting(g, split)
    train_idx, train_h = usable_homophily(g, split.train, "train")
    if train_idx.size < 2:
        raise SplitError(f"need at least 2 train nodes with defined homophily, got {train_idx.size}")
    low_train, high_train = median_halves(train_idx, train_h)
    if low_train.size == 0 or high_train.size == 0:
        raise SplitError("empty train half after homophily filtering")

    low_to_high = EvalSetting(
        kind=SettingKind.SIMULATION_LOW_TO_HIGH,
        train_idx=low_train,
        val_idx=standard.val_idx,
        full_test=standard.full_test,
        high_hom_test=standard.high_hom_test,
        low_hom_test=standard.low_hom_test,
        eval_group="high",
    )
    high_to_low = EvalSetting(
        kind=SettingKind.SIMULATION_HIGH_TO_LOW,
        train_idx=high_train,
        val_idx=standard.val_idx,
        full_test=standard.full_test,
        high_hom_test=standard.high_hom_test,
        low_hom_test=standard.low_hom_test,
        eval_group="low",
    )
    logger.info(f"Simulation settings: low train {low_train.size}, high train {high_train.size}")
    return low_to_high, high_to_low


def build_setting(g: Graph, split: NodeSplit, kind: SettingKind) -> EvalSetting:
    kind = SettingKind(kind)
    if kind is SettingKind.STANDARD:
        return build_standard_setting(g, split)
    low_to_high, high_to_low = build_simulation_settings(g, split)
    return low_to_high if kind is SettingKind.SIMULATION_LOW_TO_HIGH else high_to_low


def save_setting(setting: EvalSetting, path: str):
    atomic_write_json(path, setting.to_dict())


def load_setting(path: str) -> EvalSetting:
    return EvalSetting.from_dict(read_json(path))
