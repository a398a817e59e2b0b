"""
Experiment configuration validation.
Checks a parsed ExperimentConfig against the documented grids before a run.
"""

import os
import sys
from typing import TYPE_CHECKING, List, Tuple

from rich.console import Console

from app.config import Config
from app.errors import ConfigError
from app.logger import get_logger

if TYPE_CHECKING:
    from hei.harness import ExperimentConfig

logger = get_logger(__name__)


class ConfigValidator:
    """Collects errors (run cannot proceed) and warnings (outside documented grids)."""

    def __init__(self, cfg: "ExperimentConfig"):
        self.cfg = cfg
        self.errors: List[str] = []
        self.warnings: List[str] = []
        self.validated = False

    def check_data_source(self) -> bool:
        data = self.cfg.data
        if data.source != "files":
            return True
        all_exist = True
        for name in ("edges", "features", "labels", "split"):
            path = getattr(data, name)
            if not os.path.exists(path):
                self.errors.append(f"❌ Missing {name} file: {path}")
                all_exist = False
        return all_exist

    def check_train_grids(self):
        train = self.cfg.train
        trainer = train.trainer.value
        env_based = trainer in ("VREX", "EERM_LITE", "HEI")

        if train.lr not in Config.LR_GRID:
            self.warnings.append(f"⚠️  lr={train.lr} outside grid {Config.LR_GRID}")
        if train.weight_decay not in Config.WEIGHT_DECAY_GRID:
            self.warnings.append(f"⚠️  weight_decay={train.weight_decay} outside grid {Config.WEIGHT_DECAY_GRID}")
        if env_based:
            lo, hi = Config.K_RANGE
            if not lo <= train.K <= hi:
                self.warnings.append(f"⚠️  K={train.K} outside the sensitivity range [{lo}, {hi}]")
            if train.penalty_weight == 0.0:
                self.warnings.append(f"⚠️  lambda=0 with {trainer}: the penalty is disabled")
            elif train.penalty_weight not in Config.LAMBDA_GRID:
                self.warnings.append(f"⚠️  lambda={train.penalty_weight} outside grid {Config.LAMBDA_GRID}")
        if trainer == "HEI":
            if train.lr_rho not in Config.RHO_LR_GRID:
                self.warnings.append(f"⚠️  lr_rho={train.lr_rho} outside grid {Config.RHO_LR_GRID}")
            if train.rho_hidden not in Config.RHO_HIDDEN_GRID:
                self.warnings.append(f"⚠️  rho_hidden={train.rho_hidden} outside grid {Config.RHO_HIDDEN_GRID}")

    def _num_nodes(self):
        data = self.cfg.data
        if data.source == "synth":
            return data.synth.num_nodes
        if not data.labels or not os.path.exists(data.labels):
            return None
        with open(data.labels, "r", encoding="utf-8") as fh:
            return sum(1 for line in fh if line.strip())

    def check_trials(self):
        n = self._num_nodes()
        if n is None:
            return
        large = n >= Config.LARGE_GRAPH_NODES
        expected = Config.LARGE_GRAPH_TRIALS if large else Config.DEFAULT_TRIALS
        if self.cfg.trials < expected:
            kind = "large" if large else "small"
            self.warnings.append(
                f"⚠️  {self.cfg.trials} trial(s); {kind}-graph results are usually reported over {expected}"
            )

    def validate_all(self) -> Tuple[bool, List[str], List[str]]:
        """
        Run all validations.

        Returns:
            success: bool
            errors: list of error messages
            warnings: list of warning messages
        """
        logger.debug("Validating experiment config...")
        files_valid = self.check_data_source()
        self.check_train_grids()
        self.check_trials()
        self.validated = True
        return files_valid and not self.errors, self.errors, self.warnings

    def print_report(self, console: Console = None):
        console = console or Console(stderr=True)
        if not self.validated:
            console.print("⚠️  Validation not run yet")
            return
        console.rule("CONFIG VALIDATION REPORT")
        if self.errors:
            console.print("[bold red]ERRORS:[/]")
            for error in self.errors:
                console.print(error)
        if self.warnings:
            console.print("[bold yellow]WARNINGS:[/]")
            for warning in self.warnings:
                console.print(warning)
        if not self.errors:
            console.print("✅ All required validations passed!")
        console.rule()

    def raise_if_invalid(self):
        if not self.validated:
            self.validate_all()
        for warning in self.warnings:
            logger.warning(warning)
        if self.errors:
            raise ConfigError("; ".join(e.replace("❌ ", "") for e in self.errors))


def validate_or_raise(cfg: "ExperimentConfig") -> ConfigValidator:
    """Validate and raise ConfigError on errors; warnings are logged."""
    validator = ConfigValidator(cfg)
    validator.validate_all()
    validator.raise_if_invalid()
    return validator


if __name__ == "__main__":
    from hei.harness import load_experiment_config

    if len(sys.argv) != 2:
        print("usage: python -m app.env_validator <config.yaml>")
        sys.exit(2)
    validator = ConfigValidator(load_experiment_config(sys.argv[1]))
    success, _, _ = validator.validate_all()
    validator.print_report()
    sys.exit(0 if success else 1)
