"""
Training procedures: ERM, V-REx on random partitions, EERM-lite on
edge-drop augmented graphs and HEI with an inferred soft environment split.

All trainers are full-batch, select the model with the best validation
accuracy (first maximum wins) and log one record per epoch.
"""
import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from app.config import Config
from app.errors import HEIError, TrainingError
from app.logger import EpochLogWriter, get_logger
from app.utils import set_determinism
from hei.backbones import EncoderSpec, GraphInputs, NodeClassifier, build_model, prepare_inputs
from hei.environments import (
    EnvClassifier,
    env_gaps,
    env_weights,
    hei_objective,
    make_augmented_envs,
    random_partitions,
    vrex_objective,
)
from hei.graph import Graph
from hei.nn_core import adam_step, as_index, as_tensor, backward, make_optimizer, weighted_ce_loss
from hei.similarity import NeighborPattern, SimilarityMetric, stack_patterns
from hei.splits import EvalSetting

logger = get_logger(__name__)


class TrainerKind(str, Enum):
    ERM = "ERM"
    VREX = "VREX"
    EERM_LITE = "EERM_LITE"
    HEI = "HEI"


ENV_TRAINERS = (TrainerKind.VREX, TrainerKind.EERM_LITE, TrainerKind.HEI)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    trainer: TrainerKind = TrainerKind.ERM
    epochs: int = Field(default=Config.DEFAULT_EPOCHS, ge=1)
    warmup_epochs: int = Field(default=Config.DEFAULT_WARMUP_EPOCHS, ge=0)
    K: int = Field(default=Config.DEFAULT_K, ge=1)
    penalty_weight: float = Field(default=1.0, ge=0.0, alias="lambda")
    lr: float = Field(default=1e-2, gt=0.0)
    lr_rho: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=1e-3, ge=0.0)
    drop_rate_max: float = Field(default=Config.DEFAULT_DROP_RATE_MAX, ge=0.0, le=1.0)
    seed: int = 0
    z_metrics: List[SimilarityMetric] = Field(default_factory=lambda: [SimilarityMetric.SIMRANK], min_length=1)
    rho_hidden: int = Field(default=Config.DEFAULT_RHO_HIDDEN, ge=1)
    inner_steps: int = Field(default=1, ge=1)
    rho_steps: int = Field(default=1, ge=1)
    stop_grad_env_branch: bool = False

    @model_validator(mode="after")
    def _check_trainer_fields(self):
        if self.trainer in ENV_TRAINERS and self.K < 2:
            raise ValueError(f"{self.trainer.value} needs K >= 2, got {self.K}")
        if self.trainer is TrainerKind.HEI:
            if self.warmup_epochs >= self.epochs:
                raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
            if self.lr_rho > self.lr:
                raise ValueError(f"lr_rho ({self.lr_rho}) must be <= lr ({self.lr})")
        return self


@dataclass
class ModelState:
    model: NodeClassifier
    history: List[Dict[str, Any]]
    best_epoch: int
    best_val_acc: Optional[float]
    env_heads: Optional[nn.ModuleList] = None
    rho: Optional[EnvClassifier] = None
    partitions: Optional[List[np.ndarray]] = None
    extras: Dict[str, Any] = field(default_factory=dict)


def accuracy(model: NodeClassifier, inputs: GraphInputs, labels, idx) -> Optional[float]:
    """Fraction of idx predicted correctly; None for an empty set."""
    idx = as_index(idx)
    if idx.numel() == 0:
        return None
    was_training = model.training
    model.eval()
    with torch.no_grad():
        pred = model(inputs, idx).argmax(dim=1)
    model.train(was_training)
    return float((pred == as_index(labels)[idx]).double().mean().item())


# ============================================================================
# BASE TRAINER
# ============================================================================

class BaseTrainer:
    phase = "train"

    def __init__(self, cfg: TrainConfig, g: Graph, setting: EvalSetting,
                 backbone: Optional[EncoderSpec] = None, log: Optional[EpochLogWriter] = None):
        if setting.train_idx.size == 0:
            raise TrainingError("empty train set")
        if (g.labels[setting.train_idx] < 0).any():
            raise TrainingError("train set contains unlabeled nodes")
        self.cfg = cfg
        self.g = g
        self.setting = setting
        self.backbone = backbone or EncoderSpec()
        self.log = log or EpochLogWriter()

        set_determinism(cfg.seed)
        self.model = build_model(self.backbone, g)
        self.inputs = prepare_inputs(self.backbone, g)
        self.labels = as_index(np.where(g.labels >= 0, g.labels, 0))
        self.train_idx = as_index(setting.train_idx)
        self.y_train = self.labels[self.train_idx]
        self.optimizer = make_optimizer(self.model.parameters(), cfg.lr, cfg.weight_decay)

        self.best_state = copy.deepcopy(self.model.state_dict())
        self.best_epoch = -1
        self.best_val_acc: Optional[float] = None

    # ------------------------------------------------------------------ steps
    def train_risk(self, inputs: Optional[GraphInputs] = None) -> torch.Tensor:
        logits = self.model(inputs or self.inputs)[self.train_idx]
        return weighted_ce_loss(logits, self.y_train)

    def erm_step(self) -> Dict[str, Any]:
        self.optimizer.zero_grad(set_to_none=True)
        loss = self.train_risk()
        backward(loss, self.model.parameters())
        adam_step(self.optimizer)
        return {"train_loss": loss.item()}

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        raise NotImplementedError

    # ------------------------------------------------------------------- loop
    def _select(self, epoch: int, val_acc: Optional[float]):
        if val_acc is None:
            self.best_state = copy.deepcopy(self.model.state_dict())
            self.best_epoch = epoch
            return
        if self.best_val_acc is None or val_acc > self.best_val_acc:
            self.best_val_acc = val_acc
            self.best_state = copy.deepcopy(self.model.state_dict())
            self.best_epoch = epoch

    def fit(self) -> ModelState:
        for epoch in range(self.cfg.epochs):
            try:
                record = self.train_epoch(epoch)
            except HEIError as e:
                raise TrainingError(f"epoch {epoch}: {e}") from e
            loss = record.get("train_loss")
            if loss is None or not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            val_acc = accuracy(self.model, self.inputs, self.labels, self.setting.val_idx)
            self._select(epoch, val_acc)
            record.update({"epoch": epoch, "val_acc": val_acc})
            record.setdefault("phase", self.phase)
            self.log.write(record)

        self.model.load_state_dict(self.best_state)
        logger.info(
            f"{self.cfg.trainer.value} done: best epoch {self.best_epoch}, "
            f"val acc {self.best_val_acc if self.best_val_acc is not None else float('nan'):.4f}"
        )
        return self.state()

    def state(self) -> ModelState:
        return ModelState(
            model=self.model,
            history=self.log.records,
            best_epoch=self.best_epoch,
            best_val_acc=self.best_val_acc,
        )


class ERMTrainer(BaseTrainer):
    phase = "erm"

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        return self.erm_step()


class VRExTrainer(BaseTrainer):
    """Sum of partition risks plus lambda times their population variance."""
    phase = "vrex"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.partitions = random_partitions(self.setting.train_idx, self.cfg.K, self.cfg.seed)
        self.partition_idx = [as_index(p) for p in self.partitions]

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        self.optimizer.zero_grad(set_to_none=True)
        logits = self.model(self.inputs)
        risks = torch.stack([weighted_ce_loss(logits[idx], self.labels[idx]) for idx in self.partition_idx])
        loss = vrex_objective(risks, self.cfg.penalty_weight)
        backward(loss, self.model.parameters())
        adam_step(self.optimizer)
        return {
            "train_loss": loss.item(),
            "penalty": risks.var(unbiased=False).item(),
            "env_sizes": [int(p.size) for p in self.partitions],
            "risks": risks.detach().tolist(),
        }

    def state(self) -> ModelState:
        out = super().state()
        out.partitions = self.partitions
        return out


class EERMLiteTrainer(BaseTrainer):
    """Same objective as V-REx, environments are edge-drop copies of the graph."""
    phase = "eerm_lite"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.env_graphs = make_augmented_envs(self.g, self.cfg.K, self.cfg.drop_rate_max, self.cfg.seed)
        self.env_inputs = [prepare_inputs(self.backbone, eg) for eg in self.env_graphs]

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        self.optimizer.zero_grad(set_to_none=True)
        risks = torch.stack([self.train_risk(inputs) for inputs in self.env_inputs])
        loss = vrex_objective(risks, self.cfg.penalty_weight)
        backward(loss, self.model.parameters())
        adam_step(self.optimizer)
        return {
            "train_loss": loss.item(),
            "penalty": risks.var(unbiased=False).item(),
            "env_sizes": [int(eg.num_edges) for eg in self.env_graphs],
            "risks": risks.detach().tolist(),
        }


# ============================================================================
# HEI
# ============================================================================

def standardize_patterns(z: np.ndarray, train_idx: np.ndarray) -> np.ndarray:
    """Center/scale every column with train statistics (zero std -> 1)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    mu = z[train_idx].mean(axis=0)
    sd = z[train_idx].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (z - mu) / sd


class HEITrainer(BaseTrainer):
    """
    Warm-up ERM, then per epoch:
      (a) soft environments from rho(z)
      (b) descent on each env head omega_k with the encoder frozen
      (c) ascent on rho maximizing the invariance penalty
      (d) descent on (encoder, omega) for R + lambda * penalty
    """

    def __init__(self, cfg: TrainConfig, g: Graph, setting: EvalSetting,
                 patterns: Union[np.ndarray, Sequence[NeighborPattern]],
                 backbone: Optional[EncoderSpec] = None, log: Optional[EpochLogWriter] = None):
        super().__init__(cfg, g, setting, backbone, log)
        if cfg.K < 2:
            raise TrainingError(f"HEI needs K >= 2, got {cfg.K}")
        z = patterns if isinstance(patterns, np.ndarray) else stack_patterns(list(patterns))
        if z.shape[0] != g.num_nodes:
            raise TrainingError(f"patterns cover {z.shape[0]} nodes, graph has {g.num_nodes}")
        if not np.isfinite(z).all():
            raise TrainingError("neighbor patterns contain non-finite values")
        z = standardize_patterns(z, setting.train_idx)
        self.z_train = as_tensor(z[setting.train_idx])

        # rho draws from its own RNG stream so the backbone trajectory matches ERM
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed + 1)
            self.rho = EnvClassifier(self.z_train.shape[1], cfg.rho_hidden, cfg.K)
        self.rho_optimizer = make_optimizer(self.rho.parameters(), cfg.lr_rho, cfg.weight_decay)
        self.env_heads: Optional[nn.ModuleList] = None
        self.env_optimizer = None

    def _clone_heads(self):
        self.env_heads = nn.ModuleList(copy.deepcopy(self.model.head) for _ in range(self.cfg.K))
        self.env_optimizer = make_optimizer(self.env_heads.parameters(), self.cfg.lr, self.cfg.weight_decay)
        logger.info(f"Warm-up finished: cloned {self.cfg.K} environment heads")

    def _frozen_reps(self) -> torch.Tensor:
        with torch.no_grad():
            return self.model.encode(self.inputs)[self.train_idx]

    def update_env_heads(self, weights: torch.Tensor):
        """(b) omega_k <- descent on R_k(omega_k, Phi), Phi frozen."""
        reps = self._frozen_reps()
        w = weights.detach()
        for _ in range(self.cfg.inner_steps):
            self.env_optimizer.zero_grad(set_to_none=True)
            loss = sum(
                weighted_ce_loss(head(reps), self.y_train, w[:, k]) for k, head in enumerate(self.env_heads)
            )
            backward(loss, self.env_heads.parameters())
            adam_step(self.env_optimizer)

    def penalty_for_rho(self) -> torch.Tensor:
        """Invariance penalty as a function of rho only."""
        reps = self._frozen_reps()
        with torch.no_grad():
            main_logits = self.model.head(reps)
            env_logits = [head(reps) for head in self.env_heads]
        weights = env_weights(self.rho, self.z_train).weights
        return env_gaps(main_logits, env_logits, self.y_train, weights).sum()

    def update_rho(self) -> float:
        """(c) rho <- ascent on the penalty, everything else frozen."""
        before = None
        for _ in range(self.cfg.rho_steps):
            self.rho_optimizer.zero_grad(set_to_none=True)
            penalty = self.penalty_for_rho()
            before = penalty.item() if before is None else before
            backward(-penalty, self.rho.parameters())
            adam_step(self.rho_optimizer)
        return before

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        if epoch < self.cfg.warmup_epochs:
            record = self.erm_step()
            record["phase"] = "warmup"
            return record
        if self.env_heads is None:
            self._clone_heads()

        assignment = env_weights(self.rho, self.z_train)
        self.update_env_heads(assignment.weights)
        self.update_rho()

        with torch.no_grad():
            assignment = env_weights(self.rho, self.z_train)
        weights = assignment.weights.detach()

        self.optimizer.zero_grad(set_to_none=True)
        lam = self.cfg.penalty_weight
        if lam == 0.0:
            loss = self.train_risk()
            backward(loss, self.model.parameters())
            adam_step(self.optimizer)
            with torch.no_grad():
                _, risk, penalty = hei_objective(self.model, self.env_heads, self.inputs, self.labels,
                                                 self.train_idx, weights, 0.0)
            train_loss = loss.item()
        else:
            total, risk, penalty = hei_objective(
                self.model, self.env_heads, self.inputs, self.labels, self.train_idx, weights, lam,
                stop_grad_env_branch=self.cfg.stop_grad_env_branch,
            )
            backward(total, self.model.parameters())
            adam_step(self.optimizer)
            train_loss = total.item()

        with torch.no_grad():
            logits = self.model.head(self._frozen_reps())
            risks = [weighted_ce_loss(logits, self.y_train, weights[:, k]).item() for k in range(self.cfg.K)]
        return {
            "phase": "hei",
            "train_loss": train_loss,
            "penalty": float(penalty.item()),
            "env_sizes": assignment.sizes(),
            "risks": risks,
        }

    def state(self) -> ModelState:
        out = super().state()
        out.env_heads = self.env_heads
        out.rho = self.rho
        return out


# ============================================================================
# ENTRY POINTS
# ============================================================================

def train_erm(cfg: TrainConfig, g: Graph, setting: EvalSetting, backbone: Optional[EncoderSpec] = None,
              log: Optional[EpochLogWriter] = None) -> ModelState:
    return ERMTrainer(cfg, g, setting, backbone, log).fit()


def train_vrex(cfg: TrainConfig, g: Graph, setting: EvalSetting, backbone: Optional[EncoderSpec] = None,
               log: Optional[EpochLogWriter] = None) -> ModelState:
    return VRExTrainer(cfg, g, setting, backbone, log).fit()


def train_eerm_lite(cfg: TrainConfig, g: Graph, setting: EvalSetting, backbone: Optional[EncoderSpec] = None,
                    log: Optional[EpochLogWriter] = None) -> ModelState:
    return EERMLiteTrainer(cfg, g, setting, backbone, log).fit()


def train_hei(cfg: TrainConfig, g: Graph, setting: EvalSetting,
              patterns: Union[np.ndarray, Sequence[NeighborPattern]],
              backbone: Optional[EncoderSpec] = None, log: Optional[EpochLogWriter] = None) -> ModelState:
    return HEITrainer(cfg, g, setting, patterns, backbone, log).fit()


def train(cfg: TrainConfig, g: Graph, setting: EvalSetting, backbone: Optional[EncoderSpec] = None,
          patterns=None, log: Optional[EpochLogWriter] = None) -> ModelState:
    """Dispatch on cfg.trainer."""
    if cfg.trainer is TrainerKind.ERM:
        return train_erm(cfg, g, setting, backbone, log)
    if cfg.trainer is TrainerKind.VREX:
        return train_vrex(cfg, g, setting, backbone, log)
    if cfg.trainer is TrainerKind.EERM_LITE:
        return train_eerm_lite(cfg, g, setting, backbone, log)
    if patterns is None:
        raise TrainingError("HEI needs neighbor patterns")
    return train_hei(cfg, g, setting, patterns, backbone, log)
