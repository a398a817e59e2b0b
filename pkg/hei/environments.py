"""
Environment machinery: the environment classifier, soft environment risks,
the invariance penalty, random partitions and edge-drop augmented graphs.
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
from torch import nn

from app.errors import NonFiniteError, TrainingError
from app.logger import get_logger
from hei.backbones import GraphInputs, NodeClassifier, classify
from hei.graph import Graph
from hei.nn_core import MLP, as_index, as_tensor, softmax, weighted_ce_loss

logger = get_logger(__name__)


class EnvClassifier(nn.Module):
    """Two-layer MLP z -> K logits, softmax output."""

    def __init__(self, in_dim: int, hidden: int, num_envs: int):
        super().__init__()
        self.net = MLP([in_dim, hidden, num_envs], final_relu=False)
        self.num_envs = num_envs

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return softmax(self.net(z))


@dataclass
class EnvAssignment:
    weights: torch.Tensor  # N_train x K, row-stochastic
    hard: np.ndarray       # argmax per node, reporting only

    @property
    def num_envs(self) -> int:
        return int(self.weights.shape[1])

    def sizes(self) -> List[int]:
        return np.bincount(self.hard, minlength=self.num_envs).astype(int).tolist()


def env_weights(rho: EnvClassifier, z) -> EnvAssignment:
    z = z if isinstance(z, torch.Tensor) else as_tensor(z)
    if z.dim() == 1:
        z = z.reshape(-1, 1)
    if not torch.isfinite(z).all():
        raise NonFiniteError("neighbor patterns contain non-finite values")
    weights = rho(z)
    hard = weights.detach().argmax(dim=1).cpu().numpy()
    return EnvAssignment(weights=weights, hard=hard)


# ============================================================================
# RISKS
# ============================================================================

def erm_risk(model: NodeClassifier, inputs: GraphInputs, labels, idx) -> torch.Tensor:
    """Mean cross-entropy over idx."""
    idx = as_index(idx)
    if idx.numel() == 0:
        raise TrainingError("erm_risk: empty index set")
    logits = model(inputs)[idx]
    return weighted_ce_loss(logits, as_index(labels)[idx])


def soft_env_risk(model: NodeClassifier, inputs: GraphInputs, labels, train_idx, w_col) -> torch.Tensor:
    """(1/N_train) * sum_v w_v * CE(v) for one environment column."""
    idx = as_index(train_idx)
    logits = model(inputs)[idx]
    return weighted_ce_loss(logits, as_index(labels)[idx], w_col)


def env_gaps(main_logits: torch.Tensor, env_logits: Sequence[torch.Tensor], y: torch.Tensor,
             weights: torch.Tensor) -> torch.Tensor:
    """K-vector of R_k(main) - R_k(env head k)."""
    gaps = [
        weighted_ce_loss(main_logits, y, weights[:, k]) - weighted_ce_loss(env_logits[k], y, weights[:, k])
        for k in range(weights.shape[1])
    ]
    return torch.stack(gaps)


def invariance_penalty(model: NodeClassifier, env_heads: Sequence[nn.Module], inputs: GraphInputs,
                       labels, idx, assignment: EnvAssignment, reps: torch.Tensor = None) -> torch.Tensor:
    """sum_k [R_k(omega, Phi) - R_k(omega_k, Phi)] under the soft assignment."""
    idx = as_index(idx)
    if reps is None:
        reps = model.encode(inputs)[idx]
    y = as_index(labels)[idx]
    main_logits = classify(model.head, reps)
    env_logits = [classify(head, reps) for head in env_heads]
    return env_gaps(main_logits, env_logits, y, assignment.weights).sum()


def hei_objective(model: NodeClassifier, env_heads: Sequence[nn.Module], inputs: GraphInputs, labels,
                  idx, weights: torch.Tensor, lam: float, stop_grad_env_branch: bool = False):
    """
    (total, risk, penalty) with total = R(omega, Phi) + lam * penalty.
    stop_grad_env_branch cuts the encoder gradient through the env-head terms.
    """
    idx = as_index(idx)
    y = as_index(labels)[idx]
    reps = model.encode(inputs)[idx]
    main_logits = classify(model.head, reps)
    risk = weighted_ce_loss(main_logits, y)
    env_reps = reps.detach() if stop_grad_env_branch else reps
    env_logits = [classify(head, env_reps) for head in env_heads]
    penalty = env_gaps(main_logits, env_logits, y, weights).sum()
    return risk + lam * penalty, risk, penalty


# ============================================================================
# ENVIRONMENT BUILDERS
# ============================================================================

def random_partitions(train_idx, num_envs: int, seed: int) -> List[np.ndarray]:
    """Shuffle train ids with the seed and cut them into K near-equal parts."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if num_envs < 1:
        raise TrainingError(f"need at least one environment, got K={num_envs}")
    if train_idx.size < num_envs:
        raise TrainingError(f"{train_idx.size} train nodes cannot fill K={num_envs} environments")
    rng = np.random.default_rng(seed)
    return [np.sort(part) for part in np.array_split(rng.permutation(train_idx), num_envs)]


def vrex_objective(risks: torch.Tensor, lam: float) -> torch.Tensor:
    """sum_k R_k + lam * population variance of the R_k."""
    return risks.sum() + lam * risks.var(unbiased=False)


def drop_rates(num_envs: int, drop_rate_max: float) -> List[float]:
    """Rate of env k is k/(K-1) * drop_rate_max: env 0 is the original graph."""
    if num_envs == 1:
        return [0.0]
    return [k / (num_envs - 1) * drop_rate_max for k in range(num_envs)]


def make_augmented_envs(g: Graph, num_envs: int, drop_rate_max: float, seed: int) -> List[Graph]:
    if num_envs < 2:
        raise TrainingError(f"augmented environments need K >= 2, got {num_envs}")
    rng = np.random.default_rng(seed)
    edges = g.edge_list()
    envs = []
    for k, rate in enumerate(drop_rates(num_envs, drop_rate_max)):
        keep = rng.random(edges.shape[0]) >= rate
        envs.append(g if keep.all() else g.with_edges(edges[keep]))
        logger.debug(f"Env {k}: drop rate {rate:.3f}, kept {int(keep.sum())}/{edges.shape[0]} edges")
    return envs
