"""
Similarity metrics and per-node neighbor-pattern estimates.

z_v is the mean similarity between v and its neighbors, under one of
LocalSim (raw features), AggSim (mean-aggregated features) or SimRank
(single-level, feature-seeded). Base similarity is cosine throughout.
"""
import io
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Literal, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from app.config import Config
from app.errors import HEIError, ShapeError
from app.logger import get_logger
from app.utils import atomic_write_text
from hei.graph import Graph

logger = get_logger(__name__)


class SimilarityMetric(str, Enum):
    LOCAL_SIM = "LocalSim"
    AGG_SIM = "AggSim"
    SIMRANK = "SimRank"


class IsolatedNodePolicy(str, Enum):
    ZERO = "ZeroPattern"
    GLOBAL_MEAN = "GlobalMeanPattern"


class SimilarityConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    metric: SimilarityMetric = SimilarityMetric.SIMRANK
    decay_c: float = Field(default=Config.SIMRANK_DECAY, gt=0.0, lt=1.0)
    base_sim: Literal["Cosine"] = "Cosine"
    isolated_node_policy: IsolatedNodePolicy = IsolatedNodePolicy.ZERO


@dataclass
class NeighborPattern:
    values: np.ndarray
    config: SimilarityConfig

    @property
    def metric(self) -> SimilarityMetric:
        return self.config.metric

    def __len__(self) -> int:
        return int(self.values.shape[0])


# ============================================================================
# PRIMITIVES
# ============================================================================

def cosine_sim(x: Sequence[float], y: Sequence[float]) -> float:
    """x.y / (|x||y|); 0 when either vector has zero norm."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"cosine_sim: dimension mismatch {x.shape[0]} vs {y.shape[0]}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def unit_rows(feats: np.ndarray) -> np.ndarray:
    """Row-normalize; zero rows stay zero."""
    feats = np.asarray(feats, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return feats / safe[:, None]


def mean_operator(g: Graph) -> sp.csr_matrix:
    """D^-1 A with all-zero rows for degree-0 nodes."""
    deg = g.degrees().astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.diags(inv) @ g.adjacency()


def row_norm_aggregate(g: Graph, feats: np.ndarray) -> np.ndarray:
    """Row v = mean of feats over N(v); degree-0 rows keep their own features."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[0] != g.num_nodes:
        raise ShapeError(f"feature rows ({feats.shape[0]}) != num_nodes ({g.num_nodes})")
    out = np.asarray(mean_operator(g) @ feats)
    isolated = g.degrees() == 0
    out[isolated] = feats[isolated]
    return out


def _check_node(g: Graph, v: int):
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node id {v} out of range [0, {g.num_nodes})")


def pair_similarity(g: Graph, u: int, v: int, cfg: SimilarityConfig,
                    aggregated: Optional[np.ndarray] = None) -> float:
    """
    Similarity of one node pair. Direct definition, no vectorization:
    used as the reference path for the fast estimators.
    """
    _check_node(g, u)
    _check_node(g, v)
    x = g.features
    if cfg.metric is SimilarityMetric.LOCAL_SIM:
        return cosine_sim(x[u], x[v])

    if cfg.metric is SimilarityMetric.AGG_SIM:
        if aggregated is None:
            aggregated = row_norm_aggregate(g, x)
        return cosine_sim(aggregated[u], aggregated[v])

    nu, nv = g.neighbors(u), g.neighbors(v)
    if nu.size == 0 or nv.size == 0:
        return 0.0
    total = 0.0
    for a in nu:
        for b in nv:
            total += cosine_sim(x[a], x[b])
    return cfg.decay_c * total / (nu.size * nv.size)


# ============================================================================
# NEIGHBOR PATTERNS
# ============================================================================

def _apply_isolated_policy(values: np.ndarray, deg: np.ndarray, policy: IsolatedNodePolicy) -> np.ndarray:
    isolated = deg == 0
    if not isolated.any():
        return values
    if IsolatedNodePolicy(policy) is IsolatedNodePolicy.GLOBAL_MEAN and (~isolated).any():
        values[isolated] = values[~isolated].mean()
    else:
        values[isolated] = 0.0
    return values


def _edge_mean(g: Graph, unit: np.ndarray) -> np.ndarray:
    """Mean cosine of each node to its neighbors, given unit-normalized rows."""
    deg = g.degrees()
    src = np.repeat(np.arange(g.num_nodes), deg)
    sims = np.clip(np.einsum("ij,ij->i", unit[src], unit[g.targets]), -1.0, 1.0)
    sums = np.bincount(src, weights=sims, minlength=g.num_nodes)
    return np.divide(sums, deg, out=np.zeros(g.num_nodes), where=deg > 0)


def estimate_patterns(g: Graph, cfg: SimilarityConfig) -> NeighborPattern:
    """z_v = mean over u in N(v) of pair_similarity(u, v)."""
    if cfg.metric is SimilarityMetric.SIMRANK:
        return estimate_patterns_fast_simrank(g, g.features, cfg.decay_c, cfg.isolated_node_policy)

    if cfg.metric is SimilarityMetric.LOCAL_SIM:
        unit = unit_rows(g.features)
    else:
        unit = unit_rows(row_norm_aggregate(g, g.features))
    values = _apply_isolated_policy(_edge_mean(g, unit), g.degrees(), cfg.isolated_node_policy)
    logger.debug(f"{cfg.metric.value} patterns: mean={values.mean() if values.size else 0.0:.4f}")
    return NeighborPattern(values=values, config=cfg)


def estimate_patterns_bruteforce(g: Graph, cfg: SimilarityConfig) -> NeighborPattern:
    """Per-pair loop over pair_similarity. Small graphs only."""
    aggregated = row_norm_aggregate(g, g.features) if cfg.metric is SimilarityMetric.AGG_SIM else None
    values = np.zeros(g.num_nodes)
    for v in range(g.num_nodes):
        nbrs = g.neighbors(v)
        if nbrs.size == 0:
            continue
        values[v] = sum(pair_similarity(g, int(u), v, cfg, aggregated) for u in nbrs) / nbrs.size
    values = _apply_isolated_policy(values, g.degrees(), cfg.isolated_node_policy)
    return NeighborPattern(values=values, config=cfg)


def estimate_patterns_fast_simrank(
    g: Graph,
    feats: Optional[np.ndarray] = None,
    decay_c: float = Config.SIMRANK_DECAY,
    policy: IsolatedNodePolicy = IsolatedNodePolicy.ZERO,
) -> NeighborPattern:
    """
    SimRank patterns in O(nnz * D).

    With M = D^-1 A X_hat (unit rows, zero rows for isolated nodes)
    SimRank(u, v) = c * M_u . M_v, so z_v = c * M_v . (D^-1 A M)_v.
    """
    cfg = SimilarityConfig(metric=SimilarityMetric.SIMRANK, decay_c=decay_c, isolated_node_policy=policy)
    feats = g.features if feats is None else np.asarray(feats, dtype=np.float64)
    if feats.shape[0] != g.num_nodes:
        raise ShapeError(f"feature rows ({feats.shape[0]}) != num_nodes ({g.num_nodes})")
    op = mean_operator(g)
    m = np.asarray(op @ unit_rows(feats))
    mm = np.asarray(op @ m)
    values = decay_c * np.einsum("ij,ij->i", m, mm)
    values = np.clip(values, -decay_c, decay_c)
    values = _apply_isolated_policy(values, g.degrees(), cfg.isolated_node_policy)
    return NeighborPattern(values=values, config=cfg)


def pattern_summary(p: NeighborPattern, idx: Sequence[int]) -> Dict[str, float]:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise HEIError("pattern_summary: empty index set")
    vals = p.values[idx]
    q25, q50, q75 = np.percentile(vals, [25, 50, 75])
    return {
        "count": int(idx.size),
        "mean": float(vals.mean()),
        "std": float(vals.std()),
        "min": float(vals.min()),
        "q25": float(q25),
        "median": float(q50),
        "q75": float(q75),
        "max": float(vals.max()),
    }


def stack_patterns(patterns: Sequence[NeighborPattern]) -> np.ndarray:
    """N x len(patterns) matrix, one column per metric."""
    if not patterns:
        raise HEIError("stack_patterns: no patterns given")
    n = len(patterns[0])
    if any(len(p) != n for p in patterns):
        raise ShapeError("stack_patterns: patterns cover different node counts")
    return np.stack([p.values for p in patterns], axis=1)


def compute_patterns(g: Graph, metrics: Sequence[SimilarityMetric],
                     base: Optional[SimilarityConfig] = None) -> list:
    base = base or SimilarityConfig()
    return [estimate_patterns(g, base.model_copy(update={"metric": SimilarityMetric(m)})) for m in metrics]


# ============================================================================
# CSV IO
# ============================================================================

def save_patterns(p: NeighborPattern, path: str):
    cfg = p.config
    header = (f"# metric={cfg.metric.value},c={cfg.decay_c!r},"
              f"policy={cfg.isolated_node_policy.value}\n")
    frame = pd.DataFrame({"node_id": np.arange(len(p)), "z": p.values})
    atomic_write_text(path, header + frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))


def load_patterns(path: str) -> NeighborPattern:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    first, _, rest = text.partition("\n")
    if not first.startswith("#"):
        raise HEIError(f"{path}: missing '# metric=...' header line")
    meta = dict(item.split("=", 1) for item in first.lstrip("# ").split(","))
    cfg = SimilarityConfig(
        metric=SimilarityMetric(meta["metric"]),
        decay_c=float(meta.get("c", Config.SIMRANK_DECAY)),
        isolated_node_policy=IsolatedNodePolicy(meta.get("policy", IsolatedNodePolicy.ZERO.value)),
    )
    frame = pd.read_csv(io.StringIO(rest), float_precision="round_trip")
    values = frame.sort_values("node_id")["z"].to_numpy(dtype=np.float64)
    return NeighborPattern(values=values, config=cfg)
