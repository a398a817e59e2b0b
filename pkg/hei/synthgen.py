"""
Synthetic heterophilic graphs with a controlled train/test homophily shift.

Each node gets a region (train / val / test), a target homophily drawn from
its region's Beta distribution, invariant features tied to its label and
spurious features whose agreement with the label depends on the region.
"""
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from sklearn.linear_model import LogisticRegression

from app.config import Config
from app.errors import ConfigError
from app.logger import get_logger
from app.utils import atomic_write_json, read_json
from hei.graph import SPLIT_FILE, Graph, NodeSplit, node_homophily_all, save_graph, save_split

logger = get_logger(__name__)

TRUTH_FILE = "truth.json"

REGION_TRAIN, REGION_VAL, REGION_TEST = 0, 1, 2
REGION_NAMES = {REGION_TRAIN: "train", REGION_VAL: "val", REGION_TEST: "test"}


class SynthConfig(BaseModel):
    """Generator settings. Beta parameters may be inf for a point mass (inf, b) -> 1.0, (a, inf) -> 0.0."""
    model_config = ConfigDict(extra="forbid")

    num_nodes: int = Field(default=2000, ge=2)
    num_classes: int = Field(default=3, ge=2)
    mean_degree: float = Field(default=10.0, ge=1.0)
    d_inv: int = Field(default=8, ge=1)
    d_sp: int = Field(default=8, ge=0)
    train_hom_beta: Tuple[float, float] = (5.0, 2.0)
    test_hom_beta: Tuple[float, float] = (2.0, 5.0)
    spurious_corr_train: float = Field(default=0.95, ge=0.0, le=1.0)
    spurious_corr_test: float = Field(default=0.05, ge=0.0, le=1.0)
    noise_sigma: float = Field(default=1.0, gt=0.0)
    train_frac: float = Field(default=0.5, gt=0.0, lt=1.0)
    val_frac: float = Field(default=0.25, gt=0.0, lt=1.0)
    seed: int = 0

    num_envs: int = Field(default=4, ge=1)
    inv_scale: float = Field(default=1.0, gt=0.0)
    sp_scale: float = Field(default=2.0, ge=0.0)
    wiring: Literal["stub_matching", "stub_sampling"] = "stub_matching"
    structural_spurious: bool = False
    spurious_hom_coupling: float = 0.0
    # per homophily bucket of the train/val region, lowest bucket first
    spurious_corr_by_env: Optional[Tuple[float, ...]] = None

    @field_validator("train_hom_beta", "test_hom_beta")
    @classmethod
    def _positive_beta(cls, value):
        a, b = value
        if not (a > 0 and b > 0):
            raise ValueError(f"Beta parameters must be > 0, got {value}")
        if math.isinf(a) and math.isinf(b):
            raise ValueError("Beta parameters cannot both be inf")
        return value

    @model_validator(mode="after")
    def _check_dims(self):
        if self.train_frac + self.val_frac >= 1.0:
            raise ValueError("train_frac + val_frac must be < 1")
        if self.d_inv < self.num_classes:
            raise ValueError(f"d_inv ({self.d_inv}) must be >= num_classes ({self.num_classes})")
        if 0 < self.d_sp < self.num_classes:
            raise ValueError(f"d_sp ({self.d_sp}) must be 0 or >= num_classes ({self.num_classes})")
        if self.spurious_corr_by_env is not None:
            if len(self.spurious_corr_by_env) != self.num_envs:
                raise ValueError(
                    f"spurious_corr_by_env has {len(self.spurious_corr_by_env)} values, num_envs is {self.num_envs}"
                )
            if any(not 0.0 <= p <= 1.0 for p in self.spurious_corr_by_env):
                raise ValueError(f"spurious_corr_by_env values must lie in [0, 1], got {self.spurious_corr_by_env}")
        return self


@dataclass
class SynthTruth:
    target_homophily: np.ndarray
    true_env: np.ndarray
    spurious_class: np.ndarray
    region: np.ndarray
    d_inv: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target_homophily": self.target_homophily.tolist(),
            "true_env": self.true_env.tolist(),
            "spurious_class": self.spurious_class.tolist(),
            "region": self.region.tolist(),
            "d_inv": int(self.d_inv),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SynthTruth":
        return cls(
            target_homophily=np.asarray(payload["target_homophily"], dtype=np.float64),
            true_env=np.asarray(payload["true_env"], dtype=np.int64),
            spurious_class=np.asarray(payload["spurious_class"], dtype=np.int64),
            region=np.asarray(payload.get("region", []), dtype=np.int64),
            d_inv=int(payload.get("d_inv", 0)),
        )


# ============================================================================
# SAMPLING HELPERS
# ============================================================================

def _draw_homophily(rng: np.random.Generator, params: Tuple[float, float], n: int) -> np.ndarray:
    a, b = params
    if math.isinf(a):
        return np.ones(n)
    if math.isinf(b):
        return np.zeros(n)
    return np.clip(rng.beta(a, b, size=n), 0.0, 1.0)


def _quantile_buckets(h: np.ndarray, num_buckets: int) -> np.ndarray:
    """Bucket id in [0, num_buckets) by quantile of h, lowest homophily first."""
    if num_buckets <= 1 or h.size == 0:
        return np.zeros(h.size, dtype=np.int64)
    cuts = np.quantile(h, np.linspace(0.0, 1.0, num_buckets + 1)[1:-1])
    return np.searchsorted(cuts, h, side="right").astype(np.int64)


def _stochastic_round(rng: np.random.Generator, x: np.ndarray) -> np.ndarray:
    base = np.floor(x)
    return (base + (rng.random(x.shape[0]) < (x - base))).astype(np.int64)


def _pair_shuffled(rng: np.random.Generator, stubs: np.ndarray) -> np.ndarray:
    stubs = rng.permutation(stubs)
    stubs = stubs[: stubs.size - stubs.size % 2]
    return stubs.reshape(-1, 2)


def _pair_across_classes(rng: np.random.Generator, stubs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """
    Pair stubs so endpoints differ in label: sort stubs by class (random
    order inside a class) and pair position i with i + L/2. Pairs that still
    share a class (one class holds more than half the stubs) are dropped.
    """
    if stubs.size < 2:
        return np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((rng.random(stubs.size), labels[stubs]))
    stubs = stubs[order]
    half = stubs.size // 2
    pairs = np.stack([stubs[:half], stubs[half:2 * half]], axis=1)
    return pairs[labels[pairs[:, 0]] != labels[pairs[:, 1]]]


def _wire_stub_matching(rng, cfg: SynthConfig, nodes: np.ndarray, labels: np.ndarray,
                        h: np.ndarray) -> np.ndarray:
    # default mode: realized homophily tracks h per node; _wire_stub_sampling is the literal
    # per-stub rule (same-label endpoint with probability h_v, drawn uniformly inside the region)
    k = _stochastic_round(rng, np.full(nodes.size, cfg.mean_degree))
    same = np.minimum(_stochastic_round(rng, h[nodes] * k), k)
    cross = k - same

    pieces = []
    for c in range(cfg.num_classes):
        members = nodes[labels[nodes] == c]
        if members.size == 0:
            continue
        stubs = np.repeat(members, same[labels[nodes] == c])
        pieces.append(_pair_shuffled(rng, stubs))
    pieces.append(_pair_across_classes(rng, np.repeat(nodes, cross), labels))
    return np.concatenate(pieces, axis=0) if pieces else np.zeros((0, 2), dtype=np.int64)


def _wire_stub_sampling(rng, cfg: SynthConfig, nodes: np.ndarray, labels: np.ndarray,
                        h: np.ndarray) -> np.ndarray:
    """Literal per-stub wiring: a uniform same-label node w.p. h_v, else a uniform other-label node."""
    per_node = max(1, int(round(cfg.mean_degree / 2)))
    src = np.repeat(nodes, per_node)
    same = rng.random(src.size) < h[src]
    dst = np.empty_like(src)
    for c in range(cfg.num_classes):
        mine = labels[src] == c
        inside = nodes[labels[nodes] == c]
        outside = nodes[labels[nodes] != c]
        pick_same = mine & same
        pick_cross = mine & ~same
        if inside.size:
            dst[pick_same] = rng.choice(inside, size=int(pick_same.sum()))
        else:
            dst[pick_same] = src[pick_same]
        if outside.size:
            dst[pick_cross] = rng.choice(outside, size=int(pick_cross.sum()))
        else:
            dst[pick_cross] = src[pick_cross]
    return np.stack([src, dst], axis=1)


def _hub_edges(rng, cfg: SynthConfig, nodes: np.ndarray, labels: np.ndarray,
               spurious: np.ndarray) -> np.ndarray:
    """One edge from every node to the hub of its spurious class (per region)."""
    edges = []
    for c in range(cfg.num_classes):
        members = nodes[labels[nodes] == c]
        if members.size == 0:
            continue
        hub = rng.choice(members)
        followers = nodes[(spurious[nodes] == c) & (nodes != hub)]
        edges.append(np.stack([followers, np.full(followers.size, hub)], axis=1))
    return np.concatenate(edges, axis=0) if edges else np.zeros((0, 2), dtype=np.int64)


def _clean_edges(edges: np.ndarray) -> np.ndarray:
    """Drop self-pairs and repeated pairs before building the CSR graph."""
    edges = edges[edges[:, 0] != edges[:, 1]]
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0) if edges.size else edges.reshape(0, 2)


def _class_means(num_classes: int, dims: int, scale: float) -> np.ndarray:
    """Class c mean = scale * e_c (vertices of a simplex)."""
    means = np.zeros((num_classes, dims))
    means[np.arange(num_classes), np.arange(num_classes)] = scale
    return means


def _check_region_degree(cfg: SynthConfig, labels: np.ndarray, region: np.ndarray):
    """Wiring stays inside a region, so every class present there must outnumber the degree."""
    for r, name in REGION_NAMES.items():
        members = labels[region == r]
        if members.size < 2:
            continue
        sizes = np.bincount(members, minlength=cfg.num_classes)
        sizes = sizes[sizes > 0]
        if cfg.mean_degree >= sizes.min():
            raise ConfigError(
                f"mean_degree ({cfg.mean_degree}) must be below the smallest class size in the {name} "
                f"region ({int(sizes.min())}); increase num_nodes or lower mean_degree"
            )


# ============================================================================
# GENERATOR
# ============================================================================

def generate(cfg: SynthConfig) -> Tuple[Graph, NodeSplit, SynthTruth]:
    """Deterministic in cfg (seed included)."""
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.num_nodes, cfg.num_classes

    labels = rng.integers(0, c, size=n)
    sizes = np.bincount(labels, minlength=c)
    if (sizes == 0).any():
        raise ConfigError(f"class {int(np.argmin(sizes))} has zero nodes; increase num_nodes")
    if cfg.mean_degree >= sizes.min():
        raise ConfigError(
            f"mean_degree ({cfg.mean_degree}) must be below the smallest class size ({int(sizes.min())})"
        )

    perm = rng.permutation(n)
    n_train = int(round(cfg.train_frac * n))
    n_val = int(round(cfg.val_frac * n))
    region = np.full(n, REGION_TEST, dtype=np.int64)
    region[perm[:n_train]] = REGION_TRAIN
    region[perm[n_train:n_train + n_val]] = REGION_VAL
    _check_region_degree(cfg, labels, region)

    h = np.empty(n)
    corr = np.empty(n)
    for r in (REGION_TRAIN, REGION_VAL, REGION_TEST):
        mask = region == r
        beta = cfg.test_hom_beta if r == REGION_TEST else cfg.train_hom_beta
        h[mask] = _draw_homophily(rng, beta, int(mask.sum()))
        if not mask.any():
            continue
        if r == REGION_TEST:
            base = np.full(int(mask.sum()), cfg.spurious_corr_test)
        elif cfg.spurious_corr_by_env is not None:
            base = np.asarray(cfg.spurious_corr_by_env)[_quantile_buckets(h[mask], cfg.num_envs)]
        else:
            base = np.full(int(mask.sum()), cfg.spurious_corr_train)
        corr[mask] = np.clip(base + cfg.spurious_hom_coupling * (h[mask] - h[mask].mean()), 0.0, 1.0)

    agree = rng.random(n) < corr
    spurious = np.where(agree, labels, rng.integers(0, c, size=n))

    wire = _wire_stub_matching if cfg.wiring == "stub_matching" else _wire_stub_sampling
    edges = []
    for r in (REGION_TRAIN, REGION_VAL, REGION_TEST):
        nodes = np.flatnonzero(region == r)
        if nodes.size < 2:
            continue
        edges.append(wire(rng, cfg, nodes, labels, h))
        if cfg.structural_spurious:
            edges.append(_hub_edges(rng, cfg, nodes, labels, spurious))
    edges = _clean_edges(np.concatenate(edges, axis=0)) if edges else np.zeros((0, 2), dtype=np.int64)

    x_inv = _class_means(c, cfg.d_inv, cfg.inv_scale)[labels] + cfg.noise_sigma * rng.standard_normal((n, cfg.d_inv))
    if cfg.d_sp:
        x_sp = _class_means(c, cfg.d_sp, cfg.sp_scale)[spurious] + cfg.noise_sigma * rng.standard_normal((n, cfg.d_sp))
        features = np.concatenate([x_inv, x_sp], axis=1)
    else:
        features = x_inv

    true_env = _quantile_buckets(h, cfg.num_envs)

    g = Graph.from_edges(n, edges, features, labels, num_classes=c)
    split = NodeSplit(
        train=np.flatnonzero(region == REGION_TRAIN),
        val=np.flatnonzero(region == REGION_VAL),
        test=np.flatnonzero(region == REGION_TEST),
    )
    truth = SynthTruth(target_homophily=h, true_env=true_env, spurious_class=spurious.astype(np.int64),
                       region=region, d_inv=cfg.d_inv)
    logger.info(
        f"Generated synthetic graph: {n} nodes, {g.num_edges} edges, wiring={cfg.wiring}, seed={cfg.seed}"
    )
    return g, split, truth


def save_synth(directory: str, g: Graph, split: NodeSplit, truth: SynthTruth,
               cfg: Optional[SynthConfig] = None):
    save_graph(g, directory)
    save_split(split, os.path.join(directory, SPLIT_FILE))
    payload = truth.to_dict()
    if cfg is not None:
        payload["config"] = cfg.model_dump(mode="json")
    atomic_write_json(os.path.join(directory, TRUTH_FILE), payload)


def load_truth(path: str) -> SynthTruth:
    return SynthTruth.from_dict(read_json(path))


# ============================================================================
# SHIFT REPORT
# ============================================================================

def _normalized(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return counts / total if total else counts.astype(np.float64)


def _nearest_mean_accuracy(feats: np.ndarray, labels: np.ndarray, fit_idx: np.ndarray,
                           idx: np.ndarray, num_classes: int) -> Optional[float]:
    if feats.shape[1] == 0 or idx.size == 0 or fit_idx.size == 0:
        return None
    means = np.stack([
        feats[fit_idx[labels[fit_idx] == k]].mean(axis=0) if (labels[fit_idx] == k).any()
        else np.full(feats.shape[1], np.inf)
        for k in range(num_classes)
    ])
    dist = ((feats[idx, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float((dist.argmin(axis=1) == labels[idx]).mean())


def _probe_accuracy(feats: np.ndarray, labels: np.ndarray, fit_idx: np.ndarray,
                    idx: np.ndarray) -> Optional[float]:
    if idx.size == 0 or np.unique(labels[fit_idx]).size < 2:
        return None
    probe = LogisticRegression(max_iter=1000)
    probe.fit(feats[fit_idx], labels[fit_idx])
    return float(probe.score(feats[idx], labels[idx]))


def shift_report(g: Graph, split: NodeSplit, truth: SynthTruth,
                 bin_edges: Optional[Sequence[float]] = None) -> Dict[str, Any]:
    """
    Train/test homophily histograms (realized), their normalized L1 distance,
    spurious agreement per region, nearest-mean accuracy on the spurious
    block and a linear probe on the invariant block.
    """
    bins = np.asarray(bin_edges if bin_edges is not None else Config.HOMOPHILY_BINS, dtype=np.float64)
    realized = node_homophily_all(g)
    parts = {"train": split.train, "val": split.val, "test": split.test}

    hist = {}
    for name, idx in parts.items():
        vals = realized[idx]
        vals = vals[~np.isnan(vals)]
        hist[name] = np.histogram(vals, bins=bins)[0].astype(np.int64)

    d_inv = truth.d_inv or g.num_features
    x_inv = g.features[:, :d_inv]
    x_sp = g.features[:, d_inv:]
    labels = g.labels

    regions = {}
    for name, idx in parts.items():
        defined = realized[idx][~np.isnan(realized[idx])]
        regions[name] = {
            "nodes": int(idx.size),
            "mean_target_homophily": float(truth.target_homophily[idx].mean()) if idx.size else None,
            "mean_realized_homophily": float(defined.mean()) if defined.size else None,
            "spurious_agreement": float((truth.spurious_class[idx] == labels[idx]).mean()) if idx.size else None,
            "spurious_nearest_mean_acc": _nearest_mean_accuracy(x_sp, labels, split.train, idx, g.num_classes),
            "invariant_probe_acc": _probe_accuracy(x_inv, labels, split.train, idx),
        }

    l1 = float(np.abs(_normalized(hist["train"]) - _normalized(hist["test"])).sum())
    return {
        "bin_edges": bins.tolist(),
        "histograms": {name: counts.tolist() for name, counts in hist.items()},
        "train_test_l1": l1,
        "regions": regions,
    }
