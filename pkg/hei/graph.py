"""
Sparse undirected graph (CSR) with dense features and class labels.
File ingestion, node-homophily analytics and the JSON split file.
"""
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from app.errors import (
    CountMismatchError,
    DanglingNodeError,
    FeatureFormatError,
    GraphFormatError,
    LabelsRequiredError,
    SplitError,
)
from app.logger import get_logger
from app.utils import atomic_write_json, atomic_write_text, read_json

logger = get_logger(__name__)

UNLABELED = -1

EDGES_FILE = "edges.tsv"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.txt"
SPLIT_FILE = "split.json"


@dataclass(frozen=True)
class Graph:
    """
    Immutable CSR graph. Undirected edges are stored in both directions,
    no self-loops. labels uses -1 for unlabeled nodes.
    """
    num_nodes: int
    num_classes: int
    offsets: np.ndarray
    targets: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        for arr in (self.offsets, self.targets, self.features, self.labels):
            arr.setflags(write=False)

    # ------------------------------------------------------------------ build
    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: np.ndarray,
        features: np.ndarray,
        labels: np.ndarray,
        num_classes: Optional[int] = None,
    ) -> "Graph":
        """Symmetrize, drop self-loops (counted warning) and deduplicate."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        features = np.array(features, dtype=np.float64, copy=True, order="C")
        labels = np.array(labels, dtype=np.int64, copy=True)

        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise CountMismatchError(
                f"feature rows ({features.shape[0] if features.ndim else 0}) != num_nodes ({num_nodes})"
            )
        if labels.shape[0] != num_nodes:
            raise CountMismatchError(f"label count ({labels.shape[0]}) != num_nodes ({num_nodes})")
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            bad = edges[(edges < 0).any(axis=1) | (edges >= num_nodes).any(axis=1)][0]
            raise DanglingNodeError(f"dangling node id in edge ({bad[0]}, {bad[1]}) with N={num_nodes}")

        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            logger.warning(f"Dropped {int(loops.sum())} self-loop(s)")
            edges = edges[~loops]

        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.coo_matrix(
            (np.ones(rows.shape[0], dtype=np.int8), (rows, cols)), shape=(num_nodes, num_nodes)
        ).tocsr()
        adj.sum_duplicates()
        adj.sort_indices()

        if num_classes is None:
            labeled = labels[labels >= 0]
            num_classes = int(labeled.max()) + 1 if labeled.size else 0
        if labels.size and labels.max() >= max(num_classes, 1) and num_classes > 0:
            raise GraphFormatError(f"label {labels.max()} outside [0, {num_classes})")

        graph = cls(
            num_nodes=int(num_nodes),
            num_classes=int(num_classes),
            offsets=adj.indptr.astype(np.int64),
            targets=adj.indices.astype(np.int64),
            features=features,
            labels=labels,
        )
        graph.check_symmetric()
        return graph

    # ------------------------------------------------------------ accessors
    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return int(self.targets.shape[0] // 2)

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def degree(self, v: int) -> int:
        return int(self.offsets[v + 1] - self.offsets[v])

    def neighbors(self, v: int) -> np.ndarray:
        if not 0 <= v < self.num_nodes:
            raise IndexError(f"node id {v} out of range [0, {self.num_nodes})")
        return self.targets[self.offsets[v]:self.offsets[v + 1]]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.targets.shape[0], dtype=np.float64)
        return sp.csr_matrix((data, self.targets, self.offsets), shape=(self.num_nodes, self.num_nodes))

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once, as (u, v) with u < v."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        keep = src < self.targets
        return np.stack([src[keep], self.targets[keep]], axis=1)

    def check_symmetric(self):
        adj = self.adjacency()
        if (adj != adj.T).nnz:
            raise GraphFormatError("adjacency is not symmetric")

    def with_edges(self, edges: np.ndarray) -> "Graph":
        """Same nodes/features/labels, different edge set."""
        return Graph.from_edges(self.num_nodes, edges, self.features, self.labels, self.num_classes)


@dataclass
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)

    def validate(self, g: Graph):
        parts = {"train": self.train, "val": self.val, "test": self.test}
        for name, idx in parts.items():
            if idx.size and (idx.min() < 0 or idx.max() >= g.num_nodes):
                raise SplitError(f"{name} contains ids outside [0, {g.num_nodes})")
            if np.unique(idx).size != idx.size:
                raise SplitError(f"{name} contains duplicate ids")
        names = list(parts)
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                if np.intersect1d(parts[names[i]], parts[names[j]]).size:
                    raise SplitError(f"{names[i]} and {names[j]} overlap")
        if (g.labels[self.train] < 0).any():
            raise SplitError("train contains unlabeled nodes")

    def to_dict(self) -> dict:
        return {
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }


# ============================================================================
# FILE IO
# ============================================================================

def _read_edges(path: str) -> np.ndarray:
    try:
        frame = pd.read_csv(path, sep="\t", header=None, comment="#", dtype=str,
                            skip_blank_lines=True, engine="python")
    except pd.errors.EmptyDataError:
        return np.zeros((0, 2), dtype=np.int64)
    if frame.shape[1] < 2:
        raise GraphFormatError(f"{path}: expected 'src<TAB>dst' per line")
    frame = frame.iloc[:, :2].apply(lambda col: col.str.strip())
    parsed = frame.apply(pd.to_numeric, errors="coerce")
    if parsed.isna().any().any():
        line = int(parsed.isna().any(axis=1).to_numpy().argmax())
        raise GraphFormatError(f"{path}: non-integer node id on data line {line + 1}")
    return parsed.to_numpy(dtype=np.int64)


def _diagnose_features(path: str) -> np.ndarray:
    frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True)
    stripped = frame.apply(lambda col: col.str.strip())
    parsed = stripped.apply(lambda col: pd.to_numeric(col, errors="coerce"))
    bad = parsed.isna() | frame.isna()
    if bad.any().any():
        row = int(bad.any(axis=1).to_numpy().argmax())
        raise FeatureFormatError(f"{path}: non-numeric feature cell on row {row}")
    # exact per-string parse
    return stripped.to_numpy(dtype=str).astype(np.float64)


def _read_features(path: str) -> np.ndarray:
    try:
        feats = pd.read_csv(path, header=None, dtype=np.float64, skip_blank_lines=True,
                            float_precision="round_trip").to_numpy()
    except pd.errors.EmptyDataError:
        raise FeatureFormatError(f"{path}: empty feature file")
    except pd.errors.ParserError as e:
        raise FeatureFormatError(f"{path}: ragged rows ({e})")
    except ValueError:
        return _diagnose_features(path)
    if np.isnan(feats).any():
        return _diagnose_features(path)
    return feats


def _read_labels(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    try:
        return np.array([int(line) for line in lines], dtype=np.int64)
    except ValueError as e:
        raise GraphFormatError(f"{path}: labels must be integers ({e})")


def load_graph(edges_path: str, features_path: str, labels_path: str,
               num_classes: Optional[int] = None) -> Graph:
    """Build a symmetric CSR graph from the edge / feature / label files."""
    edges = _read_edges(edges_path)
    features = _read_features(features_path)
    labels = _read_labels(labels_path)
    if features.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
        )
    graph = Graph.from_edges(features.shape[0], edges, features, labels, num_classes)
    logger.info(
        f"Loaded graph: {graph.num_nodes} nodes, {graph.num_edges} edges, "
        f"{graph.num_features} features, {graph.num_classes} classes"
    )
    return graph


def load_graph_dir(directory: str, num_classes: Optional[int] = None) -> Graph:
    return load_graph(
        os.path.join(directory, EDGES_FILE),
        os.path.join(directory, FEATURES_FILE),
        os.path.join(directory, LABELS_FILE),
        num_classes,
    )


def save_graph(g: Graph, directory: str):
    """Write the three graph files; load_graph_dir reads them back unchanged."""
    os.makedirs(directory, exist_ok=True)
    edges = g.edge_list()
    lines = ["# src\tdst"] + [f"{u}\t{v}" for u, v in edges]
    atomic_write_text(os.path.join(directory, EDGES_FILE), "\n".join(lines) + "\n")
    rows = [",".join(format(x, ".17g") for x in row) for row in g.features]
    atomic_write_text(os.path.join(directory, FEATURES_FILE), "\n".join(rows) + "\n")
    atomic_write_text(os.path.join(directory, LABELS_FILE),
                      "\n".join(str(int(y)) for y in g.labels) + "\n")


def load_split(path: str) -> NodeSplit:
    payload = read_json(path)
    missing = {"train", "val", "test"} - set(payload)
    if missing:
        raise SplitError(f"{path}: missing keys {sorted(missing)}")
    return NodeSplit(payload["train"], payload["val"], payload["test"])


def save_split(split: NodeSplit, path: str):
    atomic_write_json(path, split.to_dict())


# ============================================================================
# HOMOPHILY
# ============================================================================

def node_homophily(g: Graph, v: int) -> Optional[float]:
    """
    Fraction of v's neighbors sharing v's label.
    Returns None (undefined) for degree-0 nodes.
    """
    nbrs = g.neighbors(v)
    if g.labels[v] < 0 or (g.labels[nbrs] < 0).any():
        raise LabelsRequiredError(f"labels required for node {v} and its neighbors")
    if nbrs.size == 0:
        return None
    return float(np.count_nonzero(g.labels[nbrs] == g.labels[v]) / nbrs.size)


def node_homophily_all(g: Graph) -> np.ndarray:
    """
    Vectorized node homophily over all nodes.
    NaN where undefined: degree 0, unlabeled node or any unlabeled neighbor.
    """
    deg = g.degrees()
    src = np.repeat(np.arange(g.num_nodes), deg)
    src_y = g.labels[src]
    dst_y = g.labels[g.targets]
    same = (src_y == dst_y).astype(np.float64)
    unlabeled_edge = ((src_y < 0) | (dst_y < 0)).astype(np.int64)

    same_count = np.bincount(src, weights=same, minlength=g.num_nodes)
    bad_count = np.bincount(src, weights=unlabeled_edge, minlength=g.num_nodes)

    out = np.full(g.num_nodes, np.nan)
    ok = (deg > 0) & (bad_count == 0) & (g.labels >= 0)
    out[ok] = same_count[ok] / deg[ok]
    return out


def homophily_histogram(g: Graph, idx: Sequence[int], bin_edges: Sequence[float]) -> np.ndarray:
    """Counts per bin, last bin right-closed; undefined nodes are skipped."""
    bin_edges = np.asarray(bin_edges, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(len(bin_edges) - 1, dtype=np.int64)
    values = node_homophily_all(g)[idx]
    values = values[~np.isnan(values)]
    counts, _ = np.histogram(values, bins=bin_edges)
    return counts.astype(np.int64)


def homophily_group_ratios(g: Graph, idx: Sequence[int], bin_edges: Sequence[float]) -> np.ndarray:
    """Share of idx (with defined homophily) per bin."""
    counts = homophily_histogram(g, idx, bin_edges)
    total = counts.sum()
    return counts / total if total else counts.astype(np.float64)


def usable_homophily(g: Graph, idx: Sequence[int], part: str = "test") -> Tuple[np.ndarray, np.ndarray]:
    """
    Homophily for idx with degree-0 nodes dropped (warning).
    Unlabeled nodes or neighbors raise LabelsRequiredError.
    """
    idx = np.asarray(idx, dtype=np.int64)
    values = node_homophily_all(g)[idx]
    undefined = np.isnan(values)
    if undefined.any():
        deg = g.degrees()[idx]
        isolated = undefined & (deg == 0)
        if (undefined & ~isolated).any():
            bad = int(idx[undefined & ~isolated][0])
            raise LabelsRequiredError(f"labels required for {part} node {bad} and its neighbors")
        logger.warning(f"Excluded {int(isolated.sum())} degree-0 {part} node(s) from homophily split")
    return idx[~undefined], values[~undefined]
