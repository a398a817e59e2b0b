"""
Encoder / classifier pairs: LinkxLite and SgcLite encoders with a linear head.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from app.config import Config
from app.errors import ShapeError
from app.logger import get_logger
from hei.graph import Graph
from hei.nn_core import MLP, Dense, as_index, as_tensor, concat_cols, linear, relu
from hei.similarity import row_norm_aggregate

logger = get_logger(__name__)


class EncoderKind(str, Enum):
    LINKX_LITE = "LinkxLite"
    SGC_LITE = "SgcLite"


class EncoderSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: EncoderKind = EncoderKind.LINKX_LITE
    hidden_dim: int = Field(default=Config.DEFAULT_HIDDEN, ge=1)
    num_layers: int = Field(default=Config.DEFAULT_LAYERS, ge=1)
    sgc_hops: int = Field(default=Config.DEFAULT_SGC_HOPS, ge=0)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)


@dataclass
class GraphInputs:
    """Per-graph tensors an encoder reads. Augmented graphs get their own."""
    num_nodes: int
    features: torch.Tensor
    offsets: np.ndarray
    targets: np.ndarray
    propagated: Optional[torch.Tensor] = None


def prepare_inputs(spec: EncoderSpec, g: Graph) -> GraphInputs:
    propagated = None
    if spec.kind is EncoderKind.SGC_LITE:
        feats = g.features
        for _ in range(spec.sgc_hops):
            feats = row_norm_aggregate(g, feats)
        propagated = as_tensor(feats)
    return GraphInputs(
        num_nodes=g.num_nodes,
        features=as_tensor(g.features),
        offsets=np.asarray(g.offsets),
        targets=np.asarray(g.targets),
        propagated=propagated,
    )


def _batch_ids(inputs: GraphInputs, batch) -> np.ndarray:
    if batch is None:
        return np.arange(inputs.num_nodes)
    ids = np.asarray(batch.cpu() if isinstance(batch, torch.Tensor) else batch, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= inputs.num_nodes):
        raise IndexError(f"batch contains node ids outside [0, {inputs.num_nodes})")
    return ids


class LinkxLite(nn.Module):
    """
    h = MLP_f(relu(W [a ; x] + a + x)), a = MLP_A(adjacency row), x = MLP_X(features).
    The first MLP_A layer sums weight rows over the node's neighbor list.
    """

    def __init__(self, num_nodes: int, in_dim: int, spec: EncoderSpec):
        super().__init__()
        hidden = spec.hidden_dim
        self.num_nodes = num_nodes
        self.adj_layer = Dense(num_nodes, hidden)
        self.mlp_x = Dense(in_dim, hidden)
        self.mix = Dense(2 * hidden, hidden)
        self.mlp_f = MLP([hidden] * (spec.num_layers + 1), final_relu=True, dropout_p=spec.dropout)
        self.hidden_dim = hidden

    def adjacency_embedding(self, inputs: GraphInputs, ids: np.ndarray) -> torch.Tensor:
        """Sparse a_v @ W_A + b over the neighbor lists of ids (O(deg) per node)."""
        starts = inputs.offsets[ids]
        lengths = inputs.offsets[ids + 1] - starts
        bag_offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]) if ids.size else np.zeros(0, dtype=np.int64)
        flat = (np.repeat(starts - bag_offsets, lengths) + np.arange(lengths.sum())).astype(np.int64)
        neighbor_ids = inputs.targets[flat]
        summed = F.embedding_bag(
            as_index(neighbor_ids), self.adj_layer.weight, as_index(bag_offsets), mode="sum"
        )
        return summed + self.adj_layer.bias

    def dense_adjacency_embedding(self, inputs: GraphInputs, ids: np.ndarray) -> torch.Tensor:
        """Same product via dense adjacency rows; reference path for small graphs."""
        rows = np.zeros((ids.size, inputs.num_nodes))
        for r, v in enumerate(ids):
            rows[r, inputs.targets[inputs.offsets[v]:inputs.offsets[v + 1]]] = 1.0
        return linear(as_tensor(rows, self.adj_layer.weight.dtype), self.adj_layer.weight, self.adj_layer.bias)

    def forward(self, inputs: GraphInputs, batch=None) -> torch.Tensor:
        if inputs.num_nodes != self.num_nodes:
            raise ShapeError(f"LinkxLite built for {self.num_nodes} nodes, got {inputs.num_nodes}")
        ids = _batch_ids(inputs, batch)
        a = self.adjacency_embedding(inputs, ids)
        x = self.mlp_x(inputs.features[as_index(ids)])
        h = relu(self.mix(concat_cols(a, x)) + a + x)
        return self.mlp_f(h)


class SgcLite(nn.Module):
    """h = MLP((D^-1 A)^p X), propagation precomputed in GraphInputs."""

    def __init__(self, in_dim: int, spec: EncoderSpec):
        super().__init__()
        self.mlp = MLP([in_dim] + [spec.hidden_dim] * spec.num_layers, final_relu=True, dropout_p=spec.dropout)
        self.hidden_dim = spec.hidden_dim

    def forward(self, inputs: GraphInputs, batch=None) -> torch.Tensor:
        if inputs.propagated is None:
            raise ShapeError("SgcLite needs propagated features; build inputs with an SgcLite spec")
        ids = _batch_ids(inputs, batch)
        return self.mlp(inputs.propagated[as_index(ids)])


class ClassifierHead(Dense):
    """Linear map hidden -> num_classes."""


class NodeClassifier(nn.Module):
    """head(encoder(.)): the feature extractor / classifier split."""

    def __init__(self, encoder: nn.Module, head: ClassifierHead):
        super().__init__()
        self.encoder = encoder
        self.head = head

    @property
    def num_classes(self) -> int:
        return self.head.out_dim

    def encode(self, inputs: GraphInputs, batch=None) -> torch.Tensor:
        return self.encoder(inputs, batch)

    def forward(self, inputs: GraphInputs, batch=None) -> torch.Tensor:
        return classify(self.head, self.encode(inputs, batch))


def build_model(spec: EncoderSpec, g: Graph, num_classes: Optional[int] = None) -> NodeClassifier:
    num_classes = num_classes or g.num_classes
    if spec.kind is EncoderKind.LINKX_LITE:
        encoder = LinkxLite(g.num_nodes, g.num_features, spec)
    else:
        encoder = SgcLite(g.num_features, spec)
    model = NodeClassifier(encoder, ClassifierHead(spec.hidden_dim, num_classes))
    logger.debug(
        f"Built {spec.kind.value} (hidden={spec.hidden_dim}, layers={spec.num_layers}) "
        f"with {sum(p.numel() for p in model.parameters())} parameters"
    )
    return model


def encode(model: NodeClassifier, inputs: GraphInputs, batch=None) -> torch.Tensor:
    return model.encode(inputs, batch)


def classify(head: Dense, reps: torch.Tensor) -> torch.Tensor:
    if reps.dim() != 2 or reps.shape[1] != head.in_dim:
        raise ShapeError(f"classify: reps shape {tuple(reps.shape)} does not match head input {head.in_dim}")
    return head(reps)
