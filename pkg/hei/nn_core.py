"""
Dense-tensor ops, losses and optimizer plumbing on top of torch autograd.

Every op checks shapes; with HEI_DEBUG_FINITE=true they also check that
their output is finite.
"""
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from app.config import Config
from app.errors import HEIError, NonFiniteError, ShapeError
from app.logger import get_logger
from app.utils import torch_dtype

logger = get_logger(__name__)


def as_tensor(x, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype or torch_dtype())
    # copy: graph arrays are read-only and must not share memory with tensors
    return torch.as_tensor(np.array(x), dtype=dtype or torch_dtype())


def as_index(idx) -> torch.Tensor:
    if isinstance(idx, torch.Tensor):
        return idx.long()
    return torch.as_tensor(np.array(idx, dtype=np.int64))


def check_finite(t: torch.Tensor, name: str = "tensor", force: bool = False) -> torch.Tensor:
    """Raise NonFiniteError on NaN/Inf. No-op unless debug mode or force."""
    if (force or Config.DEBUG_FINITE) and not torch.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {name}")
    return t


# ============================================================================
# OPS
# ============================================================================

def _require_2d(x: torch.Tensor, name: str):
    if x.dim() != 2:
        raise ShapeError(f"{name}: expected a 2-D tensor, got shape {tuple(x.shape)}")


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """x (B x I) @ W (I x O) + b (1 x O)."""
    _require_2d(x, "linear input")
    _require_2d(weight, "linear weight")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: input has {x.shape[1]} columns, weight expects {weight.shape[0]}")
    out = x @ weight
    if bias is not None:
        if bias.numel() != weight.shape[1]:
            raise ShapeError(f"linear: bias has {bias.numel()} entries, expected {weight.shape[1]}")
        out = out + bias.reshape(1, -1)
    return check_finite(out, "linear")


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def concat_cols(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_2d(a, "concat_cols left")
    _require_2d(b, "concat_cols right")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ ({a.shape[0]} vs {b.shape[0]})")
    return torch.cat([a, b], dim=1)


def softmax(x: torch.Tensor) -> torch.Tensor:
    _require_2d(x, "softmax input")
    return check_finite(torch.softmax(x, dim=1), "softmax")


def dropout(x: torch.Tensor, p: float, training: bool) -> torch.Tensor:
    if p <= 0.0 or not training:
        return x
    return F.dropout(x, p=p, training=True)


def weighted_ce_loss(logits: torch.Tensor, labels, weights=None) -> torch.Tensor:
    """(1/B) * sum_i w_i * CE(logits_i, y_i), B = batch size."""
    _require_2d(logits, "weighted_ce_loss logits")
    labels = as_index(labels)
    batch, num_classes = logits.shape
    if labels.numel() != batch:
        raise ShapeError(f"weighted_ce_loss: {labels.numel()} labels for {batch} rows")
    if batch == 0:
        raise HEIError("weighted_ce_loss: empty batch")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise HEIError(f"label out of range [0, {num_classes})")
    per_node = F.cross_entropy(logits, labels, reduction="none")
    if weights is None:
        return per_node.sum() / batch
    weights = weights if isinstance(weights, torch.Tensor) else as_tensor(weights, logits.dtype)
    if weights.numel() != batch:
        raise ShapeError(f"weighted_ce_loss: {weights.numel()} weights for {batch} rows")
    if (weights < 0).any():
        raise HEIError("weighted_ce_loss: weights must be >= 0")
    return (weights.reshape(-1) * per_node).sum() / batch


# ============================================================================
# MODULES
# ============================================================================

class Dense(nn.Module):
    """Affine layer with an I x O weight and 1 x O bias, uniform(+-1/sqrt(I)) init."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        bound = 1.0 / math.sqrt(max(in_dim, 1))
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim, dtype=torch_dtype()))
        self.bias = nn.Parameter(torch.empty(1, out_dim, dtype=torch_dtype()))
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return linear(x, self.weight, self.bias)


class MLP(nn.Module):
    """Stack of Dense layers with ReLU after every layer (or all but the last)."""

    def __init__(self, dims: Sequence[int], final_relu: bool = True, dropout_p: float = 0.0):
        super().__init__()
        if len(dims) < 2:
            raise ShapeError(f"MLP needs at least input and output dims, got {list(dims)}")
        self.layers = nn.ModuleList(Dense(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.final_relu = final_relu
        self.dropout_p = dropout_p

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = relu(x)
                x = dropout(x, self.dropout_p, self.training)
        return x


# ============================================================================
# OPTIMIZATION
# ============================================================================

def backward(loss: torch.Tensor, params: Optional[Iterable[torch.Tensor]] = None):
    """Reverse-mode pass; raises NonFiniteError on a non-finite loss or gradient."""
    if loss.numel() != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss).all():
        raise NonFiniteError(f"non-finite loss {loss.item()}")
    loss.backward()
    for i, p in enumerate(params or []):
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteError(f"non-finite gradient in parameter {i} of shape {tuple(p.shape)}")


def make_optimizer(params: Iterable[torch.Tensor], lr: float, weight_decay: float = 0.0) -> torch.optim.AdamW:
    """Adam with decoupled weight decay."""
    return torch.optim.AdamW(list(params), lr=lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=weight_decay)


def adam_step(optimizer: torch.optim.Optimizer):
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def grad_check(closure: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], eps: float = 1e-5) -> float:
    """
    Max relative error between autograd gradients and central differences,
    |a - n| / max(|a| + |n|, 1e-4) over every parameter entry.
    """
    params = list(params)
    analytic = torch.autograd.grad(closure(), params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            a = torch.zeros_like(p) if a is None else a
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = closure().item()
                flat[i] = orig - eps
                f_minus = closure().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * eps)
                exact = a.view(-1)[i].item()
                rel = abs(exact - numeric) / max(abs(exact) + abs(numeric), 1e-4)
                worst = max(worst, rel)
    return worst
