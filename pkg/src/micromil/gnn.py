"""GCN layers, mean pooling and the sigmoid bag classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .graph import BagGraph

PROB_EPS = 1e-7


@dataclass
class GnnParams:
    layer_weights: list[Tensor]
    classifier: Tensor  # h x 1
    bias: Tensor  # 1 x 1
    dropout_rate: float = 0.5

    def __post_init__(self):
        if not self.layer_weights:
            raise ContractError("need at least one graph layer")
        if not 0 <= self.dropout_rate < 1:
            raise ContractError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for prev, nxt in zip(self.layer_weights, self.layer_weights[1:]):
            if prev.cols != nxt.rows:
                raise DimensionError(f"layer shapes do not chain: {prev.shape} -> {nxt.shape}")
        if self.layer_weights[-1].cols != self.classifier.rows or self.classifier.cols != 1:
            raise DimensionError(f"classifier shape {self.classifier.shape} does not fit")

    @property
    def hidden_dim(self) -> int:
        return self.layer_weights[0].cols

    @property
    def n_layers(self) -> int:
        return len(self.layer_weights)

    def tensors(self) -> dict[str, Tensor]:
        out = {f"gcn{i}": w for i, w in enumerate(self.layer_weights)}
        out["classifier"] = self.classifier
        out["bias"] = self.bias
        return out

    @classmethod
    def init(cls, d: int, hidden: int, layers: int, dropout_rate: float,
             rng: np.random.Generator, dtype=np.float32) -> "GnnParams":
        """Glorot-uniform weights, zero bias."""
        dims = [d] + [hidden] * layers

        def glorot(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, dtype=dtype)

        weights = [glorot(a, b) for a, b in zip(dims, dims[1:])]
        return cls(weights, glorot(hidden, 1), Tensor(np.zeros((1, 1)), requires_grad=True, dtype=dtype),
                   dropout_rate)


def gcn_layer(H: Tensor, adj_norm: Tensor, W: Tensor, activation: str = "relu") -> Tensor:
    out = ad.matmul(ad.matmul(adj_norm, H), W)
    if activation == "relu":
        return ad.relu(out)
    if activation == "identity":
        return out
    raise ContractError(f"unknown activation {activation!r}")


def _dropout(H: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    keep = rng.random(H.shape) >= rate
    mask = keep.astype(H.data.dtype) / H.data.dtype.type(1 - rate)
    return ad.mul(H, Tensor(mask, dtype=H.data.dtype))


def forward_logit(graph: BagGraph, params: GnnParams, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> Tensor:
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    use_dropout = mode == "train" and params.dropout_rate > 0
    if use_dropout and rng is None:
        raise ContractError("train mode with dropout needs an rng")
    H = graph.node_features
    for W in params.layer_weights:
        H = gcn_layer(H, graph.adj_norm, W, "relu")
        if use_dropout:
            H = _dropout(H, params.dropout_rate, rng)
    pooled = ad.mean_rows(H)
    return ad.add(ad.matmul(pooled, params.classifier), params.bias)


def forward(graph: BagGraph, params: GnnParams, mode: str = "eval",
            rng: np.random.Generator | None = None) -> Tensor:
    """Bag probability as a 1x1 tensor."""
    return ad.sigmoid(forward_logit(graph, params, mode, rng))


def bce_loss(p: Tensor, y: int) -> Tensor:
    p = ad.clip(ad.as_tensor(p), PROB_EPS, 1 - PROB_EPS)
    if y == 1:
        return ad.neg(ad.log(p))
    if y == 0:
        return ad.neg(ad.log(ad.add(ad.neg(p), 1.0)))
    raise ContractError(f"label must be 0 or 1, got {y!r}")
