"""Per-bag graph over the selected representatives.

Nodes are representatives.  Each node picks one neighbour by hard
Gumbel-Softmax over its cosine similarities to the other nodes; the picks are
symmetrised into an undirected graph and normalised GCN-style.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .rie import SelectionTrace, hard_gumbel_rows

EDGE_METHODS = ("cosine", "reverse", "random", "none")


@dataclass
class BagGraph:
    node_features: Tensor
    sim: Tensor
    edge_select: Tensor
    adj_norm: Tensor

    @property
    def n_nodes(self) -> int:
        return self.node_features.rows


def cosine_similarity_matrix(reps) -> Tensor:
    unit = ad.row_l2_normalize(ad.as_tensor(reps))
    return ad.clip(ad.matmul(unit, ad.transpose(unit)), -1.0, 1.0)


def cosine_similarity_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ContractError(f"row {int(np.flatnonzero(norms[:, 0] == 0)[0])} has zero norm")
    unit = x / norms
    sim = unit @ unit.T
    return np.clip((sim + sim.T) / 2, -1.0, 1.0)


def _symmetrize(m: Tensor) -> Tensor:
    # elementwise OR for 0/1 entries: a + b - a*b
    mt = ad.transpose(m)
    return ad.sub(ad.add(m, mt), ad.mul(m, mt))


def select_edges(sim: Tensor, method: str = "cosine", tau: float = 1.0,
                 rng: np.random.Generator | None = None, noise: str = "sampled",
                 straight_through: bool = True, trace: SelectionTrace | None = None) -> Tensor:
    """Symmetric 0/1 adjacency with an empty diagonal, one pick per node."""
    if method not in EDGE_METHODS:
        raise ContractError(f"unknown edge method {method!r}; expected one of {EDGE_METHODS}")
    sim = ad.as_tensor(sim)
    n = sim.rows
    if sim.cols != n:
        raise ContractError(f"similarity matrix must be square, got {sim.shape}")
    dtype = sim.data.dtype
    if n == 1 or method == "none":
        return Tensor(np.zeros((n, n), dtype=dtype), dtype=dtype)

    off_diag = ~np.eye(n, dtype=bool)
    if method == "random":
        if rng is None:
            raise ContractError("random edges need an rng")
        picks = np.zeros((n, n), dtype=dtype)
        for i in range(n):
            j = int(rng.integers(n - 1))
            picks[i, j + (j >= i)] = 1
        return _symmetrize(Tensor(picks, dtype=dtype))

    logits = sim if method == "cosine" else ad.neg(sim)
    picks = hard_gumbel_rows(logits, tau=tau, rng=rng, noise=noise, mask=off_diag,
                             straight_through=straight_through, trace=trace)
    return _symmetrize(picks)


def normalize_adjacency(edge_select) -> Tensor:
    return ad.gcn_normalize(ad.as_tensor(edge_select))


def build_graph(reps: Tensor, method: str = "cosine", tau: float = 1.0,
                rng: np.random.Generator | None = None, noise: str = "sampled",
                straight_through: bool = True, trace: SelectionTrace | None = None) -> BagGraph:
    sim = cosine_similarity_matrix(reps)
    edges = select_edges(sim, method, tau=tau, rng=rng, noise=noise,
                         straight_through=straight_through, trace=trace)
    return BagGraph(reps, sim, edges, normalize_adjacency(edges))
