"""Deep cluster embedding: Student-t soft assignment to learnable centroids.

The soft assignment of instance ``s`` to cluster ``c`` is

    z[s, c] = 1 / (1 + |f_s - mu_c|^2)   normalised over c.

Centroids are seeded with k-means++ followed by a few Lloyd iterations, and
can optionally be refined by alternating weighted-mean updates before
end-to-end training takes over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


@dataclass
class ClusterState:
    centroids: np.ndarray
    Z: np.ndarray

    @property
    def C(self) -> int:
        return self.centroids.shape[0]


def effective_clusters(C: int, S: int) -> int:
    return min(C, S)


def kmeans_plusplus(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` distinct seed points chosen by D^2 sampling."""
    n = features.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((features - features[chosen[0]]) ** 2, axis=1)
    available = np.ones(n, dtype=bool)
    available[chosen[0]] = False
    for _ in range(1, k):
        weights = np.where(available, d2, 0.0)
        total = weights.sum()
        if total > 0:
            idx = int(rng.choice(n, p=weights / total))
        else:
            # only duplicates of chosen points remain
            idx = int(rng.choice(np.flatnonzero(available)))
        chosen.append(idx)
        available[idx] = False
        d2 = np.minimum(d2, np.sum((features - features[idx]) ** 2, axis=1))
    return np.asarray(chosen)


def lloyd(features: np.ndarray, centroids: np.ndarray, max_iters: int = 20,
          tol: float = 1e-4) -> np.ndarray:
    centroids = centroids.copy()
    for _ in range(max_iters):
        d2 = np.sum((features[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d2, axis=1)
        new = centroids.copy()
        for c in range(centroids.shape[0]):
            members = assign == c
            if members.any():  # empty clusters keep their centroid
                new[c] = features[members].mean(axis=0)
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        centroids = new
        if shift < tol:
            break
    return centroids


def init_centroids(features, C_eff: int, seed: int, max_iters: int = 20,
                   tol: float = 1e-4) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    S = features.shape[0]
    if C_eff < 1 or S < C_eff:
        raise ContractError(f"need S >= C_eff >= 1, got S={S}, C_eff={C_eff}")
    rng = np.random.default_rng(seed)
    seeds = kmeans_plusplus(features, C_eff, rng)
    return lloyd(features, features[seeds], max_iters=max_iters, tol=tol)


def soft_assign(features, centroids) -> Tensor:
    """Student-t soft assignment ``S x C``; differentiable in both inputs."""
    f = ad.as_tensor(features)
    mu = ad.as_tensor(centroids)
    kernel = ad.reciprocal(ad.add(ad.sq_dist(f, mu), 1.0))
    return ad.row_normalize(kernel)


def soft_assign_np(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = np.sum((features[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    k = 1.0 / (1.0 + d2)
    return k / k.sum(axis=1, keepdims=True)


def refine_alternating(features, state: ClusterState, max_iters: int = 10,
                       tol: float = 1e-4) -> ClusterState:
    """Alternate centroid <- Z-weighted mean and Z <- soft_assign, off the tape."""
    features = np.asarray(features, dtype=np.float64)
    centroids = np.asarray(state.centroids, dtype=np.float64)
    Z = np.asarray(state.Z, dtype=np.float64)
    for _ in range(max_iters):
        new = (Z.T @ features) / Z.sum(axis=0)[:, None]
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        if shift < tol:
            break
        centroids = new
        Z = soft_assign_np(features, centroids)
    return ClusterState(centroids, Z)
