"""Representative image extractor.

Each instance gets one score per cluster, ``scores[s, c] = z[s, c] * (w . f_s)``,
and one instance per cluster is picked by hard Gumbel-Softmax.  The forward
value of a pick is an exact one-hot; gradients flow through
``softmax((scores + g) / tau)`` (straight-through estimator).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

SELECT_MODES = ("gumbel", "random", "mean", "centroid")


class SelectionTrace:
    """Records hard selections so a later pass can replay them.

    In replay mode each hard Gumbel call returns ``hard_0 + soft - soft_0``,
    where ``hard_0`` and ``soft_0`` were recorded at the base point.  The value
    equals the recorded selection there, and its exact derivative is the
    straight-through gradient, which lets finite differences check it.
    """

    def __init__(self):
        self.records: list[tuple[np.ndarray, np.ndarray]] = []
        self.replaying = False
        self._pos = 0

    def replay(self) -> "SelectionTrace":
        self.replaying = True
        self._pos = 0
        return self

    def value(self, hard: np.ndarray, soft: np.ndarray) -> np.ndarray:
        if not self.replaying:
            self.records.append((hard.copy(), soft.copy()))
            return hard
        hard0, soft0 = self.records[self._pos]
        self._pos += 1
        return hard0 + soft - soft0


def one_hot_argmax(x: np.ndarray) -> np.ndarray:
    """Row-wise one-hot of the argmax; ties go to the lowest index."""
    out = np.zeros_like(x)
    out[np.arange(x.shape[0]), np.argmax(x, axis=1)] = 1
    return out


def hard_gumbel_rows(logits: Tensor, tau: float = 1.0, rng: np.random.Generator | None = None,
                     noise: str = "sampled", mask: np.ndarray | None = None,
                     straight_through: bool = True, trace: SelectionTrace | None = None) -> Tensor:
    """Independent hard Gumbel-Softmax draw for every row of ``logits``.

    ``mask`` marks allowed entries; each row needs at least one.  With
    ``noise="zero"`` the draw is a plain argmax.
    """
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    logits = ad.as_tensor(logits)
    if noise == "sampled":
        if rng is None:
            raise ContractError("sampled Gumbel noise needs an rng")
        g = rng.gumbel(size=logits.shape).astype(logits.data.dtype)
    elif noise == "zero":
        g = np.zeros_like(logits.data)
    else:
        raise ContractError(f"noise must be 'sampled' or 'zero', got {noise!r}")
    if mask is not None:
        if not mask.any(axis=1).all():
            raise ContractError("every row needs at least one allowed entry")
        g = np.where(mask, g, -np.inf)
    perturbed = ad.add(logits, Tensor(g, dtype=logits.data.dtype))
    hard = one_hot_argmax(perturbed.data)
    if not straight_through:
        return Tensor(hard, dtype=logits.data.dtype)
    soft = ad.row_softmax(ad.scale(perturbed, 1.0 / tau))
    value = trace.value(hard, soft.data) if trace is not None else hard
    return ad.straight_through(value, soft)


def hard_gumbel(logits, tau: float = 1.0, noise: str = "sampled",
                rng: np.random.Generator | None = None) -> np.ndarray:
    """One-hot sample over a length-n vector of logits."""
    x = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=float).reshape(1, -1)
    if x.shape[1] < 1:
        raise ContractError("hard_gumbel needs at least one logit")
    out = hard_gumbel_rows(Tensor(x), tau=tau, rng=rng, noise=noise, straight_through=False)
    return out.data[0]


def score_features(features, Z, w) -> Tensor:
    """``scores[s, c] = Z[s, c] * (w . f_s)``; ``w`` is a ``d x 1`` column."""
    f = ad.as_tensor(features)
    instance_score = ad.matmul(f, ad.as_tensor(w))
    return ad.scale_rows(ad.as_tensor(Z), instance_score)


@dataclass
class RepresentativeSet:
    scores: Tensor | None
    hard_assign: Tensor  # S x C_eff
    reps: Tensor  # C_eff x d
    selected: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _nearest(features: np.ndarray, centroids: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    d2 = np.sum((features[None, :, :] - centroids[:, None, :]) ** 2, axis=2)  # C x S
    if allowed is not None:
        d2 = np.where(allowed, d2, np.inf)
    return np.argmin(d2, axis=1)


def select_representatives(features, scores: Tensor | None, tau: float = 1.0,
                           rng: np.random.Generator | None = None, mode: str = "gumbel",
                           noise: str = "sampled", Z=None, centroids: np.ndarray | None = None,
                           members: np.ndarray | None = None, straight_through: bool = True,
                           trace: SelectionTrace | None = None) -> RepresentativeSet:
    """Pick one representative per cluster.

    ``members`` (``S x C`` bool) restricts each cluster's candidates, as used
    with hard k-means clusters; clusters without members fall back to the
    instance nearest their centroid.  ``mean`` mode needs ``Z``; ``centroid``
    mode and the fallback need ``centroids``.
    """
    if mode not in SELECT_MODES:
        raise ContractError(f"unknown selection mode {mode!r}; expected one of {SELECT_MODES}")
    f = ad.as_tensor(features)
    S = f.rows
    C = scores.cols if scores is not None else (Z.shape[1] if Z is not None else len(centroids))
    dtype = f.data.dtype

    allowed = None
    if members is not None:
        allowed = members.T.copy()  # C x S
        empty = ~allowed.any(axis=1)
        if empty.any():
            if centroids is None:
                raise ContractError("empty clusters need centroids for the fallback")
            fallback = _nearest(f.data, np.asarray(centroids)[empty])
            allowed[np.flatnonzero(empty), fallback] = True

    if mode == "mean":
        if Z is None:
            raise ContractError("mean selection needs the assignment matrix Z")
        weights = ad.as_tensor(Z)
        if allowed is not None:
            weights = Tensor(allowed.T.astype(dtype), dtype=dtype)
        weights_t = ad.row_normalize(ad.transpose(weights))  # C x S
        reps = ad.matmul(weights_t, f)
        return RepresentativeSet(scores, ad.transpose(weights_t), reps, np.argmax(weights_t.data, axis=1))

    if mode == "gumbel":
        if scores is None:
            raise ContractError("gumbel selection needs scores")
        pick_t = hard_gumbel_rows(ad.transpose(scores), tau=tau, rng=rng, noise=noise,
                                  mask=allowed, straight_through=straight_through, trace=trace)
        selected = np.argmax(pick_t.data, axis=1)
    else:
        if mode == "random":
            if rng is None:
                raise ContractError("random selection needs an rng")
            if allowed is None:
                selected = rng.integers(S, size=C)
            else:
                selected = np.array([rng.choice(np.flatnonzero(row)) for row in allowed])
        else:
            if centroids is None:
                raise ContractError("centroid selection needs centroids")
            selected = _nearest(f.data, np.asarray(centroids)[:C], allowed)
        onehot = np.zeros((C, S), dtype=dtype)
        onehot[np.arange(C), selected] = 1
        pick_t = Tensor(onehot, dtype=dtype)

    reps = ad.matmul(pick_t, f)
    return RepresentativeSet(scores, ad.transpose(pick_t), reps, np.asarray(selected))
