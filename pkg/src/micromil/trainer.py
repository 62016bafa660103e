"""End-to-end training, Adam, the mean-pool baseline and the gradient check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .bag_io import FeatureBag, Manifest
from .errors import ContractError, DimensionError
from .gnn import bce_loss
from .model import (AdamState, MeanPoolParams, ModelParams, TrainConfig, bag_forward,
                    init_meanpool, init_model, meanpool_forward)
from .rie import SelectionTrace

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    acc: float


def adam_step(params: dict[str, ad.Tensor], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.data.shape}")
        dt = p.data.dtype.type
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= dt(config.beta1)
        m += dt(1 - config.beta1) * g
        v *= dt(config.beta2)
        v += dt(1 - config.beta2) * (g * g)
        m_hat = m / dt(1 - config.beta1 ** t)
        v_hat = v / dt(1 - config.beta2 ** t)
        p.data -= dt(config.lr) * m_hat / (np.sqrt(v_hat) + dt(config.eps))


def _load(manifest: Manifest | None, bags: list[FeatureBag] | None) -> list[FeatureBag]:
    if bags is None:
        if manifest is None:
            raise ContractError("need a manifest or a list of bags")
        bags = manifest.load_bags()
    if not bags:
        raise ContractError("cannot train on an empty manifest")
    d = bags[0].d
    for b in bags:
        if b.d != d:
            raise DimensionError(f"bag {b.bag_id} has d={b.d}, expected {d}")
        if b.label not in (0, 1):
            raise ContractError(f"bag {b.bag_id} has no 0/1 label")
    return bags


def _fit(params, bags: list[FeatureBag], config: TrainConfig,
         forward: Callable, on_epoch: Callable[[EpochRecord], None] | None) -> list[EpochRecord]:
    trainable = params.trainable()
    order_rng = np.random.default_rng([config.seed, 3])
    history = []
    for epoch in range(config.epochs):
        losses, correct = [], 0
        for idx in order_rng.permutation(len(bags)):
            bag = bags[idx]
            rng = np.random.default_rng([config.seed, 4, epoch, int(idx)])
            for t in trainable.values():
                t.zero_grad()
            p = forward(params, bag.features, "train", rng)
            loss = bce_loss(p, bag.label)
            loss.backward()
            adam_step(trainable, {k: t.grad for k, t in trainable.items()}, params.adam, config)
            losses.append(loss.item())
            correct += int((p.item() >= 0.5) == bool(bag.label))
        rec = EpochRecord(epoch, float(np.mean(losses)), correct / len(bags))
        history.append(rec)
        log.debug("epoch %d loss %.6f acc %.4f", rec.epoch, rec.loss, rec.acc)
        if on_epoch is not None:
            on_epoch(rec)
    return history


def train(config: TrainConfig, manifest: Manifest | None = None, bags: list[FeatureBag] | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[ModelParams, list[EpochRecord]]:
    """Train the full model; one Adam step per bag, seeded shuffle per epoch."""
    config.validate()
    bags = _load(manifest, bags)
    params = init_model(config, [b.features for b in bags])
    history = _fit(params, bags, config, bag_forward, on_epoch)
    return params, history


def mean_pool_baseline_train(config: TrainConfig, manifest: Manifest | None = None,
                             bags: list[FeatureBag] | None = None,
                             on_epoch: Callable[[EpochRecord], None] | None = None
                             ) -> tuple[MeanPoolParams, list[EpochRecord]]:
    config.validate()
    bags = _load(manifest, bags)
    params = init_meanpool(config, bags[0].d)
    history = _fit(params, bags, config, meanpool_forward, on_epoch)
    return params, history


def history_csv(history: list[EpochRecord]) -> str:
    lines = ["epoch,loss,acc"] + [f"{r.epoch},{r.loss:.6f},{r.acc:.6f}" for r in history]
    return "\n".join(lines) + "\n"


# -- gradient check --------------------------------------------------------

def canonical_bag() -> FeatureBag:
    """Six instances in two loose groups, d = 4."""
    rng = np.random.default_rng(20240101)
    centers = np.array([[1.0, 0.5, -0.5, 0.2], [-0.6, 1.2, 0.4, -0.8]])
    feats = np.concatenate([centers[0] + 0.3 * rng.standard_normal((3, 4)),
                            centers[1] + 0.3 * rng.standard_normal((3, 4))])
    return FeatureBag("canonical", feats, 1)


def canonical_config(**overrides) -> TrainConfig:
    base = TrainConfig(clusters=2, hidden=16, layers=2, dropout=0.0, seed=3,
                       gumbel_noise=False, warmup_dce_iters=0)
    return replace(base, **overrides)


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(config: TrainConfig | None = None, bag: FeatureBag | None = None,
                   eps: float = 1e-5, straight_through: bool = True) -> GradCheckReport:
    """Compare backprop gradients with central differences for every parameter.

    Runs in 64-bit with zero Gumbel noise and no dropout.  Hard selections are
    recorded at the base point and replayed while perturbing, so the finite
    differences see the same straight-through surrogate that backprop
    differentiates.
    """
    config = replace(config or canonical_config(), dropout=0.0, gumbel_noise=False)
    bag = bag or canonical_bag()
    with ad.precision(np.float64):
        params = init_model(config, [bag.features], dtype=np.float64)
        feats = ad.Tensor(bag.features, dtype=np.float64)
        tensors = params.tensors()
        for t in tensors.values():
            t.requires_grad = True
            t.zero_grad()

        trace = SelectionTrace()
        loss = bce_loss(bag_forward(params, feats, "eval", trace=trace,
                                    straight_through=straight_through), bag.label)
        loss.backward()
        analytic = {k: t.grad.copy() for k, t in tensors.items()}

        def loss_at() -> float:
            p = bag_forward(params, feats, "eval", trace=trace.replay() if straight_through else None,
                            straight_through=straight_through)
            return bce_loss(p, bag.label).item()

        numeric = {}
        for name, t in tensors.items():
            num = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_at()
                flat[i] = orig - eps
                down = loss_at()
                flat[i] = orig
                num.reshape(-1)[i] = (up - down) / (2 * eps)
            numeric[name] = num

    per_param = {k: float(relative_error(analytic[k], numeric[k]).max()) for k in tensors}
    return GradCheckReport(max(per_param.values()), per_param, analytic, numeric)
