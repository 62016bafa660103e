"""Synthetic feature bags with controllable redundancy.

Each dataset draws ``n_concepts`` latent tissue concepts, unit Gaussian
directions rescaled to norm ``concept_norm``.  An instance is a concept mean
plus isotropic noise.  A bag is positive iff at least one of its instances
comes from ``signal_concept``.

Redundancy models repeated captures of the same field of view: a fraction
``redundancy`` of the instances are near-copies of earlier ones.  Copies are
drawn from a few "hotspot" instances (about a quarter of the unique ones) and
from earlier copies of them, so the copy families grow unevenly.  The copy
perturbation has total norm about 1% of the mean instance norm, which keeps
duplicate-pair cosine similarity near 0.9999.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bag_io import FeatureBag, Manifest, ManifestEntry, write_bag, write_manifest
from .errors import ContractError

DUP_RELATIVE_SCALE = 0.01


@dataclass
class SynthConfig:
    n_bags: int = 200
    S: int = 60
    d: int = 32
    redundancy: float = 0.8
    n_concepts: int = 8
    signal_concept: int = 0
    noise_sigma: float = 0.5
    seed: int = 0
    # per-bag redundancy is drawn uniformly from redundancy +/- jitter
    redundancy_jitter: float = 0.0
    concept_norm: float = 10.0

    def validate(self) -> None:
        if not 0 <= self.redundancy <= 1:
            raise ContractError(f"redundancy must be in [0, 1], got {self.redundancy}")
        if self.n_concepts < 2:
            raise ContractError(f"n_concepts must be >= 2, got {self.n_concepts}")
        if not 0 <= self.signal_concept < self.n_concepts:
            raise ContractError(f"signal_concept {self.signal_concept} out of range")
        if self.S < self.n_concepts:
            raise ContractError(f"S={self.S} must be >= n_concepts={self.n_concepts}")
        if self.d < 1 or self.n_bags < 1:
            raise ContractError("d and n_bags must be positive")
        if self.noise_sigma < 0 or self.redundancy_jitter < 0:
            raise ContractError("noise_sigma and redundancy_jitter must be non-negative")


def concept_means(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0])
    means = rng.standard_normal((cfg.n_concepts, cfg.d))
    means *= cfg.concept_norm / np.linalg.norm(means, axis=1, keepdims=True)
    return means


def _bag_redundancy(cfg: SynthConfig, rng: np.random.Generator) -> float:
    if cfg.redundancy_jitter == 0:
        return cfg.redundancy
    lo = max(0.0, cfg.redundancy - cfg.redundancy_jitter)
    hi = min(1.0, cfg.redundancy + cfg.redundancy_jitter)
    return float(rng.uniform(lo, hi))


def generate_bag(cfg: SynthConfig, label: int, rng: np.random.Generator,
                 bag_id: str = "bag", means: np.ndarray | None = None) -> FeatureBag:
    cfg.validate()
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label}")
    if means is None:
        means = concept_means(cfg)
    S, d, sigma = cfg.S, cfg.d, cfg.noise_sigma
    sig_mean = means[cfg.signal_concept]
    others = [c for c in range(cfg.n_concepts) if c != cfg.signal_concept]

    n_dup = min(int(np.floor(_bag_redundancy(cfg, rng) * S)), S - 1)
    n_unique = S - n_dup

    concepts = rng.choice(others, size=n_unique)
    if label == 1:
        n_signal = int(rng.integers(1, max(1, n_unique // 6) + 1))
        concepts[rng.choice(n_unique, size=n_signal, replace=False)] = cfg.signal_concept

    unique = np.empty((n_unique, d))
    for i, c in enumerate(concepts):
        while True:
            x = means[c] + sigma * rng.standard_normal(d)
            # negatives must stay clear of the signal concept
            if c == cfg.signal_concept or np.linalg.norm(x - sig_mean) > 3 * sigma:
                break
        unique[i] = x

    rows = list(unique)
    if n_dup:
        dup_sigma = DUP_RELATIVE_SCALE * np.linalg.norm(unique, axis=1).mean() / np.sqrt(d)
        n_hot = max(1, int(np.ceil(n_unique / 4)))
        pool = list(rng.choice(n_unique, size=n_hot, replace=False))
        for _ in range(n_dup):
            src = pool[int(rng.integers(len(pool)))]
            rows.append(rows[src] + dup_sigma * rng.standard_normal(d))
            pool.append(len(rows) - 1)

    features = np.asarray(rows)[rng.permutation(S)].astype(np.float32)
    return FeatureBag(bag_id, features, label)


def generate_dataset(cfg: SynthConfig, pos_fraction: float, out_dir,
                     manifest_name: str = "manifest.csv") -> Manifest:
    """Write ``cfg.n_bags`` MILB files plus a manifest into ``out_dir``."""
    cfg.validate()
    if not 0 <= pos_fraction <= 1:
        raise ContractError(f"pos_fraction must be in [0, 1], got {pos_fraction}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    means = concept_means(cfg)

    n_pos = int(round(pos_fraction * cfg.n_bags))
    labels = np.zeros(cfg.n_bags, dtype=int)
    labels[:n_pos] = 1
    labels = np.random.default_rng([cfg.seed, 1]).permutation(labels)

    width = max(4, len(str(cfg.n_bags - 1)))
    entries = []
    for i, label in enumerate(labels):
        bag_id = f"bag_{i:0{width}d}"
        rng = np.random.default_rng([cfg.seed, 2, i])
        bag = generate_bag(cfg, int(label), rng, bag_id=bag_id, means=means)
        fname = f"{bag_id}.milb"
        write_bag(bag, out_dir / fname)
        entries.append(ManifestEntry(bag_id, int(label), fname))

    manifest = Manifest(entries, split_name=Path(manifest_name).stem, base_dir=out_dir)
    write_manifest(manifest, out_dir / manifest_name)
    return manifest
