"""Bag-level metrics, redundancy statistics and similarity heatmaps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .bag_io import FeatureBag, Manifest
from .errors import ContractError, UndefinedMetric
from .graph import cosine_similarity_np
from .model import predict

REDUNDANCY_THRESHOLD = 0.995


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) for class 1."""
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    return int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & y)), int(np.sum(~p & ~y))


def accuracy(predictions, labels) -> float:
    tp, fp, fn, tn = confusion(predictions, labels)
    total = tp + fp + fn + tn
    return (tp + tn) / total if total else 0.0


def f1(predictions, labels) -> float:
    tp, fp, fn, _ = confusion(predictions, labels)
    if tp == 0:
        return 0.0 if (fp or fn) else 1.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


@dataclass
class EvalReport:
    accuracy: float
    auc: float | None
    f1: float
    predictions: list[tuple[str, float, int]] = field(default_factory=list)
    threshold: float = 0.5

    @property
    def auc_defined(self) -> bool:
        return self.auc is not None

    def to_csv(self) -> str:
        lines = ["bag_id,probability,label"]
        lines += [f"{b},{p:.6f},{y}" for b, p, y in self.predictions]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        auc_txt = f"{self.auc:.4f}" if self.auc is not None else "undefined"
        return (f"bags={len(self.predictions)} threshold={self.threshold} "
                f"acc={self.accuracy:.4f} auc={auc_txt} f1={self.f1:.4f}")


def report_from_predictions(predictions: list[tuple[str, float, int]], threshold: float = 0.5) -> EvalReport:
    probs = np.array([p for _, p, _ in predictions])
    labels = np.array([y for _, _, y in predictions])
    decided = probs >= threshold
    try:
        auc_value = auc(probs, labels)
    except UndefinedMetric:
        auc_value = None
    return EvalReport(accuracy(decided, labels), auc_value, f1(decided, labels), predictions, threshold)


def evaluate(params, manifest: Manifest | None = None, threshold: float = 0.5,
             bags: list[FeatureBag] | None = None, workers: int = 1) -> EvalReport:
    """Eval-mode predictions for every bag, merged in manifest order."""
    if bags is None:
        bags = manifest.load_bags()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            probs = list(pool.map(lambda b: predict(params, b.features), bags))
    else:
        probs = [predict(params, b.features) for b in bags]
    preds = [(b.bag_id, p, int(b.label)) for b, p in zip(bags, probs)]
    return report_from_predictions(preds, threshold)


# -- redundancy -------------------------------------------------------------

def _features(bag) -> np.ndarray:
    return bag.features if isinstance(bag, FeatureBag) else np.asarray(bag)


def redundant_pair_count(bag, threshold: float = REDUNDANCY_THRESHOLD) -> tuple[int, int]:
    """(# unordered pairs with cosine > threshold, # unordered pairs)."""
    x = _features(bag)
    S = x.shape[0]
    if S < 2:
        raise UndefinedMetric("redundancy ratio needs at least two instances")
    sim = cosine_similarity_np(x)
    iu = np.triu_indices(S, k=1)
    return int(np.sum(sim[iu] > threshold)), S * (S - 1) // 2


def redundancy_ratio(bag, threshold: float = REDUNDANCY_THRESHOLD) -> float:
    hits, pairs = redundant_pair_count(bag, threshold)
    return hits / pairs


def dataset_redundancy(bags: list[FeatureBag], threshold: float = REDUNDANCY_THRESHOLD,
                       pooled: bool = False) -> float:
    """Mean per-bag ratio, or with ``pooled`` the ratio over all within-bag pairs."""
    counts = [redundant_pair_count(b, threshold) for b in bags if b.S >= 2]
    if not counts:
        raise UndefinedMetric("no bag has two or more instances")
    if pooled:
        return sum(h for h, _ in counts) / sum(p for _, p in counts)
    return float(np.mean([h / p for h, p in counts]))


def redundancy_split(manifest: Manifest, threshold: float = REDUNDANCY_THRESHOLD, quantile: float = 0.1,
                     bags: list[FeatureBag] | None = None) -> tuple[Manifest, Manifest]:
    """Top and bottom ``quantile`` of bags ranked by redundancy ratio.

    Ties are broken by bag_id.  Returns (high, low).
    """
    n = len(manifest)
    k = math.floor(quantile * n + 1e-9)
    if not 0 < quantile <= 0.5 or k < 1:
        raise ContractError(f"need at least {math.ceil(1 / quantile) if quantile > 0 else '?'} "
                            f"bags for quantile {quantile}, got {n}")
    if bags is None:
        bags = manifest.load_bags()
    ratios = {b.bag_id: redundancy_ratio(b, threshold) for b in bags}
    ids = [e.bag_id for e in manifest.entries]
    high = sorted(ids, key=lambda b: (-ratios[b], b))[:k]
    low = sorted(ids, key=lambda b: (ratios[b], b))[:k]
    return manifest.subset(high, "high"), manifest.subset(low, "low")


def similarity_heatmap(bag_or_reps, out_path) -> np.ndarray:
    """Write the full cosine matrix as CSV with six decimals; returns it."""
    sim = cosine_similarity_np(_features(bag_or_reps))
    # -0.000000 would break the symmetry of the text
    text = "\n".join(",".join(f"{v:.6f}" for v in row) for row in sim + 0.0) + "\n"
    Path(out_path).write_text(text.replace("-0.000000", "0.000000"))
    return sim
