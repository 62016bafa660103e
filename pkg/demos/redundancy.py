"""
Measuring redundancy
====================

Redundancy ratio per bag, the top/bottom split used for shift experiments,
and a similarity heatmap before and after representative selection.
"""

import tempfile
from pathlib import Path

import numpy as np

from micromil.bag_io import read_manifest
from micromil.metrics import dataset_redundancy, redundancy_ratio, redundancy_split, similarity_heatmap
from micromil.model import TrainConfig, bag_forward
from micromil.synth import SynthConfig, generate_dataset
from micromil.trainer import train

# %%
# Jitter spreads per-bag redundancy over [0.05, 0.95].
work = Path(tempfile.mkdtemp())
cfg = SynthConfig(n_bags=60, S=30, d=16, redundancy=0.5, redundancy_jitter=0.45, seed=2)
manifest = generate_dataset(cfg, 0.5, work)
bags = manifest.load_bags()
ratios = np.array([redundancy_ratio(b) for b in bags])
print(f"ratio range {ratios.min():.3f} .. {ratios.max():.3f}")
print(f"mean of per-bag ratios {dataset_redundancy(bags):.3f}, pooled {dataset_redundancy(bags, pooled=True):.3f}")

# %%
# Top and bottom 10% of bags by ratio, as new manifests.
high, low = redundancy_split(manifest, quantile=0.1)
print("most redundant:", [e.bag_id for e in high])
print("least redundant:", [e.bag_id for e in low])

# %%
# Redundancy ratio of the raw bag next to that of its selected representatives.
# The alternating warm-up is switched off: on features this far apart its
# heavy-tailed weighted means pull every centroid to the global mean, after
# which all clusters pick the same instance.
params, _ = train(TrainConfig(clusters=6, hidden=16, epochs=5, seed=2, warmup_dce_iters=0), bags=bags)
for entry in (high.entries[0], low.entries[0]):
    bag = next(b for b in bags if b.bag_id == entry.bag_id)
    _, parts = bag_forward(params, bag.features, return_parts=True)
    reps = parts["reps"]
    distinct = np.unique(reps.selected)
    print(f"{bag.bag_id}: raw ratio {redundancy_ratio(bag):.3f}, "
          f"{len(distinct)} distinct representatives, "
          f"their ratio {redundancy_ratio(bag.features[distinct]) if len(distinct) > 1 else float('nan'):.3f}")

# %%
# Heatmaps for the least redundant bag, raw and representatives.
similarity_heatmap(bag, work / "raw.csv")
similarity_heatmap(reps.reps.data, work / "reps.csv")
print("heatmaps written to", work)
