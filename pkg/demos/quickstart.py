"""
Training on a synthetic patient cohort
======================================

Generate bags of redundant feature vectors, train the graph model and the
mean-pool baseline, and compare them on a held-out split.
"""

import tempfile

from micromil.bag_io import holdout_split
from micromil.metrics import evaluate
from micromil.model import TrainConfig
from micromil.synth import SynthConfig, generate_dataset
from micromil.trainer import mean_pool_baseline_train, train

# %%
# Each bag holds 40 feature vectors, most of them near-copies of a few
# "hotspot" instances. Positive bags hide a handful of signal instances.
work = tempfile.mkdtemp()
manifest = generate_dataset(SynthConfig(n_bags=80, S=40, d=16, redundancy=0.8, seed=1), 0.5, work)
train_m, test_m = holdout_split(manifest, 0.3, seed=1)
print(len(train_m), "training bags,", len(test_m), "test bags")

# %%
# Small model so the script finishes in a few seconds.
config = TrainConfig(clusters=8, hidden=32, epochs=15, seed=1)
params, history = train(config, train_m, on_epoch=lambda r: print(f"epoch {r.epoch:2d}  loss {r.loss:.4f}"))

# %%
# Averaging every instance dilutes the few signal instances; the baseline
# sees that diluted mean and nothing else.
baseline, _ = mean_pool_baseline_train(config, train_m)
print("graph model:", evaluate(params, test_m).summary())
print("mean pool:  ", evaluate(baseline, test_m).summary())
