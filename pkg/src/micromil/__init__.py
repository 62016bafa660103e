"""Graph-based multiple instance learning for redundant microscopy bags."""

from .bag_io import FeatureBag, Manifest, ManifestEntry, read_bag, read_manifest, write_bag, write_manifest
from .errors import ContractError, DimensionError, DomainError, FormatError, ManifestError, MicroMILError
from .metrics import EvalReport, auc, evaluate, redundancy_ratio, redundancy_split
from .model import TrainConfig, load_model, predict, save_model
from .synth import SynthConfig, generate_dataset
from .trainer import gradient_check, mean_pool_baseline_train, train

__version__ = "0.1.0"

__all__ = [
    "ContractError", "DimensionError", "DomainError", "EvalReport", "FeatureBag", "FormatError",
    "Manifest", "ManifestEntry", "ManifestError", "MicroMILError", "SynthConfig", "TrainConfig",
    "auc", "evaluate", "generate_dataset", "gradient_check", "load_model", "mean_pool_baseline_train",
    "predict", "read_bag", "read_manifest", "redundancy_ratio", "redundancy_split", "save_model",
    "train", "write_bag", "write_manifest",
]
