"""Train, evaluate and compare CNN classifiers on imbalanced cassava leaf-disease images."""

from .dataset import CASSAVA_REGISTRY, ClassRegistry, DatasetManifest, class_distribution, load_manifest
from .metrics import aggregate, classification_report, confusion_matrix, per_class_counts
from .model_zoo import adapt_head, load_pretrained, predict_class, registry
from .splitter import SplitSpec, stratified_split
from .train_engine import TrainingConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "CASSAVA_REGISTRY",
    "ClassRegistry",
    "DatasetManifest",
    "SplitSpec",
    "TrainingConfig",
    "adapt_head",
    "aggregate",
    "class_distribution",
    "classification_report",
    "confusion_matrix",
    "load_manifest",
    "load_pretrained",
    "per_class_counts",
    "predict_class",
    "registry",
    "run_training",
    "stratified_split",
]
