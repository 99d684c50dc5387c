"""mialab: a desk-scale membership-inference attack and defense laboratory.

Train a small MLP classifier under one of several privacy defenses (plain
cross-entropy, relaxed losses, center-based relaxed learning, label
smoothing, confidence penalty, early stopping), attack it with an adaptive
membership-inference suite, and measure the privacy-utility trade-off.
"""

__version__ = "0.1.0"

from .data import Dataset, SplitPlan, gen_blobs, load_csv, make_split, save_csv, standardize
from .losses import CenterBank, LossResult, RelaxConfig
from .model import ModelParams, forward, init_model
from .trainer import EpochRecord, TrainingConfig, evaluate_accuracy, train

__all__ = [
    "__version__",
    "Dataset",
    "SplitPlan",
    "gen_blobs",
    "load_csv",
    "make_split",
    "save_csv",
    "standardize",
    "CenterBank",
    "LossResult",
    "RelaxConfig",
    "ModelParams",
    "forward",
    "init_model",
    "EpochRecord",
    "TrainingConfig",
    "evaluate_accuracy",
    "train",
]
