"""Positive-unlabeled learning on top of debiased contrastive pretraining.

Pipeline: ``pretrain`` an encoder on features alone, freeze it, then fit a
linear classifier with the imbalanced non-negative PU loss
(``train_classifier``). See the README for the command-line interface.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward, finite_difference_gradient, l2_normalize
from .data import PUDataset, LabeledDataset, SplitSpec, gaussian_mixture, scar_label_split
from .losses import ContrastiveConfig, PULossConfig, imbnnpu_loss, nnpu_loss
from .metrics import MetricsRecord, evaluate_model
from .training import ClassifierConfig, PretrainConfig, pretrain, train_classifier


__all__ = [
    "Tape", "Tensor", "backward", "finite_difference_gradient", "l2_normalize",
    "PUDataset", "LabeledDataset", "SplitSpec", "gaussian_mixture", "scar_label_split",
    "ContrastiveConfig", "PULossConfig", "imbnnpu_loss", "nnpu_loss",
    "MetricsRecord", "evaluate_model",
    "ClassifierConfig", "PretrainConfig", "pretrain", "train_classifier",
]
