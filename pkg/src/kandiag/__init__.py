"""Cognitive diagnosis toolkit: classic response models, neural diagnosis
models, and spline-activation (KAN) variants with interpretable structure
export."""

from .autograd import Tensor, no_grad, zero_grads
from .data import Dataset, ResponseTriplet, SynthSpec, load_logs, split, synth_dina
from .kan import KanLayer, KanNetwork, SplineGrid, edge_importance, prune
from .models import (
    VARIANTS,
    DiagnosisModel,
    EmbeddingBank,
    ForwardTrace,
    MasteryVector,
    build_model,
    project_monotone,
)
from .training import Adam, Metrics, TrainConfig, TrainHistory, acc, auc, bce_loss, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "zero_grads",
    "Dataset", "ResponseTriplet", "SynthSpec", "load_logs", "split", "synth_dina",
    "KanLayer", "KanNetwork", "SplineGrid", "edge_importance", "prune",
    "VARIANTS", "DiagnosisModel", "EmbeddingBank", "ForwardTrace",
    "MasteryVector", "build_model", "project_monotone",
    "Adam", "Metrics", "TrainConfig", "TrainHistory", "acc", "auc",
    "bce_loss", "evaluate", "train",
]
