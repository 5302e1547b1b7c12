"""Tiny 2D-CNN flow-rate classifier in plain numpy."""

from .estimator import ChannelZScore, ModelSchemaError, TinyCNNClassifier, TrainingDivergedError
from .metrics import EvalReport, evaluate, export_features, report_from_predictions
from .model import N_CLASSES, ModelParams, forward, loss_and_grad

__all__ = [
    "ChannelZScore", "EvalReport", "ModelParams", "ModelSchemaError", "N_CLASSES", "TinyCNNClassifier",
    "TrainingDivergedError", "evaluate", "export_features", "forward", "loss_and_grad",
    "report_from_predictions",
]
