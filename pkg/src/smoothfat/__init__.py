"""Desk-scale fast adversarial training with ConvergeSmooth loss-drift constraints."""

from .attacks import AttackConfig, fgsm, pgd
from .data import Dataset, load_idx, make_blobs
from .evaluation import EvalReport, aggregate, evaluate
from .models import ModelSpec, build_model, forward
from .smoothing import SmoothConfig
from .trainer import TrainConfig, detect_overfit, lr_at, run

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "fgsm", "pgd", "Dataset", "load_idx", "make_blobs", "EvalReport",
    "aggregate", "evaluate", "ModelSpec", "build_model", "forward", "SmoothConfig",
    "TrainConfig", "detect_overfit", "lr_at", "run",
]
