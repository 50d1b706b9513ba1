"""Dataset-free infrared/visible super-resolution fusion with Retinex losses."""

from .losses import LossReport, LossWeights, total_loss
from .metrics import MetricReport, evaluate_all
from .networks import NetSpec, build_singlepath, build_zippernet
from .trainer import FusionResult, Scene, TrainConfig, prepare_scene, run_ablation, train

__all__ = [
    "FusionResult",
    "LossReport",
    "LossWeights",
    "MetricReport",
    "NetSpec",
    "Scene",
    "TrainConfig",
    "build_singlepath",
    "build_zippernet",
    "evaluate_all",
    "prepare_scene",
    "run_ablation",
    "total_loss",
    "train",
]
