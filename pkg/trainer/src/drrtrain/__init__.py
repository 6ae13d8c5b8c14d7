"""CNN trainer for pelvis DRR segmentation and PSI regression datasets."""

from .models import build_regressor, build_unet
from .predict import cross_validate, predict
from .train import TrainConfig, train, train_regressor, train_segmentation

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "build_regressor",
    "build_unet",
    "cross_validate",
    "predict",
    "train",
    "train_regressor",
    "train_segmentation",
]
