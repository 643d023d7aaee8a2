"""Two-stage spectrogram detector: backbone, attention, FPN, RPN, RCNN."""

from nightcall.model.config import ModelConfig
from nightcall.model.detector import Detector, WindowTargets
from nightcall.model.train import (
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "Checkpoint",
    "Detector",
    "ModelConfig",
    "WindowTargets",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
