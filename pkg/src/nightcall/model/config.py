"""Detector configuration.

One dataclass carries architecture, loss, and optimization settings so a
checkpoint fully describes how to rebuild and continue a run. Pyramid
level ``l`` always denotes stride ``2**(l-1)``; configs may use a
contiguous subset of levels 2..6 (small setups train on 2 or 3 levels).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

from nightcall.errors import ConfigError


def level_stride(level: int) -> int:
    return 2 ** (level - 1)


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    backbone_name: str = "tiny"
    backbone_widths: tuple[int, ...] = (24, 48, 96, 160, 224)
    backbone_pretrained: bool = False
    levels: tuple[int, ...] = (2, 3, 4, 5, 6)
    fpn_channels: int = 256
    attn_levels: tuple[int, ...] | None = None  # None: attention on every level
    attn_heads: int = 4
    attn_key_budget: int = 4096  # keys/values pooled down to at most this many
    anchor_scales: tuple[float, ...] = (16.0, 32.0, 64.0, 128.0, 256.0)
    anchor_ratios: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)  # h/w
    rpn_batch: int = 512
    rpn_pos_fraction: float = 0.5
    rcnn_batch: int = 1024
    rcnn_pos_fraction: float = 0.25
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rcnn_pos_iou: float = 0.5
    rpn_pre_nms_topk: int = 1000
    rpn_post_nms_topk_train: int = 512
    rpn_post_nms_topk_test: int = 300
    rpn_nms_iou: float = 0.7
    rpn_reg_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    rcnn_reg_weights: tuple[float, ...] = (10.0, 10.0, 5.0, 5.0)
    roi_size: tuple[int, int] = (7, 7)
    roi_sampling: int = 2
    rcnn_hidden: int = 1024
    pe_freq_dims: int = 64  # sinusoid dims for (center row, height); 0 disables
    pe_time_dims: int = 32  # sinusoid dims for (window-center offset, width)
    nms_iou: float = 0.5
    score_threshold: float = 0.5
    # optimization
    lr: float = 1e-3
    weight_decay: float = 0.0
    warmup_steps: int = 100
    total_steps: int = 1000
    lr_decay_milestones: tuple[int, ...] = (600, 850)
    lr_decay_gamma: float = 0.1
    batch_size: int = 2
    grad_clip: float = 10.0
    aug_time_jitter: int = 256  # frames; 0 disables window-start jitter
    aug_gain_jitter: float = 0.0  # relative waveform gain range; 0 disables
    aug_noise_mix: float = 0.0  # probability of adding an annotation-free window
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if not self.levels:
            raise ConfigError("at least one pyramid level required")
        if list(self.levels) != sorted(set(self.levels)):
            raise ConfigError(f"levels must be strictly increasing, got {self.levels}")
        if self.levels[0] < 2 or self.levels[-1] > 6:
            raise ConfigError(f"levels must lie in 2..6, got {self.levels}")
        if len(self.anchor_scales) != len(self.levels):
            raise ConfigError(
                f"need one anchor scale per level: {len(self.anchor_scales)} scales "
                f"for {len(self.levels)} levels"
            )
        if any(s <= 0 for s in self.anchor_scales) or any(
            r <= 0 for r in self.anchor_ratios
        ):
            raise ConfigError("anchor scales and ratios must be positive")
        for name in ("rpn_pos_iou", "rpn_neg_iou", "rcnn_pos_iou", "rpn_nms_iou",
                     "nms_iou", "score_threshold", "rpn_pos_fraction",
                     "rcnn_pos_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must be in (0,1), got {v}")
        if self.rpn_neg_iou > self.rpn_pos_iou:
            raise ConfigError("rpn_neg_iou above rpn_pos_iou leaves no ignore band")
        for name in ("pe_freq_dims", "pe_time_dims"):
            v = getattr(self, name)
            if v < 0 or v % 4 != 0:
                # each encoding splits into two sin/cos sinusoids
                raise ConfigError(f"{name} must be a non-negative multiple of 4")
        if self.attn_heads < 1 or self.attn_key_budget < 1:
            raise ConfigError("attn_heads and attn_key_budget must be positive")
        if self.roi_sampling < 1 or min(self.roi_size) < 1:
            raise ConfigError("roi_size and roi_sampling must be positive")
        if self.lr <= 0 or self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("lr, total_steps and batch_size must be positive")
        if not 0 <= self.aug_noise_mix <= 1:
            raise ConfigError(f"aug_noise_mix must be in [0,1], got {self.aug_noise_mix}")
        if self.attn_levels is not None:
            if not set(self.attn_levels) <= set(self.levels):
                raise ConfigError(
                    f"attn_levels {self.attn_levels} not a subset of levels {self.levels}"
                )

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(level_stride(l) for l in self.levels)

    @property
    def effective_attn_levels(self) -> tuple[int, ...]:
        return tuple(self.levels) if self.attn_levels is None else self.attn_levels

    @property
    def anchors_per_position(self) -> int:
        return len(self.anchor_ratios)

    @property
    def pe_total_dims(self) -> int:
        return self.pe_freq_dims + self.pe_time_dims

    def scale_of_level(self, level: int) -> float:
        return self.anchor_scales[self.levels.index(level)]

    def to_json(self) -> dict[str, Any]:
        doc = dataclasses.asdict(self)
        doc = {
            k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ModelConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        extra = set(doc) - set(fields)
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        kwargs = {}
        for k, v in doc.items():
            if isinstance(v, list):
                v = tuple(v)
            kwargs[k] = v
        return cls(**kwargs)
