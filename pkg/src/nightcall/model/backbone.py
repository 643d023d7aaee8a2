"""Backbone registry: feature maps at strides 2..32 from a spectrogram.

Two entries ship by default: "tiny", a small CPU-trainable CNN used by
tests and the synthetic benchmark, and "efficientnet_v2_s", the
full-scale option (requires the optional torchvision dependency).
"""

from __future__ import annotations

from typing import Callable

import torch
from torch import nn

from nightcall.errors import ConfigError
from nightcall.model.config import ModelConfig


def _gn(channels: int) -> nn.GroupNorm:
    # GroupNorm keeps batch-size-1 training and inference deterministic
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class TinyBackbone(nn.Module):
    """Strided CNN emitting C2..C6 (or fewer when max_level < 6).

    Smooth activations (SiLU) and GroupNorm keep the loss surface free
    of batch coupling and kinks, which the finite-difference gradient
    oracle relies on.
    """

    def __init__(self, widths: tuple[int, ...], max_level: int = 6):
        super().__init__()
        if max_level < 2 or max_level > 6:
            raise ConfigError(f"max_level must be 2..6, got {max_level}")
        n_stages = max_level - 1
        if len(widths) < n_stages:
            raise ConfigError(
                f"{n_stages} stages need {n_stages} widths, got {len(widths)}"
            )
        self.max_level = max_level
        self.stages = nn.ModuleList()
        prev = 1
        for i in range(n_stages):
            w = widths[i]
            self.stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, w, 3, stride=2, padding=1),
                    _gn(w),
                    nn.SiLU(),
                    nn.Conv2d(w, w, 3, stride=1, padding=1),
                    _gn(w),
                    nn.SiLU(),
                )
            )
            prev = w
        self.out_channels = {
            level: widths[level - 2] for level in range(2, max_level + 1)
        }

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        out = {}
        for i, stage in enumerate(self.stages):
            x = stage(x)
            out[i + 2] = x
        return out


class EfficientNetV2Backbone(nn.Module):
    """torchvision EfficientNetV2-S taps at strides 2, 4, 8, 16, 32.

    The single-channel spectrogram is repeated to three channels to
    match the stock stem.
    """

    _TAPS = {1: 2, 2: 3, 3: 4, 5: 5, 6: 6}  # features index -> pyramid level

    def __init__(self, pretrained: bool = False):
        super().__init__()
        try:
            from torchvision.models import efficientnet_v2_s
        except ImportError:
            raise ConfigError(
                "backbone 'efficientnet_v2_s' requires the optional "
                "torchvision dependency (pip install nightcall[backbones])"
            )
        weights = "IMAGENET1K_V1" if pretrained else None
        net = efficientnet_v2_s(weights=weights)
        self.features = net.features[:7]
        self.out_channels = {2: 24, 3: 48, 4: 64, 5: 160, 6: 256}

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        x = x.repeat(1, 3, 1, 1)
        out = {}
        for i, block in enumerate(self.features):
            x = block(x)
            if i in self._TAPS:
                out[self._TAPS[i]] = x
        return out


def _build_tiny(cfg: ModelConfig) -> TinyBackbone:
    return TinyBackbone(cfg.backbone_widths, max_level=max(cfg.levels))


def _build_efficientnet(cfg: ModelConfig) -> EfficientNetV2Backbone:
    return EfficientNetV2Backbone(pretrained=cfg.backbone_pretrained)


BACKBONES: dict[str, Callable[[ModelConfig], nn.Module]] = {
    "tiny": _build_tiny,
    "efficientnet_v2_s": _build_efficientnet,
}


def build_backbone(cfg: ModelConfig) -> nn.Module:
    try:
        builder = BACKBONES[cfg.backbone_name]
    except KeyError:
        raise ConfigError(
            f"unknown backbone {cfg.backbone_name!r}; "
            f"registered: {sorted(BACKBONES)}"
        )
    net = builder(cfg)
    missing = set(cfg.levels) - set(net.out_channels)
    if missing:
        raise ConfigError(
            f"backbone {cfg.backbone_name!r} lacks levels {sorted(missing)}"
        )
    return net
