"""Second stage: classify pooled RoIs and refine their boxes."""

from __future__ import annotations

import torch
from torch import nn

from nightcall.model.config import ModelConfig
from nightcall.model.pe import RoiPositionalEncoder


class RcnnHead(nn.Module):
    """Pooled RoI features + positional encoding -> logits and deltas.

    Class index num_classes is background. Box deltas are class-specific
    (4 per foreground class). The head is stateless across RoIs:
    duplicating an input row duplicates its output row.
    """

    def __init__(self, cfg: ModelConfig, window_frames: int):
        super().__init__()
        self.cfg = cfg
        self.pe = RoiPositionalEncoder(
            cfg.pe_freq_dims, cfg.pe_time_dims, cfg.fpn_channels, window_frames
        )
        in_dim = cfg.fpn_channels * cfg.roi_size[0] * cfg.roi_size[1]
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, cfg.rcnn_hidden),
            nn.SiLU(),
            nn.Linear(cfg.rcnn_hidden, cfg.rcnn_hidden),
            nn.SiLU(),
        )
        self.cls = nn.Linear(cfg.rcnn_hidden, cfg.num_classes + 1)
        self.reg = nn.Linear(cfg.rcnn_hidden, 4 * cfg.num_classes)

    def forward(
        self, pooled: torch.Tensor, boxes: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        return self.forward_with_raw_pe(pooled, self.pe.raw(boxes))

    def forward_with_raw_pe(
        self, pooled: torch.Tensor, pe_raw: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Entry point for the frequency probe: the caller supplies the
        unprojected positional vector, everything else is unchanged."""
        x = pooled + self.pe.project(pe_raw)[:, :, None, None]
        x = self.mlp(x.flatten(1))
        return self.cls(x), self.reg(x)
