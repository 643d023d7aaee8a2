"""Deterministic anchor grids per pyramid level."""

from __future__ import annotations

import math

import torch

from nightcall.model.config import ModelConfig, level_stride


def anchor_shapes(scale: float, ratios: tuple[float, ...]) -> list[tuple[float, float]]:
    """(width, height) per aspect ratio; ratio is h/w, area scale**2."""
    return [(scale / math.sqrt(r), scale * math.sqrt(r)) for r in ratios]


def generate_anchors(
    cfg: ModelConfig, level: int, feat_h: int, feat_w: int
) -> torch.Tensor:
    """All anchors of one level, shape (feat_h * feat_w * ratios, 4).

    Anchors are centered on feature-cell centers, (col + 0.5) * stride
    horizontally and (row + 0.5) * stride vertically, row-major with the
    ratio index innermost. Pure arithmetic: identical across runs.
    """
    stride = level_stride(level)
    scale = cfg.scale_of_level(level)
    shapes = torch.tensor(anchor_shapes(scale, cfg.anchor_ratios), dtype=torch.float32)
    ys = (torch.arange(feat_h, dtype=torch.float32) + 0.5) * stride
    xs = (torch.arange(feat_w, dtype=torch.float32) + 0.5) * stride
    cy, cx = torch.meshgrid(ys, xs, indexing="ij")
    centers = torch.stack([cx.reshape(-1), cy.reshape(-1)], dim=1)  # (HW, 2)
    w = shapes[:, 0][None, :]
    h = shapes[:, 1][None, :]
    x0 = centers[:, 0:1] - 0.5 * w
    y0 = centers[:, 1:2] - 0.5 * h
    x1 = centers[:, 0:1] + 0.5 * w
    y1 = centers[:, 1:2] + 0.5 * h
    return torch.stack([x0, y0, x1, y1], dim=2).reshape(-1, 4)
