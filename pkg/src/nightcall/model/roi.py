"""RoI feature extraction: bilinear pooling and pyramid level routing."""

from __future__ import annotations

import torch
from torch import nn

from nightcall.model.config import ModelConfig, level_stride


def roi_align(
    features: torch.Tensor,
    boxes: torch.Tensor,
    spatial_scale: float,
    out_h: int,
    out_w: int,
    sampling: int = 2,
) -> torch.Tensor:
    """Average-of-bilinear-samples RoI align on one feature map.

    features: (C, H, W); boxes: (N, 4) in image pixels. Uses the aligned
    convention (pixel centers at integer coordinates after the -0.5
    shift). Fully differentiable w.r.t. features.
    """
    c, h, w = features.shape
    n = boxes.shape[0]
    if n == 0:
        return features.new_zeros(0, c, out_h, out_w)
    x0 = boxes[:, 0] * spatial_scale - 0.5
    y0 = boxes[:, 1] * spatial_scale - 0.5
    x1 = boxes[:, 2] * spatial_scale - 0.5
    y1 = boxes[:, 3] * spatial_scale - 0.5
    bin_w = (x1 - x0) / out_w
    bin_h = (y1 - y0) / out_h

    # sample offsets within a bin: (sampling,) fractions in (0, 1)
    frac = (
        torch.arange(sampling, dtype=features.dtype, device=features.device) + 0.5
    ) / sampling
    # grid of sample x coordinates: (N, out_w * sampling)
    ix = torch.arange(out_w, dtype=features.dtype, device=features.device)
    sx = x0[:, None] + bin_w[:, None] * (ix[None, :, None] + frac[None, None, :]).reshape(1, -1)
    iy = torch.arange(out_h, dtype=features.dtype, device=features.device)
    sy = y0[:, None] + bin_h[:, None] * (iy[None, :, None] + frac[None, None, :]).reshape(1, -1)

    def interp_axis(coord: torch.Tensor, size: int):
        coord = coord.clamp(0, size - 1)
        lo = coord.floor().clamp(max=size - 2) if size > 1 else coord.floor().clamp(max=0)
        t = coord - lo
        return lo.long(), t

    lx, tx = interp_axis(sx, w)  # (N, W*S)
    ly, ty = interp_axis(sy, h)  # (N, H*S)

    flat = features.reshape(c, -1)  # (C, H*W)

    def gather(yidx: torch.Tensor, xidx: torch.Tensor) -> torch.Tensor:
        # yidx: (N, Hs), xidx: (N, Ws) -> (N, C, Hs, Ws)
        lin = (yidx[:, :, None] * w + xidx[:, None, :]).reshape(n, -1)  # (N, Hs*Ws)
        g = flat[:, lin.reshape(-1)].reshape(c, n, -1)
        return g.permute(1, 0, 2).reshape(n, c, yidx.shape[1], xidx.shape[1])

    v00 = gather(ly, lx)
    v01 = gather(ly, lx + (1 if w > 1 else 0))
    v10 = gather(ly + (1 if h > 1 else 0), lx)
    v11 = gather(ly + (1 if h > 1 else 0), lx + (1 if w > 1 else 0))
    tx_b = tx[:, None, None, :]
    ty_b = ty[:, None, :, None]
    val = (
        v00 * (1 - ty_b) * (1 - tx_b)
        + v01 * (1 - ty_b) * tx_b
        + v10 * ty_b * (1 - tx_b)
        + v11 * ty_b * tx_b
    )  # (N, C, out_h*S, out_w*S)
    val = val.reshape(n, c, out_h, sampling, out_w, sampling)
    return val.mean(dim=(3, 5))


def assign_levels(boxes: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    """Pyramid level per box: sqrt(area) equal to the lowest level's
    anchor scale routes there, each doubling moves one level up."""
    lo = cfg.levels[0]
    hi = cfg.levels[-1]
    base_scale = cfg.anchor_scales[0]
    size = torch.sqrt(
        (boxes[:, 2] - boxes[:, 0]).clamp(min=1e-6)
        * (boxes[:, 3] - boxes[:, 1]).clamp(min=1e-6)
    )
    k = torch.floor(lo + torch.log2(size / base_scale + 1e-8))
    return k.clamp(lo, hi).long()


class PyramidRoiAlign(nn.Module):
    """Route boxes to pyramid levels and pool fixed-size features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg

    def forward(
        self, pyramid: dict[int, torch.Tensor], boxes: torch.Tensor
    ) -> torch.Tensor:
        """pyramid maps level -> (C, H, W) (single image); boxes (N, 4).

        Returns (N, C, roi_h, roi_w) in the input box order.
        """
        cfg = self.cfg
        any_map = pyramid[cfg.levels[0]]
        n = boxes.shape[0]
        out_h, out_w = cfg.roi_size
        out = any_map.new_zeros(n, any_map.shape[0], out_h, out_w)
        if n == 0:
            return out
        levels = assign_levels(boxes, cfg)
        for level in cfg.levels:
            mask = levels == level
            if not mask.any():
                continue
            idx = mask.nonzero(as_tuple=True)[0]
            pooled = roi_align(
                pyramid[level],
                boxes[idx],
                1.0 / level_stride(level),
                out_h,
                out_w,
                cfg.roi_sampling,
            )
            out[idx] = pooled
        return out
