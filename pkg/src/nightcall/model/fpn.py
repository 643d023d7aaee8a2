"""Single-layer feature pyramid: lateral 1x1, top-down, 3x3 merge.

All projections are bias-free, so an all-zero input pyramid maps to an
all-zero output pyramid.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from nightcall.errors import ConfigError


class Fpn(nn.Module):
    def __init__(self, in_channels: dict[int, int], levels: tuple[int, ...], out_channels: int):
        super().__init__()
        missing = [l for l in levels if l not in in_channels]
        if missing:
            raise ConfigError(f"no input channels declared for levels {missing}")
        self.levels = tuple(levels)
        self.lateral = nn.ModuleDict(
            {
                str(l): nn.Conv2d(in_channels[l], out_channels, 1, bias=False)
                for l in levels
            }
        )
        self.merge = nn.ModuleDict(
            {
                str(l): nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
                for l in levels
            }
        )

    def forward(self, feats: dict[int, torch.Tensor]) -> dict[int, torch.Tensor]:
        laterals = {l: self.lateral[str(l)](feats[l]) for l in self.levels}
        out = {}
        upper = None
        for l in sorted(self.levels, reverse=True):
            x = laterals[l]
            if upper is not None:
                x = x + F.interpolate(upper, size=x.shape[-2:], mode="nearest")
            upper = x
            out[l] = self.merge[str(l)](x)
        return out
