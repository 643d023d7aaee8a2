"""Per-level self-attention over flattened spatial positions.

Applied to each backbone output before the FPN. Queries keep full
resolution; keys and values are average-pooled down to a budgeted
number of positions so the quadratic term stays bounded on the large
early levels. The output projection starts at zero, so a freshly built
block is exactly the identity (residual connection).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from nightcall.errors import ConfigError


class LevelSelfAttention(nn.Module):
    def __init__(self, channels: int, heads: int, key_budget: int):
        super().__init__()
        if channels % heads != 0:
            raise ConfigError(
                f"channels {channels} not divisible by {heads} attention heads"
            )
        self.key_budget = key_budget
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        nn.init.zeros_(self.attn.out_proj.weight)
        nn.init.zeros_(self.attn.out_proj.bias)

    def _pool_kv(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        if h * w <= self.key_budget:
            return x.flatten(2).transpose(1, 2)
        shrink = math.sqrt(self.key_budget / (h * w))
        kh = max(1, int(h * shrink))
        kw = max(1, int(w * shrink))
        pooled = F.adaptive_avg_pool2d(x, (kh, kw))
        return pooled.flatten(2).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = x.flatten(2).transpose(1, 2)  # (b, hw, c)
        kv = self._pool_kv(x)
        out, _ = self.attn(q, kv, kv, need_weights=False)
        return x + out.transpose(1, 2).reshape(b, c, h, w)
