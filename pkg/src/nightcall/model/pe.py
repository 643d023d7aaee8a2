"""Sinusoidal positional encodings for RoIs.

The frequency axis is encoded absolutely (a row maps to a fixed Hz
band), the time axis relatively: only the RoI's offset from the window
center and its width enter, never its position in the recording, so
sliding the analysis window along a file cannot change a call's
encoding. Encodings are concatenated, linearly projected to the RoI
feature width, and added channel-wise to the pooled features.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoid(values: torch.Tensor, dim: int) -> torch.Tensor:
    """Transformer-style encoding of scalar values, shape (N, dim).

    Even columns are sines, odd columns cosines, with geometrically
    spaced wavelengths from 2*pi to 10000*2*pi. sinusoid(0, d) is
    [0, 1, 0, 1, ...].
    """
    if dim % 2 != 0:
        raise ValueError(f"sinusoid dim must be even, got {dim}")
    if dim == 0:
        return values.new_zeros(values.shape[0], 0)
    half = dim // 2
    exponent = torch.arange(half, dtype=values.dtype, device=values.device) / half
    inv_wavelength = torch.exp(-math.log(10000.0) * exponent)
    angles = values[:, None] * inv_wavelength[None, :]
    out = torch.zeros(values.shape[0], dim, dtype=values.dtype, device=values.device)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles)
    return out


class RoiPositionalEncoder(nn.Module):
    """Box -> projected positional vector, with probe access to the parts.

    raw() exposes the unprojected concatenation
    [freq_center | height | time_offset | width] so the frequency probe
    can resample the first block while holding the rest fixed.
    """

    def __init__(
        self,
        pe_freq_dims: int,
        pe_time_dims: int,
        out_channels: int,
        window_frames: int,
    ):
        super().__init__()
        self.freq_center_dims = pe_freq_dims // 2
        self.freq_height_dims = pe_freq_dims - self.freq_center_dims
        self.time_offset_dims = pe_time_dims // 2
        self.time_width_dims = pe_time_dims - self.time_offset_dims
        self.total_dims = pe_freq_dims + pe_time_dims
        self.window_frames = window_frames
        self.out_channels = out_channels
        self.proj = (
            nn.Linear(self.total_dims, out_channels) if self.total_dims else None
        )

    def raw(
        self, boxes: torch.Tensor, freq_center: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Unprojected encoding; freq_center overrides the boxes' rows."""
        cy = 0.5 * (boxes[:, 1] + boxes[:, 3])
        if freq_center is not None:
            cy = freq_center.to(boxes.dtype)
        height = boxes[:, 3] - boxes[:, 1]
        offset = 0.5 * (boxes[:, 0] + boxes[:, 2]) - self.window_frames / 2
        width = boxes[:, 2] - boxes[:, 0]
        return torch.cat(
            [
                sinusoid(cy, self.freq_center_dims),
                sinusoid(height, self.freq_height_dims),
                sinusoid(offset, self.time_offset_dims),
                sinusoid(width, self.time_width_dims),
            ],
            dim=1,
        )

    def project(self, raw: torch.Tensor) -> torch.Tensor:
        if self.proj is None:
            return raw.new_zeros(raw.shape[0], self.out_channels)
        return self.proj(raw)

    def forward(self, boxes: torch.Tensor) -> torch.Tensor:
        return self.project(self.raw(boxes))
