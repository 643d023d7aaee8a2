"""Exact mapping between physical units and spectrogram pixels.

Conventions used everywhere downstream:

* images are (freq_px, n_frames) arrays; row 0 is the lowest retained
  frequency, column 0 the first STFT frame
* pixel x is time (columns), pixel y is frequency (rows)
* a pixel coordinate is continuous; integer r refers to the point the
  resized image sampled for row r, so px_to_hz(hz_to_px(f)) == f holds
  analytically, not just to rounding
* time coordinates are anchored to frame centers: column j of a window
  starting at t0 shows the signal around t0 + (j * hop + n_fft / 2) / sr
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from nightcall.dsp.config import DspConfig
from nightcall.errors import ValidationError


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box in pixel units, x along time, y along frequency."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValidationError(
                f"degenerate pixel box ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def clip(self, width: float, height: float) -> "PixelBox | None":
        """Intersect with [0, width] x [0, height]; None when empty."""
        x0 = max(self.x0, 0.0)
        y0 = max(self.y0, 0.0)
        x1 = min(self.x1, width)
        y1 = min(self.y1, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return PixelBox(x0, y0, x1, y1)

    def iou(self, other: "PixelBox") -> float:
        ix = min(self.x1, other.x1) - max(self.x0, other.x0)
        iy = min(self.y1, other.y1) - max(self.y0, other.y0)
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        return inter / (self.area + other.area - inter)


class GeometryMap:
    """Pixel <-> physical unit conversion for one front-end config."""

    def __init__(self, cfg: DspConfig):
        self.cfg = cfg
        self.hz_per_raw_bin = cfg.sample_rate / cfg.n_fft
        # keep exactly the FFT bins whose center lies inside the band
        self.raw_bin_lo = math.ceil(cfg.f_min / self.hz_per_raw_bin)
        self.raw_bin_hi = math.floor(cfg.f_max / self.hz_per_raw_bin)
        self.n_raw_bins = self.raw_bin_hi - self.raw_bin_lo + 1
        if self.n_raw_bins < 2:
            raise ValidationError(
                f"band [{cfg.f_min}, {cfg.f_max}] spans {self.n_raw_bins} FFT bins"
            )
        self.freq_resample_factor = cfg.freq_px / self.n_raw_bins

    def hz_to_px(self, freq: float) -> float:
        return (freq / self.hz_per_raw_bin - self.raw_bin_lo) * self.freq_resample_factor

    def px_to_hz(self, py: float) -> float:
        return (py / self.freq_resample_factor + self.raw_bin_lo) * self.hz_per_raw_bin

    def sec_to_px(self, t: float, t0: float = 0.0) -> float:
        cfg = self.cfg
        return ((t - t0) * cfg.sample_rate - cfg.n_fft / 2) / cfg.hop

    def px_to_sec(self, px: float, t0: float = 0.0) -> float:
        cfg = self.cfg
        return t0 + (px * cfg.hop + cfg.n_fft / 2) / cfg.sample_rate

    def raw_bin_coord(self, py: float) -> float:
        """Continuous source FFT-bin index sampled at pixel row py."""
        return self.raw_bin_lo + py / self.freq_resample_factor
