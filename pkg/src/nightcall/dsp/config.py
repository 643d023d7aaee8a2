"""Front-end configuration.

All pixel geometry derives from these numbers; they are embedded in
checkpoints so a trained model carries its own front end.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

from nightcall.errors import ConfigError


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 44100
    n_fft: int = 1024
    hop: int = 132
    f_min: float = 500.0
    f_max: float = 13000.0
    freq_px: int = 375          # spectrogram height after band crop + resize
    window_frames: int = 1024   # spectrogram width of one model input
    window_stride: int = 512    # tiling step, in frames
    log_eps: float = 1e-8
    min_visibility: float = 0.3  # time fraction below which a box is dropped
    resample_beta: float = 14.0  # Kaiser beta for rate conversion

    def __post_init__(self):
        if self.sample_rate <= 0 or self.n_fft <= 0 or self.hop <= 0:
            raise ConfigError("sample_rate, n_fft and hop must be positive")
        if self.hop > self.n_fft:
            raise ConfigError("hop larger than n_fft leaves gaps between frames")
        if not 0 <= self.f_min < self.f_max:
            raise ConfigError(f"need 0 <= f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if self.f_max > self.sample_rate / 2:
            raise ConfigError(f"f_max {self.f_max} beyond Nyquist {self.sample_rate / 2}")
        if self.freq_px <= 1 or self.window_frames <= 1:
            raise ConfigError("freq_px and window_frames must be > 1")
        if not 0 < self.window_stride <= self.window_frames:
            raise ConfigError("window_stride must be in (0, window_frames]")
        if self.log_eps <= 0:
            raise ConfigError("log_eps must be positive")
        if not 0 <= self.min_visibility <= 1:
            raise ConfigError("min_visibility must be in [0, 1]")

    @property
    def window_samples(self) -> int:
        """Samples consumed by one window of window_frames STFT frames."""
        return (self.window_frames - 1) * self.hop + self.n_fft

    def n_frames(self, n_samples: int) -> int:
        """STFT frame count for a signal of n_samples (no padding)."""
        if n_samples < self.n_fft:
            return 0
        return 1 + (n_samples - self.n_fft) // self.hop

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "DspConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown front-end config keys: {sorted(extra)}")
        return cls(**doc)
