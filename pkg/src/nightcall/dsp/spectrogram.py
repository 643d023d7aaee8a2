"""Waveform to normalized spectrogram image.

The pipeline is: polyphase resample to the working rate, Hann STFT
magnitude, crop to the analysis band, linear resize along frequency to
the configured pixel height, then log compression and per-window
min-max normalization.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.signal import get_window, resample_poly

from nightcall.dsp.config import DspConfig
from nightcall.dsp.geometry import GeometryMap
from nightcall.errors import ValidationError


def resample_to(
    wave: np.ndarray, src_rate: int, dst_rate: int, beta: float = 14.0
) -> np.ndarray:
    """Rate-convert with a Kaiser-windowed polyphase filter.

    Returns the input unchanged when the rates already agree.
    """
    if src_rate <= 0 or dst_rate <= 0:
        raise ValidationError(f"bad sample rates {src_rate} -> {dst_rate}")
    if src_rate == dst_rate:
        return wave
    ratio = Fraction(dst_rate, src_rate)
    return resample_poly(wave, ratio.numerator, ratio.denominator, window=("kaiser", beta))


def stft_magnitude(wave: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Magnitude STFT, shape (n_fft // 2 + 1, n_frames).

    Frames are taken without padding: frame j covers samples
    [j * hop, j * hop + n_fft). Signals shorter than one frame yield a
    zero-column array.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValidationError(f"expected mono waveform, got shape {wave.shape}")
    n_bins = n_fft // 2 + 1
    if wave.size < n_fft:
        return np.zeros((n_bins, 0))
    frames = np.lib.stride_tricks.sliding_window_view(wave, n_fft)[::hop]
    win = get_window("hann", n_fft, fftbins=True)
    spec = np.fft.rfft(frames * win, axis=1)
    return np.abs(spec).T


def crop_resize_freq(mag: np.ndarray, geom: GeometryMap) -> np.ndarray:
    """Restrict to the analysis band and resize rows to cfg.freq_px.

    Output row r samples the source spectrum at the continuous bin
    coordinate geom.raw_bin_coord(r) by linear interpolation, which is
    what makes GeometryMap.hz_to_px exact for the resized image.
    """
    n_bins = mag.shape[0]
    if geom.raw_bin_hi >= n_bins:
        raise ValidationError(
            f"band needs FFT bin {geom.raw_bin_hi} but spectrum has {n_bins} bins"
        )
    rows = np.arange(geom.cfg.freq_px, dtype=np.float64)
    coords = geom.raw_bin_lo + rows / geom.freq_resample_factor
    idx = np.floor(coords).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 2)
    frac = (coords - idx)[:, None]
    return mag[idx] * (1.0 - frac) + mag[idx + 1] * frac


def log_normalize(img: np.ndarray, eps: float) -> np.ndarray:
    """log1p compression then min-max to [0, 1]; flat inputs map to zeros."""
    out = np.log1p(np.asarray(img, dtype=np.float64) / eps)
    lo = out.min() if out.size else 0.0
    hi = out.max() if out.size else 0.0
    if hi - lo <= 0:
        return np.zeros_like(out, dtype=np.float32)
    return ((out - lo) / (hi - lo)).astype(np.float32)


def window_image(
    wave: np.ndarray, start_sample: int, cfg: DspConfig, geom: GeometryMap | None = None
) -> np.ndarray:
    """Normalized (freq_px, window_frames) image for one window.

    The slice is zero-padded on the right when the recording ends inside
    the window (only possible for recordings shorter than one window;
    tiling right-aligns the final window otherwise).
    """
    geom = geom or GeometryMap(cfg)
    need = cfg.window_samples
    chunk = np.asarray(wave[start_sample : start_sample + need], dtype=np.float64)
    if chunk.size < need:
        chunk = np.pad(chunk, (0, need - chunk.size))
    mag = stft_magnitude(chunk, cfg.n_fft, cfg.hop)
    img = crop_resize_freq(mag, geom)
    return log_normalize(img, cfg.log_eps)
