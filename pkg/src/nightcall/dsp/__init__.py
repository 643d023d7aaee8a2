"""Signal front end: resampling, spectrograms, pixel geometry, tiling."""

from nightcall.dsp.config import DspConfig
from nightcall.dsp.geometry import GeometryMap, PixelBox
from nightcall.dsp.spectrogram import (
    crop_resize_freq,
    log_normalize,
    resample_to,
    stft_magnitude,
    window_image,
)
from nightcall.dsp.windows import (
    SpectrogramWindow,
    WindowBoxes,
    load_windows_npz,
    save_windows_npz,
    tile_starts,
    tile_windows,
    window_boxes,
)

__all__ = [
    "DspConfig",
    "GeometryMap",
    "PixelBox",
    "SpectrogramWindow",
    "WindowBoxes",
    "crop_resize_freq",
    "load_windows_npz",
    "log_normalize",
    "resample_to",
    "save_windows_npz",
    "stft_magnitude",
    "tile_starts",
    "tile_windows",
    "window_boxes",
    "window_image",
]
