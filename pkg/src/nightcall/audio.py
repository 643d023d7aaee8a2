"""Audio file reading and writing.

WAV (PCM 8/16/24/32-bit and float32/64) is handled natively. FLAC needs
the optional `soundfile` backend; without it a clear IoError is raised.
Multichannel input is averaged to mono with a warning.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from nightcall.errors import IoError

logger = logging.getLogger(__name__)

_PCM_SCALE = {
    np.dtype(np.int16): 2.0**15,
    np.dtype(np.int32): 2.0**31,
}


def _to_float_mono(data: np.ndarray, path) -> np.ndarray:
    if data.dtype in _PCM_SCALE:
        x = data.astype(np.float64) / _PCM_SCALE[data.dtype]
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        logger.warning("%s has %d channels; averaging to mono", path, x.shape[1])
        x = x.mean(axis=1)
    return x


def read_audio(path: str | Path) -> tuple[np.ndarray, int]:
    """Read an audio file as (mono float64 waveform in [-1, 1], sample rate)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".wav":
        try:
            rate, data = wavfile.read(str(path))
        except FileNotFoundError:
            raise IoError(f"no such file: {path}")
        except Exception as exc:
            raise IoError(f"cannot read WAV {path}: {exc}")
        return _to_float_mono(data, path), int(rate)
    if suffix == ".flac":
        try:
            import soundfile
        except ImportError:
            raise IoError(
                f"cannot read {path}: FLAC support requires the optional "
                "'soundfile' package"
            )
        data, rate = soundfile.read(str(path), dtype="float64")
        return _to_float_mono(np.asarray(data), path), int(rate)
    raise IoError(f"unsupported audio format: {path}")


def probe_wav(path: str | Path) -> tuple[float, int, int]:
    """Read (duration_s, sample_rate, channels) from a WAV header only."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            riff = fh.read(12)
            if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
                raise IoError(f"not a RIFF/WAVE file: {path}")
            sample_rate = channels = block_align = None
            data_size = None
            while True:
                header = fh.read(8)
                if len(header) < 8:
                    break
                chunk_id, size = header[:4], struct.unpack("<I", header[4:])[0]
                if chunk_id == b"fmt ":
                    fmt = fh.read(size)
                    if len(fmt) < 16:
                        raise IoError(f"truncated fmt chunk: {path}")
                    channels, sample_rate = struct.unpack("<HI", fmt[2:8])
                    block_align = struct.unpack("<H", fmt[12:14])[0]
                elif chunk_id == b"data":
                    data_size = size
                    fh.seek(size + (size & 1), 1)
                else:
                    fh.seek(size + (size & 1), 1)
            if sample_rate is None or data_size is None or not block_align:
                raise IoError(f"missing fmt or data chunk: {path}")
            frames = data_size // block_align
            return frames / sample_rate, sample_rate, channels
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}")


def probe_audio(path: str | Path) -> tuple[float, int, int]:
    """Header-level (duration_s, sample_rate, channels); full read as fallback."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return probe_wav(path)
    x, rate = read_audio(path)
    return len(x) / rate, rate, 1


def write_wav(path: str | Path, waveform: np.ndarray, sample_rate: int,
              bits: int = 16) -> None:
    """Write a mono waveform in [-1, 1] as PCM-16 or float32 WAV."""
    waveform = np.asarray(waveform, dtype=np.float64)
    if bits == 16:
        clipped = np.clip(waveform, -1.0, 1.0 - 2.0**-15)
        data = np.round(clipped * 2.0**15).astype(np.int16)
    elif bits == 32:
        data = waveform.astype(np.float32)
    else:
        raise IoError(f"unsupported bit depth: {bits}")
    wavfile.write(str(path), int(sample_rate), data)
