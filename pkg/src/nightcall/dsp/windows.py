"""Sliding-window tiling of recordings and annotation rasterization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nightcall.dataset.types import AnnotationBox
from nightcall.dsp.config import DspConfig
from nightcall.dsp.geometry import GeometryMap, PixelBox
from nightcall.dsp.spectrogram import window_image
from nightcall.errors import IoError, ValidationError

_CACHE_SCHEMA = "1"


@dataclass(frozen=True)
class SpectrogramWindow:
    """One model input: a normalized image plus its placement in time."""

    image: np.ndarray  # float32, (freq_px, window_frames)
    start_frame: int
    t0: float  # seconds of the window's first sample in the source file
    source: str


@dataclass(frozen=True)
class WindowBoxes:
    """Annotation boxes of one window, split by visibility.

    `ignore` holds boxes whose visible time fraction fell below the
    configured floor; they are kept so training can avoid sampling them
    as negatives, but they carry no positive label.
    """

    boxes: list[PixelBox] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    ignore: list[PixelBox] = field(default_factory=list)


def tile_starts(total_frames: int, window_frames: int, stride: int) -> list[int]:
    """Frame offsets of the window tiling.

    Windows step by `stride` frames; the final window is right-aligned
    at total_frames - window_frames so every frame of the recording is
    covered. Recordings at most one window long yield a single start.
    """
    if stride <= 0:
        raise ValidationError(f"stride must be positive, got {stride}")
    if total_frames <= window_frames:
        return [0]
    last = total_frames - window_frames
    starts = list(range(0, last, stride))
    starts.append(last)
    return starts


def tile_windows(
    wave: np.ndarray,
    cfg: DspConfig,
    source: str,
    geom: GeometryMap | None = None,
) -> list[SpectrogramWindow]:
    """Cut a waveform (already at cfg.sample_rate) into model inputs."""
    geom = geom or GeometryMap(cfg)
    total = cfg.n_frames(len(wave))
    out = []
    for start in tile_starts(total, cfg.window_frames, cfg.window_stride):
        s0 = start * cfg.hop
        img = window_image(wave, s0, cfg, geom)
        out.append(
            SpectrogramWindow(
                image=img,
                start_frame=start,
                t0=s0 / cfg.sample_rate,
                source=source,
            )
        )
    return out


def annotation_to_pixels(
    ann: AnnotationBox, geom: GeometryMap, t0: float
) -> PixelBox | None:
    """Unclipped pixel box of an annotation relative to a window at t0.

    Returns None when the box cannot be represented (out of band or
    degenerate after conversion), not when it is merely off-screen.
    """
    x0 = geom.sec_to_px(ann.t_start, t0)
    x1 = geom.sec_to_px(ann.t_end, t0)
    y0 = geom.hz_to_px(ann.f_low)
    y1 = geom.hz_to_px(ann.f_high)
    if x0 >= x1 or y0 >= y1:
        return None
    return PixelBox(x0, y0, x1, y1)


def window_boxes(
    annotations: list[AnnotationBox],
    geom: GeometryMap,
    t0: float,
    cfg: DspConfig | None = None,
) -> WindowBoxes:
    """Clip annotations into one window, sorting by visibility.

    An annotation whose time extent overlaps the window by at least
    cfg.min_visibility of its own duration becomes a labeled box; a
    smaller positive overlap becomes an ignore region; no overlap, or a
    band collapse during clipping, drops it.
    """
    cfg = cfg or geom.cfg
    width = float(cfg.window_frames)
    height = float(cfg.freq_px)
    t_hi = t0 + cfg.window_samples / cfg.sample_rate
    result = WindowBoxes()
    for ann in annotations:
        overlap = min(ann.t_end, t_hi) - max(ann.t_start, t0)
        if overlap <= 0:
            continue
        raw = annotation_to_pixels(ann, geom, t0)
        if raw is None:
            continue
        clipped = raw.clip(width, height)
        if clipped is None:
            continue
        if overlap / ann.duration >= cfg.min_visibility:
            result.boxes.append(clipped)
            result.labels.append(ann.species_id)
        else:
            result.ignore.append(clipped)
    return result


def save_windows_npz(
    windows: list[SpectrogramWindow], path: str | Path, cfg: DspConfig
) -> None:
    """Cache a window list; the front-end config is stored for validation."""
    if not windows:
        raise ValidationError("refusing to cache an empty window list")
    np.savez_compressed(
        path,
        schema=np.str_(_CACHE_SCHEMA),
        cfg=np.str_(json.dumps(cfg.to_json(), sort_keys=True)),
        images=np.stack([w.image for w in windows]),
        start_frames=np.array([w.start_frame for w in windows], dtype=np.int64),
        t0s=np.array([w.t0 for w in windows], dtype=np.float64),
        sources=np.array([w.source for w in windows]),
    )


def load_windows_npz(
    path: str | Path, cfg: DspConfig | None = None
) -> list[SpectrogramWindow]:
    """Load a window cache, rejecting schema or config mismatches."""
    try:
        with np.load(path, allow_pickle=False) as doc:
            if str(doc["schema"]) != _CACHE_SCHEMA:
                raise ValidationError(
                    f"window cache schema {doc['schema']} != {_CACHE_SCHEMA}"
                )
            if cfg is not None:
                stored = json.loads(str(doc["cfg"]))
                if stored != cfg.to_json():
                    raise ValidationError(
                        "window cache was built with a different front-end config"
                    )
            images = doc["images"]
            starts = doc["start_frames"]
            t0s = doc["t0s"]
            sources = doc["sources"]
    except OSError as exc:
        raise IoError(f"cannot read window cache {path}: {exc}")
    return [
        SpectrogramWindow(
            image=images[i],
            start_frame=int(starts[i]),
            t0=float(t0s[i]),
            source=str(sources[i]),
        )
        for i in range(images.shape[0])
    ]
