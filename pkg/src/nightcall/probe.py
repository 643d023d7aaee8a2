"""Posterior-frequency probe.

The detection head sees each RoI's frequency position only through its
positional encoding. Holding one pooled call fixed and sweeping that
encoding over a frequency grid yields p(c | f); inverting with a uniform
prior over the grid gives p(f | c), the frequency band the model has
associated with the class. Comparing the peak of that posterior with the
peak of the training-set frequency histogram shows whether the encoding
carries real information.

All probe entry points are read-only: weights are never touched.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from nightcall.audio import read_audio
from nightcall.dataset.types import AnnotationBox, DatasetManifest, Split
from nightcall.dsp.geometry import GeometryMap
from nightcall.dsp.spectrogram import resample_to, window_image
from nightcall.dsp.windows import annotation_to_pixels
from nightcall.errors import DegenerateError, IoError, ValidationError
from nightcall.model.detector import Detector
from nightcall.model.train import Checkpoint

logger = logging.getLogger(__name__)

PROBE_SCHEMA = "1"
GRID_SIZE = 64


@dataclass
class PosteriorCurve:
    """Learned p(f|c) of one species next to its training distribution.

    Both curves live on the same frequency grid and each sums to 1.
    """

    species_id: int
    freqs_hz: list[float]
    posterior: list[float]
    train_hist: list[float]
    n_calls: int = 0

    def __post_init__(self) -> None:
        if not (
            len(self.freqs_hz) == len(self.posterior) == len(self.train_hist)
        ):
            raise ValidationError("curve grids differ in length")
        for name, curve in (("posterior", self.posterior), ("train_hist", self.train_hist)):
            if abs(sum(curve) - 1.0) > 1e-6:
                raise ValidationError(f"{name} does not sum to 1")

    def peak_offset(self) -> int:
        """Grid bins between the posterior peak and the histogram peak."""
        return abs(
            int(np.argmax(self.posterior)) - int(np.argmax(self.train_hist))
        )


def probe_grid(
    geom: GeometryMap, freq_px: int, n: int = GRID_SIZE
) -> tuple[np.ndarray, np.ndarray]:
    """n pixel rows uniform over the image band, with their frequencies."""
    if n < 2:
        raise ValidationError(f"grid needs at least 2 points, got {n}")
    rows = np.linspace(0.0, freq_px - 1.0, n)
    freqs = np.array([geom.px_to_hz(r) for r in rows])
    return rows, freqs


def sweep_frequency_encoding(
    detector: Detector,
    pooled: torch.Tensor,
    box: torch.Tensor,
    species_id: int,
    rows: np.ndarray,
) -> np.ndarray:
    """p(c|f): class softmax of one pooled RoI as only the frequency
    center of its positional encoding sweeps the grid.

    pooled is (1, C, roi_h, roi_w) from Detector.roi_features; box is the
    RoI's real pixel box, kept fixed so height and the time encoding do
    not move.
    """
    head = detector.head
    rows_t = torch.as_tensor(np.asarray(rows), dtype=torch.float32)
    n = rows_t.shape[0]
    boxes = box.to(torch.float32).reshape(1, 4).expand(n, 4)
    with torch.no_grad():
        pe_raw = head.pe.raw(boxes, freq_center=rows_t)
        logits, _ = head.forward_with_raw_pe(pooled.expand(n, -1, -1, -1), pe_raw)
        probs = torch.softmax(logits, dim=1)[:, species_id]
    return probs.double().numpy()


def posterior_from_bayes(p_c_given_f) -> np.ndarray:
    """p(f|c) from p(c|f) under a uniform prior over the grid.

    With p(f) constant, Bayes reduces to dividing by the sum over the
    grid.
    """
    curve = np.asarray(p_c_given_f, dtype=np.float64)
    if curve.ndim != 1 or curve.size == 0:
        raise ValidationError("p(c|f) must be a non-empty 1-d curve")
    if (curve < 0).any():
        raise ValidationError("p(c|f) has negative entries")
    total = float(curve.sum())
    if total <= 0.0:
        raise DegenerateError("p(c|f) is zero everywhere; posterior undefined")
    return curve / total


def _hist_on_grid(
    annotations: list[AnnotationBox], geom: GeometryMap, rows: np.ndarray
) -> np.ndarray | None:
    """Annotation center frequencies counted into the nearest grid row."""
    if not annotations:
        return None
    spacing = rows[1] - rows[0]
    counts = np.zeros(len(rows))
    for ann in annotations:
        center_hz = 0.5 * (ann.f_low + ann.f_high)
        row = geom.hz_to_px(center_hz)
        idx = int(np.clip(round(row / spacing), 0, len(rows) - 1))
        counts[idx] += 1
    return counts / counts.sum()


def _call_window(
    wave: np.ndarray, ann: AnnotationBox, geom: GeometryMap
) -> tuple[np.ndarray, float]:
    """Window image centered on a call, with the window's start time."""
    cfg = geom.cfg
    n_frames = cfg.n_frames(len(wave))
    center_frame = geom.sec_to_px(0.5 * (ann.t_start + ann.t_end))
    start = round(center_frame - cfg.window_frames / 2)
    start = max(0, min(start, max(0, n_frames - cfg.window_frames)))
    image = window_image(wave, start * cfg.hop, cfg, geom)
    return image, start * cfg.hop / cfg.sample_rate


def aggregate_probe(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    root: str | Path,
    scope: list[int] | None = None,
    grid_size: int = GRID_SIZE,
    detector: Detector | None = None,
) -> list[PosteriorCurve]:
    """Average p(f|c) over every test call of each species in scope.

    Species without usable test calls or without training annotations
    are skipped with a warning, not scored. The returned curves pair the
    averaged posterior with the training-set center-frequency histogram
    on the same grid.
    """
    detector = detector or checkpoint.build_detector()
    detector.eval()
    dsp_cfg = checkpoint.dsp_config
    geom = GeometryMap(dsp_cfg)
    rows, freqs = probe_grid(geom, dsp_cfg.freq_px, grid_size)
    root = Path(root)
    scope = sorted(scope) if scope is not None else list(range(len(checkpoint.vocab)))

    test_files = [r.path for r in manifest.recordings_in(Split.TEST)]
    train_anns = [
        a
        for r in manifest.recordings_in(Split.TRAIN)
        for a in manifest.annotations_of(r.path)
    ]

    wave_cache: dict[str, np.ndarray] = {}

    def wave_of(path: str) -> np.ndarray:
        if path not in wave_cache:
            raw, rate = read_audio(root / path)
            wave_cache[path] = resample_to(raw, rate, dsp_cfg.sample_rate)
        return wave_cache[path]

    curves = []
    for species in scope:
        hist = _hist_on_grid(
            [a for a in train_anns if a.species_id == species], geom, rows
        )
        if hist is None:
            logger.warning(
                "species %s has no training annotations; probe skipped",
                checkpoint.vocab.code_of(species),
            )
            continue
        total = np.zeros(grid_size)
        n_calls = 0
        for file in test_files:
            for ann in manifest.annotations_of(file):
                if ann.species_id != species:
                    continue
                image, t0 = _call_window(wave_of(file), ann, geom)
                box = annotation_to_pixels(ann, geom, t0)
                if box is None:
                    continue
                x0 = max(0.0, box.x0)
                y0 = max(0.0, box.y0)
                x1 = min(float(dsp_cfg.window_frames), box.x1)
                y1 = min(float(dsp_cfg.freq_px), box.y1)
                if x1 - x0 <= 1e-3 or y1 - y0 <= 1e-3:
                    continue
                img_t = torch.from_numpy(image).to(torch.float32)[None, None]
                box_t = torch.tensor([x0, y0, x1, y1])
                with torch.no_grad():
                    pooled = detector.roi_features(img_t, box_t[None])
                p_cf = sweep_frequency_encoding(
                    detector, pooled, box_t, species, rows
                )
                try:
                    total += posterior_from_bayes(p_cf)
                except DegenerateError:
                    logger.warning(
                        "call at %.2fs in %s gives a zero curve; skipped",
                        ann.t_start,
                        file,
                    )
                    continue
                n_calls += 1
        if n_calls == 0:
            logger.warning(
                "species %s has no usable test calls; probe skipped",
                checkpoint.vocab.code_of(species),
            )
            continue
        curves.append(
            PosteriorCurve(
                species_id=species,
                freqs_hz=[float(f) for f in freqs],
                posterior=[float(v) for v in total / n_calls],
                train_hist=[float(v) for v in hist],
                n_calls=n_calls,
            )
        )
    return curves


def write_probe(
    curves: list[PosteriorCurve],
    codes: dict[int, str],
    out_dir: str | Path,
    plots: bool = True,
) -> dict[str, Path]:
    """probe.json plus one posterior-vs-histogram SVG per species."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema": PROBE_SCHEMA,
        "curves": [
            {
                "species_id": c.species_id,
                "code": codes.get(c.species_id, str(c.species_id)),
                "freqs_hz": c.freqs_hz,
                "posterior": c.posterior,
                "train_hist": c.train_hist,
                "n_calls": c.n_calls,
                "peak_offset": c.peak_offset(),
            }
            for c in curves
        ],
    }
    paths: dict[str, Path] = {}
    json_path = out_dir / "probe.json"
    try:
        json_path.write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write {json_path}: {exc}")
    paths["json"] = json_path
    if not plots:
        return paths
    for c in curves:
        code = codes.get(c.species_id, str(c.species_id))
        svg_path = out_dir / f"probe_{code}.svg"
        svg_path.write_text(_overlay_svg(code, c), encoding="utf-8")
        paths[f"svg_{c.species_id}"] = svg_path
    return paths


def read_probe(path: str | Path) -> list[PosteriorCurve]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}")
    if doc.get("schema") != PROBE_SCHEMA:
        raise ValidationError(
            f"probe schema {doc.get('schema')!r} != {PROBE_SCHEMA!r}"
        )
    return [
        PosteriorCurve(
            species_id=c["species_id"],
            freqs_hz=c["freqs_hz"],
            posterior=c["posterior"],
            train_hist=c["train_hist"],
            n_calls=c["n_calls"],
        )
        for c in doc["curves"]
    ]


def _overlay_svg(code: str, curve: PosteriorCurve) -> str:
    """Posterior line over training-histogram steps, peak-normalized so
    both shapes are readable regardless of bin count."""
    width, height, margin = 420, 240, 40
    span_w = width - 2 * margin
    span_h = height - 2 * margin
    f_lo, f_hi = curve.freqs_hz[0], curve.freqs_hz[-1]

    def sx(f: float) -> float:
        return margin + (f - f_lo) / (f_hi - f_lo) * span_w

    def sy(v: float, peak: float) -> float:
        scaled = v / peak if peak > 0 else 0.0
        return height - margin - scaled * span_h

    def polyline(values: list[float]) -> str:
        peak = max(values)
        return " ".join(
            f"{sx(f):.1f},{sy(v, peak):.1f}"
            for f, v in zip(curve.freqs_hz, values)
        )

    ticks = []
    for frac in (0.0, 0.5, 1.0):
        f = f_lo + frac * (f_hi - f_lo)
        x = sx(f)
        ticks.append(
            f'<text x="{x:.0f}" y="{height - margin + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="9">{f / 1000:.1f} kHz</text>'
        )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<rect x="{margin}" y="{margin}" width="{span_w}" height="{span_h}" '
        f'fill="none" stroke="#999"/>'
        f'<polyline points="{polyline(curve.train_hist)}" fill="none" '
        f'stroke="#d4a017" stroke-width="1.2"/>'
        f'<polyline points="{polyline(curve.posterior)}" fill="none" '
        f'stroke="#1f6feb" stroke-width="1.5"/>'
        f'<text x="{width / 2:.0f}" y="16" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{code}: learned p(f|c) (blue) '
        f'vs training distribution (gold)</text>'
        f"{''.join(ticks)}"
        f"</svg>"
    )
