"""Sliding-window inference: tile a recording, run the detector, reduce
window outputs to deduplicated physical detections.

Pixel boxes leave this module converted to seconds and Hz, so nothing
downstream depends on the DSP configuration. Suppression happens twice:
per window per class right after decoding, then across overlapping
windows where the same call is seen twice.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from nightcall.audio import read_audio
from nightcall.dataset.vocab import SpeciesVocab
from nightcall.dsp.geometry import GeometryMap
from nightcall.dsp.spectrogram import resample_to
from nightcall.dsp.windows import tile_windows
from nightcall.errors import ConfigError, IoError, ParseError, ValidationError
from nightcall.model.detector import Detector
from nightcall.model.train import Checkpoint

MULTILABEL_WINDOW_S = 3.0


@dataclass(frozen=True)
class Detection:
    """One detected call, physically referenced in its recording."""

    t_start: float
    t_end: float
    f_low: float
    f_high: float
    species_id: int
    confidence: float
    window_index: int = 0

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValidationError(
                f"t_start must be < t_end, got [{self.t_start}, {self.t_end}]"
            )
        if not self.f_low < self.f_high:
            raise ValidationError(
                f"f_low must be < f_high, got [{self.f_low}, {self.f_high}]"
            )
        if not 0 < self.confidence <= 1:
            raise ValidationError(
                f"confidence must be in (0, 1], got {self.confidence}"
            )


@dataclass(frozen=True)
class WindowLabelSet:
    """Per-window multi-label casting: max confidence per species."""

    window_t0: float
    duration: float
    confidences: dict[int, float]


def iou_tf(a, b) -> float:
    """Time-frequency IoU of two boxes (any objects with t_start, t_end,
    f_low, f_high). Degenerate boxes give 0."""
    area_a = (a.t_end - a.t_start) * (a.f_high - a.f_low)
    area_b = (b.t_end - b.t_start) * (b.f_high - b.f_low)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    dt = min(a.t_end, b.t_end) - max(a.t_start, b.t_start)
    df = min(a.f_high, b.f_high) - max(a.f_low, b.f_low)
    inter = max(0.0, dt) * max(0.0, df)
    return inter / (area_a + area_b - inter)


def nms_detections(
    detections: list[Detection], iou_threshold: float
) -> list[Detection]:
    """Greedy per-class suppression in physical space.

    Candidates are visited by (confidence desc, t_start, f_low, t_end,
    f_high), so the survivor set does not depend on input order, and
    applying the function twice changes nothing.
    """
    order = sorted(
        range(len(detections)),
        key=lambda i: (
            -detections[i].confidence,
            detections[i].t_start,
            detections[i].f_low,
            detections[i].t_end,
            detections[i].f_high,
        ),
    )
    kept: list[Detection] = []
    for i in order:
        det = detections[i]
        if any(
            k.species_id == det.species_id and iou_tf(k, det) > iou_threshold
            for k in kept
        ):
            continue
        kept.append(det)
    return kept


def _decode_window(
    result: dict[str, torch.Tensor], geom: GeometryMap, t0: float, index: int
) -> list[Detection]:
    out = []
    boxes = result["boxes"].tolist()
    scores = result["scores"].tolist()
    labels = result["labels"].tolist()
    for (x0, y0, x1, y1), score, label in zip(boxes, scores, labels):
        t_lo = geom.px_to_sec(x0, t0)
        t_hi = geom.px_to_sec(x1, t0)
        f_lo = geom.px_to_hz(y0)
        f_hi = geom.px_to_hz(y1)
        if t_hi <= t_lo or f_hi <= f_lo:
            continue
        out.append(
            Detection(
                t_start=max(0.0, t_lo),
                t_end=t_hi,
                f_low=max(0.0, f_lo),
                f_high=f_hi,
                species_id=int(label),
                confidence=min(1.0, float(score)),
                window_index=index,
            )
        )
    return out


def resolve_scope(
    vocab: SpeciesVocab, species: list[str] | None
) -> list[int] | None:
    """Species codes -> ids against a checkpoint's vocabulary.

    A requested code the checkpoint never learned is a configuration
    error, not an empty result.
    """
    if species is None:
        return None
    ids = []
    for code in species:
        if not vocab.contains_code(code):
            raise ConfigError(
                f"species {code!r} not in the checkpoint vocabulary "
                f"({', '.join(c for _, _, c in vocab)})"
            )
        ids.append(vocab.id_of(code))
    return ids


def detect_file(
    path: str | Path,
    checkpoint: Checkpoint,
    detector: Detector | None = None,
    score_threshold: float | None = None,
    species: list[str] | None = None,
    merge_iou: float = 0.5,
    batch: int = 4,
) -> list[Detection]:
    """All detections of one recording, sorted by start time.

    Pipeline: tile -> forward -> decode to physical units -> per-window
    NMS -> cross-window merge (same class, IoU above merge_iou keeps the
    higher confidence) -> optional species scope filter.
    """
    dsp_cfg = checkpoint.dsp_config
    model_cfg = checkpoint.model_config
    scope = resolve_scope(checkpoint.vocab, species)
    if detector is None:
        detector = checkpoint.build_detector()
    detector.eval()
    geom = GeometryMap(dsp_cfg)
    wave, rate = read_audio(path)
    wave = resample_to(wave, rate, dsp_cfg.sample_rate, dsp_cfg.resample_beta)
    windows = tile_windows(wave, dsp_cfg, source=str(path), geom=geom)

    detections: list[Detection] = []
    for lo in range(0, len(windows), batch):
        group = windows[lo : lo + batch]
        images = torch.from_numpy(np.stack([w.image for w in group])).unsqueeze(1)
        results = detector.forward_test(images, score_threshold=score_threshold)
        for offset, result in enumerate(results):
            index = lo + offset
            raw = _decode_window(result, geom, group[offset].t0, index)
            detections.extend(nms_detections(raw, model_cfg.nms_iou))
    merged = nms_detections(detections, merge_iou)
    if scope is not None:
        merged = [d for d in merged if d.species_id in scope]
    return sorted(
        merged,
        key=lambda d: (d.t_start, d.f_low, d.species_id, -d.confidence),
    )


def to_multilabel(
    detections: list[Detection],
    duration: float,
    window_s: float = MULTILABEL_WINDOW_S,
) -> list[WindowLabelSet]:
    """Cast detections onto a fixed window grid aligned to t = 0.

    A detection contributes to every window its time span intersects;
    each window keeps the maximum confidence per species. The grid
    covers the full recording, so trailing silence yields empty sets.
    """
    if duration <= 0:
        raise ValidationError(f"duration must be positive, got {duration}")
    n_windows = max(1, math.ceil(duration / window_s))
    confidences: list[dict[int, float]] = [{} for _ in range(n_windows)]
    for det in detections:
        first = max(0, math.floor(det.t_start / window_s))
        last = min(n_windows - 1, math.ceil(det.t_end / window_s) - 1)
        for k in range(first, last + 1):
            seen = confidences[k].get(det.species_id, 0.0)
            if det.confidence > seen:
                confidences[k][det.species_id] = det.confidence
    return [
        WindowLabelSet(window_t0=k * window_s, duration=window_s, confidences=c)
        for k, c in enumerate(confidences)
    ]


CSV_HEADER = ["file", "t_start", "t_end", "f_low", "f_high", "species_code", "confidence"]


def write_detections_csv(
    path: str | Path,
    detections_by_file: dict[str, list[Detection]],
    vocab: SpeciesVocab,
) -> None:
    """Fixed-point CSV, 6 decimals, one row per detection.

    Files are emitted in sorted order; files with no detections leave no
    rows (their presence is recorded by the caller's manifest, not the
    CSV).
    """
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for file in sorted(detections_by_file):
                for d in detections_by_file[file]:
                    writer.writerow(
                        [
                            file,
                            f"{d.t_start:.6f}",
                            f"{d.t_end:.6f}",
                            f"{d.f_low:.6f}",
                            f"{d.f_high:.6f}",
                            vocab.code_of(d.species_id),
                            f"{d.confidence:.6f}",
                        ]
                    )
    except OSError as exc:
        raise IoError(f"cannot write detections to {path}: {exc}")


def read_detections_csv(
    path: str | Path, vocab: SpeciesVocab
) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ParseError(f"unexpected detection CSV header: {header}", line=1)
            for n, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(CSV_HEADER):
                    raise ParseError(
                        f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=n
                    )
                file, t0, t1, f0, f1, code, conf = row
                try:
                    det = Detection(
                        float(t0), float(t1), float(f0), float(f1),
                        vocab.id_of(code), float(conf),
                    )
                except ValueError as exc:
                    raise ParseError(str(exc), line=n)
                out.setdefault(file, []).append(det)
    except OSError as exc:
        raise IoError(f"cannot read detections from {path}: {exc}")
    return out


def write_detections_jsonl(
    path: str | Path,
    detections_by_file: dict[str, list[Detection]],
    vocab: SpeciesVocab,
) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for file in sorted(detections_by_file):
                for d in detections_by_file[file]:
                    fh.write(
                        json.dumps(
                            {
                                "file": file,
                                "t_start": d.t_start,
                                "t_end": d.t_end,
                                "f_low": d.f_low,
                                "f_high": d.f_high,
                                "species_code": vocab.code_of(d.species_id),
                                "confidence": d.confidence,
                                "window_index": d.window_index,
                            }
                        )
                        + "\n"
                    )
    except OSError as exc:
        raise IoError(f"cannot write detections to {path}: {exc}")


def read_detections_jsonl(
    path: str | Path, vocab: SpeciesVocab
) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    det = Detection(
                        doc["t_start"], doc["t_end"], doc["f_low"], doc["f_high"],
                        vocab.id_of(doc["species_code"]), doc["confidence"],
                        doc.get("window_index", 0),
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"bad detection record: {exc}", line=n)
                out.setdefault(doc["file"], []).append(det)
    except OSError as exc:
        raise IoError(f"cannot read detections from {path}: {exc}")
    return out
