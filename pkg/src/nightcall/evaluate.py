"""Detection and multi-label scoring against annotated ground truth.

IoU is computed in seconds x Hz, never pixels, so scores do not depend
on the spectrogram configuration. Average precision uses all-point
interpolation with tied scores consumed as one block: the PR curve is
sampled at score thresholds, which makes AP independent of the input
order of equal-confidence items and gives a constant ranker an AP equal
to the positive prevalence.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from nightcall.dataset.types import AnnotationBox, DatasetManifest, Split
from nightcall.errors import IoError, ValidationError
from nightcall.infer import MULTILABEL_WINDOW_S, Detection, WindowLabelSet, iou_tf

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "1"

iou = iou_tf  # evaluation and inference share one IoU definition


@dataclass(frozen=True)
class MatchResult:
    """Outcome of one detection under the single-match rule."""

    detection_index: int
    annotation_index: int | None
    iou: float
    is_tp: bool


def match_detections(
    detections: list[Detection],
    annotations: list[AnnotationBox],
    iou_threshold: float = 0.5,
) -> list[MatchResult]:
    """Greedy matching for one species within one recording.

    Detections are visited by descending confidence (ties: t_start,
    f_low, input order); each claims the unmatched annotation with the
    highest IoU at or above the threshold. An annotation matches at most
    once; later detections on it are false positives.
    """
    order = sorted(
        range(len(detections)),
        key=lambda i: (
            -detections[i].confidence,
            detections[i].t_start,
            detections[i].f_low,
            i,
        ),
    )
    taken = [False] * len(annotations)
    results = []
    for i in order:
        det = detections[i]
        best_iou = 0.0
        best_j = None
        for j, ann in enumerate(annotations):
            if taken[j]:
                continue
            value = iou_tf(det, ann)
            if value >= iou_threshold and value > best_iou:
                best_iou = value
                best_j = j
        if best_j is not None:
            taken[best_j] = True
            results.append(MatchResult(i, best_j, best_iou, True))
        else:
            results.append(MatchResult(i, None, 0.0, False))
    return sorted(results, key=lambda r: r.detection_index)


def average_precision(
    scores: list[float], is_tp: list[bool], n_gt: int
) -> float | None:
    """All-point interpolated AP from scored predictions.

    Tied scores are consumed together (the curve is sampled at score
    thresholds), so equal-confidence predictions cannot reorder the
    result. Returns None when there are no ground-truth positives: AP is
    undefined there, and the species is excluded from mAP by callers.
    """
    if len(scores) != len(is_tp):
        raise ValidationError("scores and labels differ in length")
    if n_gt < sum(is_tp):
        raise ValidationError("more true positives than ground truths")
    if n_gt == 0:
        return None
    if not scores:
        return 0.0
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    recalls = []
    precisions = []
    tp = 0
    for rank, i in enumerate(order, start=1):
        tp += bool(is_tp[i])
        last_of_block = rank == len(order) or scores[order[rank]] != scores[i]
        if last_of_block:
            recalls.append(tp / n_gt)
            precisions.append(tp / rank)
    # precision envelope: best precision at any recall >= r
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recalls, precisions):
        ap += (r - prev_recall) * p
        prev_recall = r
    return ap


@dataclass
class EvalReport:
    """Scores of one evaluation run, serializable and renderable."""

    scope: list[int]
    codes: dict[int, str]
    detection_ap: dict[int, float | None] = field(default_factory=dict)
    multilabel_ap: dict[int, float | None] = field(default_factory=dict)
    detection_map: float | None = None
    multilabel_map: float | None = None
    pr_curves: dict[int, dict[str, list[float]]] = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)
    config_digest: str = ""
    metadata: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def to_json(self) -> dict:
        return {
            "schema": self.schema,
            "scope": self.scope,
            "codes": {str(k): v for k, v in self.codes.items()},
            "detection_ap": {str(k): v for k, v in self.detection_ap.items()},
            "multilabel_ap": {str(k): v for k, v in self.multilabel_ap.items()},
            "detection_map": self.detection_map,
            "multilabel_map": self.multilabel_map,
            "pr_curves": {str(k): v for k, v in self.pr_curves.items()},
            "excluded": self.excluded,
            "config_digest": self.config_digest,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        if doc.get("schema") != REPORT_SCHEMA:
            raise ValidationError(
                f"report schema {doc.get('schema')!r} != {REPORT_SCHEMA!r}"
            )
        return cls(
            scope=list(doc["scope"]),
            codes={int(k): v for k, v in doc["codes"].items()},
            detection_ap={int(k): v for k, v in doc["detection_ap"].items()},
            multilabel_ap={int(k): v for k, v in doc["multilabel_ap"].items()},
            detection_map=doc["detection_map"],
            multilabel_map=doc["multilabel_map"],
            pr_curves={int(k): v for k, v in doc["pr_curves"].items()},
            excluded=list(doc["excluded"]),
            config_digest=doc["config_digest"],
            metadata=dict(doc["metadata"]),
        )


def _mean_ap(per_species: dict[int, float | None]) -> float | None:
    values = [v for v in per_species.values() if v is not None]
    if not values:
        return None
    return sum(values) / len(values)


def eval_detection(
    detections_by_file: dict[str, list[Detection]],
    manifest: DatasetManifest,
    scope: list[int] | None = None,
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Per-species AP and mAP at the given IoU threshold.

    Every key of detections_by_file must be a manifest recording; files
    that were processed but yielded nothing must still appear (with an
    empty list) so their annotations count as misses. Species with zero
    ground-truth annotations in the evaluated files are reported as
    excluded, not scored 0.
    """
    for file in detections_by_file:
        try:
            manifest.recording(file)
        except KeyError:
            raise ValidationError(f"detections reference unknown recording {file!r}")
    scope = sorted(scope) if scope is not None else list(range(len(manifest.vocab)))
    files = sorted(detections_by_file)
    report = EvalReport(
        scope=scope,
        codes={s: manifest.vocab.code_of(s) for s in scope},
        metadata={
            "kind": "detection",
            "iou_threshold": iou_threshold,
            "ap_interpolation": "all-point, ties pooled per score threshold",
            "files": len(files),
        },
    )
    for species in scope:
        scores: list[float] = []
        labels: list[bool] = []
        n_gt = 0
        for file in files:
            dets = [
                d for d in detections_by_file[file] if d.species_id == species
            ]
            gts = [
                a for a in manifest.annotations_of(file) if a.species_id == species
            ]
            n_gt += len(gts)
            for match in match_detections(dets, gts, iou_threshold):
                scores.append(dets[match.detection_index].confidence)
                labels.append(match.is_tp)
        ap = average_precision(scores, labels, n_gt)
        report.detection_ap[species] = ap
        if ap is None:
            report.excluded.append(species)
            logger.warning(
                "species %s has no ground truth in the evaluated files; "
                "excluded from mAP",
                manifest.vocab.code_of(species),
            )
        report.pr_curves[species] = _pr_points(scores, labels, n_gt)
    report.detection_map = _mean_ap(report.detection_ap)
    return report


def _pr_points(
    scores: list[float], labels: list[bool], n_gt: int
) -> dict[str, list[float]]:
    if n_gt == 0 or not scores:
        return {"recall": [], "precision": []}
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    recall, precision = [], []
    tp = 0
    for rank, i in enumerate(order, start=1):
        tp += bool(labels[i])
        if rank == len(order) or scores[order[rank]] != scores[i]:
            recall.append(tp / n_gt)
            precision.append(tp / rank)
    return {"recall": recall, "precision": precision}


def multilabel_truth(
    manifest: DatasetManifest,
    file: str,
    window_s: float = MULTILABEL_WINDOW_S,
) -> list[WindowLabelSet]:
    """Ground-truth presence on the same grid the inference casting uses.

    Presence means any annotation of the species intersects the window;
    confidence 1.0 marks presence.
    """
    rec = manifest.recording(file)
    n_windows = max(1, math.ceil(rec.duration / window_s))
    sets = []
    annotations = manifest.annotations_of(file)
    for k in range(n_windows):
        t0 = k * window_s
        t1 = t0 + window_s
        present = {
            a.species_id: 1.0
            for a in annotations
            if a.t_start < t1 and a.t_end > t0
        }
        sets.append(WindowLabelSet(window_t0=t0, duration=window_s, confidences=present))
    return sets


def eval_multilabel(
    predicted_by_file: dict[str, list[WindowLabelSet]],
    manifest: DatasetManifest,
    scope: list[int] | None = None,
    window_s: float = MULTILABEL_WINDOW_S,
) -> EvalReport:
    """Per-species AP over (window, species) presence decisions.

    Windows without a prediction entry for a species rank at confidence
    0. Prediction grids must line up exactly with the grids derived from
    the manifest durations.
    """
    scope = sorted(scope) if scope is not None else list(range(len(manifest.vocab)))
    files = sorted(predicted_by_file)
    truth_by_file = {}
    for file in files:
        try:
            truth = multilabel_truth(manifest, file, window_s)
        except KeyError:
            raise ValidationError(f"predictions reference unknown recording {file!r}")
        pred = predicted_by_file[file]
        if len(pred) != len(truth) or any(
            abs(p.window_t0 - t.window_t0) > 1e-9 or abs(p.duration - t.duration) > 1e-9
            for p, t in zip(pred, truth)
        ):
            raise ValidationError(
                f"window grid of {file!r} does not match its duration: "
                f"{len(pred)} predicted windows vs {len(truth)} expected"
            )
        truth_by_file[file] = truth
    report = EvalReport(
        scope=scope,
        codes={s: manifest.vocab.code_of(s) for s in scope},
        metadata={
            "kind": "multilabel",
            "window_s": window_s,
            "ap_interpolation": "all-point, ties pooled per score threshold",
            "files": len(files),
        },
    )
    for species in scope:
        scores: list[float] = []
        labels: list[bool] = []
        n_pos = 0
        for file in files:
            for pred, truth in zip(predicted_by_file[file], truth_by_file[file]):
                present = species in truth.confidences
                n_pos += present
                scores.append(pred.confidences.get(species, 0.0))
                labels.append(present)
        ap = average_precision(scores, labels, n_pos)
        report.multilabel_ap[species] = ap
        if ap is None:
            report.excluded.append(species)
            logger.warning(
                "species %s never present in the evaluated windows; "
                "excluded from mAP",
                manifest.vocab.code_of(species),
            )
    report.multilabel_map = _mean_ap(report.multilabel_ap)
    return report


def merge_reports(detection: EvalReport, multilabel: EvalReport) -> EvalReport:
    """Combine a detection report and a multilabel report over one scope."""
    if detection.scope != multilabel.scope:
        raise ValidationError("cannot merge reports with different scopes")
    merged = EvalReport(
        scope=detection.scope,
        codes=dict(detection.codes),
        detection_ap=dict(detection.detection_ap),
        multilabel_ap=dict(multilabel.multilabel_ap),
        detection_map=detection.detection_map,
        multilabel_map=multilabel.multilabel_map,
        pr_curves=dict(detection.pr_curves),
        excluded=sorted(set(detection.excluded) | set(multilabel.excluded)),
        config_digest=detection.config_digest or multilabel.config_digest,
        metadata={
            "detection": detection.metadata,
            "multilabel": multilabel.metadata,
        },
    )
    return merged


def _format_ap(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


def render_report(
    report: EvalReport, out_dir: str | Path, plots: bool = True
) -> dict[str, Path]:
    """Write report.json, report.md and one PR-curve SVG per species.

    Returns the paths written. An empty scope produces a valid report
    with a note instead of a table; plots=False skips the SVGs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    json_path = out_dir / "report.json"
    try:
        json_path.write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoError(f"cannot write {json_path}: {exc}")
    paths["json"] = json_path

    lines = ["# Evaluation report", ""]
    if not report.scope:
        lines.append("No species in scope; nothing to score.")
    else:
        header = ["metric"] + [report.codes[s] for s in report.scope] + ["mAP"]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        if report.detection_ap:
            row = ["detection AP"]
            row += [_format_ap(report.detection_ap.get(s)) for s in report.scope]
            row.append(_format_ap(report.detection_map))
            lines.append("| " + " | ".join(row) + " |")
        if report.multilabel_ap:
            row = ["multi-label AP"]
            row += [_format_ap(report.multilabel_ap.get(s)) for s in report.scope]
            row.append(_format_ap(report.multilabel_map))
            lines.append("| " + " | ".join(row) + " |")
        if report.excluded:
            lines.append("")
            codes = ", ".join(report.codes.get(s, str(s)) for s in report.excluded)
            lines.append(f"Excluded from mAP (no ground truth): {codes}")
    if report.config_digest:
        lines.append("")
        lines.append(f"Config digest: `{report.config_digest}`")
    md_path = out_dir / "report.md"
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["md"] = md_path

    if not plots:
        return paths
    for species, curve in report.pr_curves.items():
        if not curve["recall"]:
            continue
        svg = _pr_svg(report.codes.get(species, str(species)), curve)
        svg_path = out_dir / f"pr_{report.codes.get(species, str(species))}.svg"
        svg_path.write_text(svg, encoding="utf-8")
        paths[f"pr_{species}"] = svg_path
    return paths


def _pr_svg(code: str, curve: dict[str, list[float]]) -> str:
    """Render one PR curve without a plotting dependency."""
    width, height, margin = 320, 240, 36
    span_w = width - 2 * margin
    span_h = height - 2 * margin

    def sx(r: float) -> float:
        return margin + r * span_w

    def sy(p: float) -> float:
        return height - margin - p * span_h

    points = [(sx(0.0), sy(curve["precision"][0]))]
    for r, p in zip(curve["recall"], curve["precision"]):
        points.append((sx(r), points[-1][1]))
        points.append((sx(r), sy(p)))
    path = "M " + " L ".join(f"{x:.1f} {y:.1f}" for x, y in points)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<rect x="{margin}" y="{margin}" width="{span_w}" height="{span_h}" '
        f'fill="none" stroke="#999"/>'
        f'<path d="{path}" fill="none" stroke="#1f6feb" stroke-width="1.5"/>'
        f'<text x="{width / 2:.0f}" y="16" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{code} precision-recall</text>'
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="10">recall</text>'
        f'<text x="12" y="{height / 2:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="10" '
        f'transform="rotate(-90 12 {height / 2:.0f})">precision</text>'
        f"</svg>"
    )
