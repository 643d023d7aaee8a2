"""Manifest construction from a label directory tree, plus JSON round-trip.

On-disk layout: ``<root>/<SpeciesCode>/<recording>.wav`` with a sibling
``<recording>.txt`` Audacity label track. Optional ``train/`` and
``test/`` top-level directories assign splits. A ``manifest.json`` at
the root overrides directory walking entirely.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path

from nightcall.audio import probe_audio
from nightcall.dataset.audacity import parse_regions
from nightcall.dataset.types import (
    MANIFEST_SCHEMA_VERSION,
    AnnotationBox,
    DatasetManifest,
    Origin,
    RecordingMeta,
    Split,
)
from nightcall.dataset.vocab import SpeciesVocab
from nightcall.errors import ConflictError, IoError, UnknownSpeciesError, ValidationError

logger = logging.getLogger(__name__)

AUDIO_SUFFIXES = (".wav", ".flac")

# Label text shaped like a species short code ("GrGr"); anything else in
# the label field is treated as free-text annotator noise.
_CODE_SHAPE = re.compile(r"^[A-Z][a-z][A-Z][a-z]$")


def _resolve_species(dir_name: str, label: str, vocab: SpeciesVocab) -> int | None:
    """Species id for a region, or None when the label marks non-target sound.

    Free text that is not shaped like a species code ("rain", "noise")
    is annotator shorthand for sounds outside the vocabulary; those
    regions are skipped rather than inherited from the directory code.
    """
    dir_code = dir_name if vocab.contains_code(dir_name) else None
    label_code = None
    if _CODE_SHAPE.match(label):
        if vocab.contains_code(label):
            label_code = label
        else:
            raise UnknownSpeciesError(label)
    elif label:
        logger.debug("treating free-text label %r as non-target sound", label)
        return None
    if dir_code is not None and label_code is not None and dir_code != label_code:
        raise ConflictError(
            f"directory says {dir_code!r} but label says {label_code!r}"
        )
    if dir_code is not None:
        return vocab.id_of(dir_code)
    if label_code is not None:
        return vocab.id_of(label_code)
    raise UnknownSpeciesError(label if label else dir_name)


def _walk_split(
    split_root: Path,
    root: Path,
    split: Split,
    vocab: SpeciesVocab,
    recordings: list,
    annotations: list,
) -> None:
    for species_dir in sorted(p for p in split_root.iterdir() if p.is_dir()):
        for audio_path in sorted(species_dir.iterdir()):
            if audio_path.suffix.lower() not in AUDIO_SUFFIXES:
                continue
            rel = audio_path.relative_to(root).as_posix()
            duration, rate, _ = probe_audio(audio_path)
            recordings.append(
                RecordingMeta(rel, duration, rate, Origin.NBM_ORIG, split)
            )
            label_path = audio_path.with_suffix(".txt")
            if not label_path.exists():
                continue  # hard negative: recording kept with zero annotations
            text = label_path.read_text(encoding="utf-8")
            for region in parse_regions(text):
                sid = _resolve_species(species_dir.name, region.label, vocab)
                if sid is None:
                    continue
                annotations.append(
                    AnnotationBox(
                        region.t_start, region.t_end,
                        region.f_low, region.f_high, sid, rel,
                    )
                )


def build_manifest(root: str | Path, vocab: SpeciesVocab) -> DatasetManifest:
    """Index a dataset directory into a validated manifest.

    Recordings without labels are retained as hard negatives. A
    ``manifest.json`` at the root takes precedence over the layout.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"dataset root is not a directory: {root}")
    override = root / "manifest.json"
    if override.exists():
        return load_manifest(override)

    recordings: list[RecordingMeta] = []
    annotations: list[AnnotationBox] = []
    split_dirs = [(root / "train", Split.TRAIN), (root / "test", Split.TEST)]
    if any(p.is_dir() for p, _ in split_dirs):
        for split_root, split in split_dirs:
            if split_root.is_dir():
                _walk_split(split_root, root, split, vocab, recordings, annotations)
    else:
        _walk_split(root, root, Split.TRAIN, vocab, recordings, annotations)

    annotations.sort(key=lambda a: (a.source_file, a.t_start, a.t_end, a.f_low))
    return DatasetManifest(recordings, annotations, vocab)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "schema_version": manifest.version,
        "vocab": manifest.vocab.to_json(),
        "recordings": [
            {
                "path": r.path,
                "duration": r.duration,
                "sample_rate": r.sample_rate,
                "origin": r.origin.value,
                "split": r.split.value,
            }
            for r in manifest.recordings
        ],
        "annotations": [
            {
                "t_start": a.t_start,
                "t_end": a.t_end,
                "f_low": a.f_low,
                "f_high": a.f_high,
                "species_id": a.species_id,
                "source_file": a.source_file,
            }
            for a in manifest.annotations
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}")
    version = doc.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise ValidationError(
            f"unsupported manifest schema version: {version!r} "
            f"(expected {MANIFEST_SCHEMA_VERSION!r})"
        )
    vocab = SpeciesVocab.from_json(doc["vocab"])
    recordings = [
        RecordingMeta(
            r["path"], r["duration"], r["sample_rate"],
            Origin(r.get("origin", "NBM_ORIG")), Split(r.get("split", "TRAIN")),
        )
        for r in doc["recordings"]
    ]
    annotations = [
        AnnotationBox(
            a["t_start"], a["t_end"], a["f_low"], a["f_high"],
            a["species_id"], a["source_file"],
        )
        for a in doc["annotations"]
    ]
    return DatasetManifest(recordings, annotations, vocab, version)
