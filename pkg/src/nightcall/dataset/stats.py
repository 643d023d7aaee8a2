"""Corpus statistics and the evaluation-scope filter."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace

from nightcall.dataset.types import DatasetManifest, Split
from nightcall.dataset.vocab import SpeciesVocab
from nightcall.errors import UnknownSpeciesError, ValidationError


@dataclass
class CorpusStats:
    """Totals and per-species breakdowns of a manifest."""

    n_recordings: int
    n_annotations: int
    n_species_annotated: int
    total_duration_s: float
    per_species_annotations: dict[int, int]
    per_species_files: dict[int, int]

    def species_with_at_least(self, min_annotations: int) -> int:
        return sum(
            1 for n in self.per_species_annotations.values() if n >= min_annotations
        )


def compute_stats(
    manifest: DatasetManifest, split: Split | None = None
) -> CorpusStats:
    """Count recordings, annotations, and per-species coverage.

    With ``split`` given, only that split's recordings and their
    annotations are counted; default is the whole manifest.
    """
    if split is None:
        recordings = manifest.recordings
    else:
        recordings = manifest.recordings_in(split)
    paths = {r.path for r in recordings}
    annotations = [a for a in manifest.annotations if a.source_file in paths]

    per_species = Counter(a.species_id for a in annotations)
    files_of: dict[int, set] = defaultdict(set)
    for a in annotations:
        files_of[a.species_id].add(a.source_file)

    return CorpusStats(
        n_recordings=len(recordings),
        n_annotations=len(annotations),
        n_species_annotated=len(per_species),
        total_duration_s=sum(r.duration for r in recordings),
        per_species_annotations=dict(per_species),
        per_species_files={sid: len(fs) for sid, fs in files_of.items()},
    )


@dataclass(frozen=True)
class ScopeFilter:
    """Minimum-coverage thresholds defining the evaluation species scope."""

    min_samples: int = 100
    min_files: int = 20
    forced_includes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.min_samples <= 0 or self.min_files <= 0:
            raise ValidationError("scope thresholds must be > 0")


def filter_evaluation_scope(
    manifest: DatasetManifest, scope: ScopeFilter, split: Split | None = Split.TRAIN
) -> DatasetManifest:
    """Restrict a manifest to species with enough training coverage.

    Keeps species with at least ``min_samples`` annotations in at least
    ``min_files`` distinct recordings (counted on the given split,
    training by default), plus any forced includes. Returns a new
    manifest whose vocabulary is renumbered (original order preserved)
    and whose annotations for dropped species are removed; recordings
    are kept as-is, so excluded species' audio still serves as negative
    material.
    """
    n = len(manifest.vocab)
    for sid in scope.forced_includes:
        if not 0 <= sid < n:
            raise UnknownSpeciesError(str(sid))
    stats = compute_stats(manifest, split)
    forced = set(scope.forced_includes)
    keep = [
        sid
        for sid, _, _ in manifest.vocab
        if sid in forced
        or (
            stats.per_species_annotations.get(sid, 0) >= scope.min_samples
            and stats.per_species_files.get(sid, 0) >= scope.min_files
        )
    ]
    new_vocab = manifest.vocab.restrict(keep)
    remap = {
        manifest.vocab.id_of(new_vocab.code_of(new_id)): new_id
        for new_id in range(len(new_vocab))
    }
    annotations = [
        replace(a, species_id=remap[a.species_id])
        for a in manifest.annotations
        if a.species_id in remap
    ]
    return DatasetManifest(
        recordings=manifest.recordings,
        annotations=annotations,
        vocab=new_vocab,
    )
