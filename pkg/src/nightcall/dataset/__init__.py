"""Dataset ingestion: label parsing, manifest construction, corpus statistics."""

from nightcall.dataset.audacity import parse_audacity_labels, serialize_audacity
from nightcall.dataset.manifest import (
    AnnotationBox,
    DatasetManifest,
    Origin,
    RecordingMeta,
    Split,
    build_manifest,
    load_manifest,
    save_manifest,
)
from nightcall.dataset.stats import (
    CorpusStats,
    ScopeFilter,
    compute_stats,
    filter_evaluation_scope,
)
from nightcall.dataset.vocab import SpeciesVocab

__all__ = [
    "AnnotationBox",
    "CorpusStats",
    "DatasetManifest",
    "Origin",
    "RecordingMeta",
    "ScopeFilter",
    "SpeciesVocab",
    "Split",
    "build_manifest",
    "compute_stats",
    "filter_evaluation_scope",
    "load_manifest",
    "parse_audacity_labels",
    "save_manifest",
    "serialize_audacity",
]
