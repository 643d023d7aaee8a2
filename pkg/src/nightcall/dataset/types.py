"""Core annotated-corpus records: boxes, recordings, and the manifest."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from nightcall.dataset.vocab import SpeciesVocab
from nightcall.errors import ValidationError

MANIFEST_SCHEMA_VERSION = "1"


class Origin(enum.Enum):
    NBM_ORIG = "NBM_ORIG"
    NBM_XC = "NBM_XC"
    SYNTH = "SYNTH"


class Split(enum.Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


@dataclass(frozen=True)
class AnnotationBox:
    """One vocalization localized in seconds x Hz with a species label."""

    t_start: float
    t_end: float
    f_low: float
    f_high: float
    species_id: int
    source_file: str

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValidationError(
                f"t_start must be < t_end, got [{self.t_start}, {self.t_end}]"
            )
        if self.t_start < 0:
            raise ValidationError(f"t_start must be >= 0, got {self.t_start}")
        if not self.f_low < self.f_high:
            raise ValidationError(
                f"f_low must be < f_high, got [{self.f_low}, {self.f_high}]"
            )
        if self.f_low < 0:
            raise ValidationError(f"f_low must be >= 0, got {self.f_low}")
        if self.species_id < 0:
            raise ValidationError(f"species_id must be >= 0, got {self.species_id}")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def center_freq(self) -> float:
        return 0.5 * (self.f_low + self.f_high)


@dataclass(frozen=True)
class RecordingMeta:
    """Metadata of one audio file in the corpus."""

    path: str
    duration: float
    sample_rate: float
    origin: Origin = Origin.NBM_ORIG
    split: Split = Split.TRAIN

    def __post_init__(self):
        if self.duration <= 0:
            raise ValidationError(f"duration must be > 0, got {self.duration}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be > 0, got {self.sample_rate}")


@dataclass
class DatasetManifest:
    """Recordings, annotations, and vocabulary of one corpus snapshot."""

    recordings: list[RecordingMeta]
    annotations: list[AnnotationBox]
    vocab: SpeciesVocab
    version: str = MANIFEST_SCHEMA_VERSION
    _by_path: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._by_path = {r.path: r for r in self.recordings}
        if len(self._by_path) != len(self.recordings):
            raise ValidationError("duplicate recording paths in manifest")
        self.validate()

    def validate(self):
        n = len(self.vocab)
        for a in self.annotations:
            rec = self._by_path.get(a.source_file)
            if rec is None:
                raise ValidationError(
                    f"annotation references unknown recording {a.source_file!r}"
                )
            if a.t_end > rec.duration + 1e-9:
                raise ValidationError(
                    f"annotation ends at {a.t_end}s, after recording "
                    f"{a.source_file!r} ends ({rec.duration}s)"
                )
            if a.species_id >= n:
                raise ValidationError(
                    f"annotation species_id {a.species_id} not in vocabulary"
                )

    def recording(self, path: str) -> RecordingMeta:
        return self._by_path[path]

    def recordings_in(self, split: Split) -> list[RecordingMeta]:
        return [r for r in self.recordings if r.split == split]

    def annotations_of(self, path: str) -> list[AnnotationBox]:
        return [a for a in self.annotations if a.source_file == path]
