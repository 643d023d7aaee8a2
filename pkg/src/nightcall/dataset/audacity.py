"""Reading and writing Audacity extended (spectral) label tracks.

The exchange format is TAB-separated UTF-8 text, LF or CRLF line ends.
Each annotated region spans two lines::

    <t_start>\t<t_end>\t<label>
    \\\t<f_low>\t<f_high>

Times are seconds, frequencies Hz, both with a decimal point (Audacity
exports dot-decimal regardless of locale). The frequency line is
mandatory in this corpus.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from nightcall.dataset.types import AnnotationBox
from nightcall.dataset.vocab import SpeciesVocab
from nightcall.errors import ParseError, ValidationError

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class LabelRegion:
    """One raw region pair before species resolution."""

    t_start: float
    t_end: float
    label: str
    f_low: float
    f_high: float
    line: int  # 1-based line number of the region's time line


def _parse_number(token: str, line: int) -> float:
    token = token.strip()
    if "," in token:
        raise ParseError(f"comma decimal not allowed: {token!r}", line)
    if not _NUMBER_RE.match(token):
        raise ParseError(f"malformed number: {token!r}", line)
    return float(token)


def parse_regions(text: str) -> list[LabelRegion]:
    """Parse label-track text into raw regions, in file order.

    Raises ParseError for structural problems (bad numbers, wrong field
    counts, a spectral line with no preceding time line) and
    ValidationError for well-formed regions violating bound invariants
    or missing their spectral line.
    """
    if text.startswith("﻿"):
        text = text[1:]
    regions: list[LabelRegion] = []
    pending: tuple[float, float, str, int] | None = None

    def flush_missing():
        if pending is not None:
            raise ValidationError(
                f"line {pending[3]}: region [{pending[0]}, {pending[1]}] "
                "has no frequency line (frequency is mandatory)"
            )

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if line == "":
            continue
        fields = line.split("\t")
        if fields[0] == "\\":
            if pending is None:
                raise ParseError("frequency line without a preceding time line", lineno)
            if len(fields) != 3:
                raise ParseError(
                    f"frequency line must have 3 fields, got {len(fields)}", lineno
                )
            f_low = _parse_number(fields[1], lineno)
            f_high = _parse_number(fields[2], lineno)
            t0, t1, label, at = pending
            pending = None
            if t0 < 0:
                raise ValidationError(f"line {at}: negative start time {t0}")
            if t0 >= t1:
                raise ValidationError(f"line {at}: t_start {t0} >= t_end {t1}")
            if f_low < 0:
                raise ValidationError(f"line {lineno}: negative frequency {f_low}")
            if f_low >= f_high:
                raise ValidationError(
                    f"line {lineno}: f_low {f_low} >= f_high {f_high}"
                )
            regions.append(LabelRegion(t0, t1, label, f_low, f_high, at))
        else:
            flush_missing()
            if len(fields) == 2:
                fields.append("")  # trailing tab stripped by some editors
            if len(fields) != 3:
                raise ParseError(
                    f"region line must have 3 fields, got {len(fields)}", lineno
                )
            t0 = _parse_number(fields[0], lineno)
            t1 = _parse_number(fields[1], lineno)
            pending = (t0, t1, fields[2].strip(), lineno)

    flush_missing()
    return regions


def parse_audacity_labels(
    text: str, species_id: int, source_file: str
) -> list[AnnotationBox]:
    """Parse a label track into boxes, all assigned to one species.

    Species resolution from label text (and conflict checking against
    the directory-derived code) happens at manifest level; this function
    trusts the caller's species_id. Returns boxes ordered by t_start.
    """
    boxes = [
        AnnotationBox(r.t_start, r.t_end, r.f_low, r.f_high, species_id, source_file)
        for r in parse_regions(text)
    ]
    boxes.sort(key=lambda b: (b.t_start, b.t_end, b.f_low))
    return boxes


def serialize_audacity(
    boxes: list[AnnotationBox], vocab: SpeciesVocab | None = None
) -> str:
    """Render boxes as Audacity extended label-track text.

    Numbers use Audacity's 6-decimal fixed-point formatting; the label
    field carries the species short code when a vocab is given, else the
    numeric id. Output order is canonical (by time, then frequency), so
    serialization is deterministic regardless of input order.
    """
    lines = []
    for b in sorted(boxes, key=lambda b: (b.t_start, b.t_end, b.f_low)):
        label = vocab.code_of(b.species_id) if vocab is not None else str(b.species_id)
        lines.append(f"{b.t_start:.6f}\t{b.t_end:.6f}\t{label}")
        lines.append(f"\\\t{b.f_low:.6f}\t{b.f_high:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")
