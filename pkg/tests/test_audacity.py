"""Label-track parser: round trips, tolerance, and failure modes."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nightcall.dataset import SpeciesVocab, parse_audacity_labels, serialize_audacity
from nightcall.dataset.audacity import parse_regions
from nightcall.errors import ParseError, ValidationError

VOCAB = SpeciesVocab.from_names(["Grus grus", "Ixobrychus minutus"])


def test_basic_two_line_region():
    text = "1.000000\t2.000000\tGrGr\n\\\t500.000000\t1200.000000\n"
    boxes = parse_audacity_labels(text, species_id=0, source_file="a.wav")
    assert len(boxes) == 1
    b = boxes[0]
    assert (b.t_start, b.t_end, b.f_low, b.f_high) == (1.0, 2.0, 500.0, 1200.0)
    assert serialize_audacity(boxes, VOCAB) == text


def test_crlf_bom_and_blank_lines():
    text = "﻿0.500000\t1.500000\tIxMi\r\n\\\t800.0\t1400.0\r\n\r\n"
    boxes = parse_audacity_labels(text, species_id=1, source_file="a.wav")
    assert len(boxes) == 1
    assert boxes[0].species_id == 1


def test_empty_label_tolerated():
    # some editors strip the trailing tab of an unlabeled region
    regions = parse_regions("1.0\t2.0\n\\\t100\t200\n")
    assert regions[0].label == ""


def test_scientific_notation_and_signs():
    regions = parse_regions("1e-1\t2.5e0\tx\n\\\t+1.0e2\t2e3\n")
    assert regions[0].t_start == pytest.approx(0.1)
    assert regions[0].f_high == 2000.0


def test_regions_sorted_by_time():
    text = (
        "5.0\t6.0\tGrGr\n\\\t100\t200\n"
        "1.0\t2.0\tGrGr\n\\\t300\t400\n"
    )
    boxes = parse_audacity_labels(text, species_id=0, source_file="a.wav")
    assert [b.t_start for b in boxes] == [1.0, 5.0]


class TestMalformedInput:
    """Structural damage raises ParseError, bad values ValidationError."""

    @pytest.mark.parametrize(
        "text",
        [
            "abc\t2.0\tx\n\\\t1\t2\n",          # non-numeric time
            "1,5\t2.0\tx\n\\\t1\t2\n",           # comma decimal
            "1.0\t2.0\tx\textra\n\\\t1\t2\n",    # 4 fields on the time line
            "\\\t1\t2\n",                          # frequency line first
            "1.0\t2.0\tx\n\\\t1\n",              # short frequency line
            "1.0\t2.0\tx\n\\\t1\t2\t3\n",        # long frequency line
            "1.0\n\\\t1\t2\n",                     # single-field time line
            "1.0\t2.0\tx\n\\\tlow\t2\n",         # non-numeric frequency
        ],
    )
    def test_parse_errors(self, text):
        with pytest.raises(ParseError):
            parse_regions(text)

    @pytest.mark.parametrize(
        "text",
        [
            "2.0\t1.0\tx\n\\\t1\t2\n",     # reversed times
            "1.0\t1.0\tx\n\\\t1\t2\n",     # zero duration
            "-1.0\t2.0\tx\n\\\t1\t2\n",    # negative start
            "1.0\t2.0\tx\n\\\t300\t200\n",  # reversed frequencies
            "1.0\t2.0\tx\n\\\t-5\t200\n",   # negative frequency
            "1.0\t2.0\tx\n",                  # missing frequency line
            "1.0\t2.0\tx\n2.0\t3.0\ty\n\\\t1\t2\n",  # first region lacks one
        ],
    )
    def test_validation_errors(self, text):
        with pytest.raises(ValidationError):
            parse_regions(text)

    def test_error_carries_line_number(self):
        with pytest.raises(ParseError, match="line 3"):
            parse_regions("1.0\t2.0\tx\n\\\t1\t2\nboom\tzap\tq\textra\n")


def _random_boxes(rng, n, source):
    out = []
    for _ in range(n):
        t0 = round(float(rng.uniform(0, 3000)), 6)
        dur = round(float(rng.uniform(0.01, 30)), 6)
        f0 = round(float(rng.uniform(0, 20000)), 6)
        bw = round(float(rng.uniform(0.5, 2000)), 6)
        out.append((t0, t0 + dur, f0, f0 + bw))
    return [
        parse_audacity_labels(
            f"{a:.6f}\t{b:.6f}\tGrGr\n\\\t{c:.6f}\t{d:.6f}\n", 0, source
        )[0]
        for a, b, c, d in out
    ]


def test_fuzz_round_trip_10k():
    """10,000 random regions survive serialize -> parse -> serialize intact."""
    rng = np.random.default_rng(20260822)
    total = 0
    doc = 0
    while total < 10_000:
        n = int(rng.integers(1, 40))
        boxes = _random_boxes(rng, n, f"doc{doc}.wav")
        text = serialize_audacity(boxes, VOCAB)
        parsed = parse_audacity_labels(text, species_id=0, source_file=f"doc{doc}.wav")
        assert parsed == sorted(boxes, key=lambda b: (b.t_start, b.t_end, b.f_low))
        assert serialize_audacity(parsed, VOCAB) == text
        total += n
        doc += 1
    assert total >= 10_000


@given(
    t0=st.floats(0, 1e4, allow_nan=False),
    dur=st.floats(1e-3, 100, allow_nan=False),
    f0=st.floats(0, 2e4, allow_nan=False),
    bw=st.floats(1e-3, 5e3, allow_nan=False),
)
def test_any_valid_region_round_trips(t0, dur, f0, bw):
    t0, dur, f0, bw = (round(v, 6) for v in (t0, dur, f0, bw))
    if dur <= 0 or bw <= 0:  # rounding can collapse the tiny end of the range
        return
    text = f"{t0:.6f}\t{t0 + dur:.6f}\tGrGr\n\\\t{f0:.6f}\t{f0 + bw:.6f}\n"
    boxes = parse_audacity_labels(text, species_id=0, source_file="h.wav")
    assert serialize_audacity(boxes, VOCAB) == text


@given(st.text(alphabet="0123456789.\t\\\n eE+-,x", max_size=200))
def test_parser_never_hangs_or_leaks(text):
    """Arbitrary junk either parses or raises one of the two library errors."""
    try:
        regions = parse_regions(text)
    except (ParseError, ValidationError):
        return
    for r in regions:
        assert r.t_start < r.t_end
        assert 0 <= r.f_low < r.f_high
