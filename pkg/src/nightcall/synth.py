"""Synthetic nocturnal-call corpus with exact ground truth.

Five invented species occupy pairwise-disjoint frequency bands and call
with distinct sweep shapes, over a gaussian noise floor dotted with
broadband rain-like transients. Because every call is generated from its
annotation, the corpus gives an end-to-end benchmark (train, detect,
evaluate, probe) that runs on a desktop CPU and has a known right
answer: the probe's posterior must peak inside each species' band.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nightcall.audio import write_wav
from nightcall.dataset.audacity import serialize_audacity
from nightcall.dataset.manifest import build_manifest, save_manifest
from nightcall.dataset.types import (
    AnnotationBox,
    DatasetManifest,
    Origin,
    RecordingMeta,
    Split,
)
from nightcall.dataset.vocab import SpeciesVocab
from nightcall.dsp import DspConfig
from nightcall.errors import ConfigError, ValidationError
from nightcall.evaluate import EvalReport, eval_detection, eval_multilabel, merge_reports, render_report
from nightcall.infer import detect_file, to_multilabel
from nightcall.model import ModelConfig, train
from nightcall.probe import PosteriorCurve, aggregate_probe, write_probe

MIXED_DIR = "mixed"  # not a species code: region labels carry the species


class CallKind(enum.Enum):
    TONE = "TONE"
    UP_CHIRP = "UP_CHIRP"
    DOWN_CHIRP = "DOWN_CHIRP"
    TRILL = "TRILL"


@dataclass(frozen=True)
class SynthSpecies:
    """Band, shape and loudness of one invented species."""

    name: str  # binomial; the vocabulary derives the short code
    band: tuple[float, float]  # Hz
    call_kind: CallKind
    duration: tuple[float, float] = (0.15, 0.38)  # seconds
    amplitude: tuple[float, float] = (0.25, 0.6)  # linear peak

    def __post_init__(self):
        dsp = DspConfig()
        lo, hi = self.band
        if not (dsp.f_min <= lo < hi <= dsp.f_max):
            raise ConfigError(
                f"band {self.band} outside displayed range "
                f"[{dsp.f_min}, {dsp.f_max}]"
            )
        d_lo, d_hi = self.duration
        if not (0.02 < d_lo <= d_hi < 1.0):
            raise ConfigError(f"duration range {self.duration} outside (0.02, 1.0) s")
        a_lo, a_hi = self.amplitude
        if a_lo < 0 or a_hi < a_lo:
            raise ConfigError(f"bad amplitude range {self.amplitude}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "band": list(self.band),
            "call_kind": self.call_kind.value,
            "duration": list(self.duration),
            "amplitude": list(self.amplitude),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SynthSpecies":
        try:
            kind = CallKind(doc["call_kind"])
        except (KeyError, ValueError):
            raise ConfigError(f"unknown call kind {doc.get('call_kind')!r}")
        return cls(
            name=doc["name"],
            band=tuple(doc["band"]),
            call_kind=kind,
            duration=tuple(doc.get("duration", (0.15, 0.38))),
            amplitude=tuple(doc.get("amplitude", (0.25, 0.6))),
        )


# One shared call shape: band position is then the only class signal,
# so the detection head has to read the frequency encoding, which is
# the behavior the probe acceptance checks.
DEFAULT_SPECIES = (
    SynthSpecies("Vox gravis", (1200.0, 2200.0), CallKind.UP_CHIRP),
    SynthSpecies("Vox media", (2800.0, 3800.0), CallKind.UP_CHIRP),
    SynthSpecies("Vox alta", (4500.0, 5500.0), CallKind.UP_CHIRP),
    SynthSpecies("Vox clara", (6500.0, 7500.0), CallKind.UP_CHIRP),
    SynthSpecies("Vox summa", (8500.0, 9500.0), CallKind.UP_CHIRP),
)

# hard mode: heavy band overlap forces classification beyond frequency
OVERLAPPING_SPECIES = (
    SynthSpecies("Vox gravis", (2000.0, 4000.0), CallKind.UP_CHIRP),
    SynthSpecies("Vox media", (2500.0, 4500.0), CallKind.DOWN_CHIRP),
    SynthSpecies("Vox alta", (3000.0, 5000.0), CallKind.TRILL),
    SynthSpecies("Vox clara", (3500.0, 5500.0), CallKind.UP_CHIRP),
    SynthSpecies("Vox summa", (4000.0, 6000.0), CallKind.DOWN_CHIRP),
)


@dataclass(frozen=True)
class SynthConfig:
    species: tuple[SynthSpecies, ...] = DEFAULT_SPECIES
    calls_per_file: int = 10
    train_files: int = 20
    test_files: int = 8
    file_duration: float = 12.0  # seconds
    noise_floor_db: float = -45.0  # gaussian floor RMS re full scale
    rain_rate: float = 0.5  # broadband transients per second
    sample_rate: int = 44100
    seed: int = 0

    def __post_init__(self):
        if not self.species:
            raise ConfigError("at least one species required")
        if self.calls_per_file < 1 or self.train_files < 1 or self.test_files < 0:
            raise ConfigError("counts must be positive (test_files may be 0)")
        if self.rain_rate < 0:
            raise ConfigError("rain_rate must be >= 0")
        slot = self.file_duration / self.calls_per_file
        longest = max(s.duration[1] for s in self.species)
        if longest + 0.1 > slot:
            raise ConfigError(
                f"calls up to {longest}s do not fit {slot:.2f}s slots; "
                f"lower calls_per_file or extend file_duration"
            )

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["species"] = [s.to_json() for s in self.species]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SynthConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - fields
        if extra:
            raise ConfigError(f"unknown synth config keys: {sorted(extra)}")
        kwargs = dict(doc)
        if "species" in kwargs:
            kwargs["species"] = tuple(
                SynthSpecies.from_json(s) for s in kwargs["species"]
            )
        return cls(**kwargs)


def _fade_envelope(n: int, fade: int) -> np.ndarray:
    env = np.ones(n)
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        env[:fade] = ramp
        env[-fade:] = ramp[::-1]
    return env


def synth_call(
    species: SynthSpecies, rng: np.random.Generator, sample_rate: int = 44100
) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """One call: (waveform segment, box (t_start, t_end, f_low, f_high)).

    Times are relative to the segment, so t_start is 0. Instantaneous
    frequency stays strictly inside the box; the frequency margin is
    about 1.5 FFT bins so the windowed spectrum stays inside too. A zero
    amplitude range yields silence but still reports the box.
    """
    dsp = DspConfig(sample_rate=sample_rate)
    pad = 1.5 * sample_rate / dsp.n_fft  # Hz; covers the analysis mainlobe
    lo, hi = species.band
    width = hi - lo
    dur = float(rng.uniform(*species.duration))
    amp = float(rng.uniform(*species.amplitude))
    n = round(dur * sample_rate)
    t = np.arange(n) / sample_rate

    kind = species.call_kind
    if kind is CallKind.TONE:
        f0 = float(rng.uniform(lo + pad, hi - pad))
        phase = 2 * math.pi * f0 * t
        f_lo, f_hi = f0 - pad, f0 + pad
    elif kind in (CallKind.UP_CHIRP, CallKind.DOWN_CHIRP):
        span = float(rng.uniform(0.45, 0.7)) * width
        start = float(rng.uniform(lo + pad, hi - pad - span))
        f_a, f_b = (start, start + span)
        if kind is CallKind.DOWN_CHIRP:
            f_a, f_b = f_b, f_a
        phase = 2 * math.pi * (f_a * t + (f_b - f_a) / (2 * dur) * t * t)
        f_lo, f_hi = start - pad, start + span + pad
    else:  # TRILL: sinusoidal FM around a band-center carrier
        rate = float(rng.uniform(9.0, 14.0))
        dev = float(rng.uniform(0.18, 0.3)) * width
        margin = pad + 2 * rate  # FM sidebands extend ~rate beyond dev
        fc = float(rng.uniform(lo + margin + dev, hi - margin - dev))
        phase = 2 * math.pi * (fc * t - dev / (2 * math.pi * rate) * np.cos(2 * math.pi * rate * t))
        f_lo, f_hi = fc - dev - margin, fc + dev + margin

    fade = min(round(0.02 * sample_rate), n // 4)
    wave = amp * np.sin(phase) * _fade_envelope(n, fade)
    return wave, (0.0, dur, f_lo, f_hi)


def _rain(wave: np.ndarray, rate: float, duration: float, rng: np.random.Generator,
          sample_rate: int) -> None:
    """Short decaying broadband bursts, unannotated by design."""
    for _ in range(int(rng.poisson(rate * duration))):
        at = int(rng.uniform(0, len(wave) - sample_rate // 100))
        n = int(rng.uniform(0.002, 0.006) * sample_rate)
        burst = rng.standard_normal(n) * np.exp(-np.arange(n) / (n / 3))
        wave[at : at + n] += float(rng.uniform(0.15, 0.4)) * burst


def _round6(x: float) -> float:
    # label files carry 6 decimals; the in-memory truth matches them
    return float(f"{x:.6f}")


def synth_corpus(
    cfg: SynthConfig, out_dir: str | Path, force: bool = False
) -> DatasetManifest:
    """Write the corpus in the ingest layout and return its manifest.

    Layout: <out>/{train,test}/mixed/synth_NNN.{wav,txt} plus a
    manifest.json; parsing the tree back yields exactly the returned
    manifest. Each file index draws from its own (seed, index) RNG
    stream, so generation order cannot matter.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise ValidationError(
            f"output directory {out_dir} is not empty; pass force to overwrite"
        )
    vocab = SpeciesVocab.from_names([s.name for s in cfg.species])
    n_samples = round(cfg.file_duration * cfg.sample_rate)
    sigma = 10 ** (cfg.noise_floor_db / 20)
    slot = cfg.file_duration / cfg.calls_per_file

    recordings: list[RecordingMeta] = []
    annotations: list[AnnotationBox] = []
    plan = [(Split.TRAIN, "train")] * cfg.train_files + [
        (Split.TEST, "test")
    ] * cfg.test_files
    for index, (split, split_dir) in enumerate(plan):
        rng = np.random.default_rng((cfg.seed, index))
        wave = sigma * rng.standard_normal(n_samples)
        _rain(wave, cfg.rain_rate, cfg.file_duration, rng, cfg.sample_rate)
        rel = f"{split_dir}/{MIXED_DIR}/synth_{index:03d}.wav"
        boxes = []
        for k in range(cfg.calls_per_file):
            sp = cfg.species[int(rng.integers(len(cfg.species)))]
            seg, (_, dur, f_lo, f_hi) = synth_call(sp, rng, cfg.sample_rate)
            t_off = k * slot + float(rng.uniform(0.05, slot - dur - 0.05))
            at = round(t_off * cfg.sample_rate)
            wave[at : at + len(seg)] += seg
            boxes.append(
                AnnotationBox(
                    _round6(at / cfg.sample_rate),
                    _round6(at / cfg.sample_rate + dur),
                    _round6(f_lo),
                    _round6(f_hi),
                    vocab.id_of(sp.name),
                    rel,
                )
            )
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        write_wav(path, np.clip(wave, -1.0, 1.0), cfg.sample_rate)
        path.with_suffix(".txt").write_text(
            serialize_audacity(boxes, vocab), encoding="utf-8"
        )
        recordings.append(
            RecordingMeta(
                rel, n_samples / cfg.sample_rate, cfg.sample_rate,
                Origin.NBM_ORIG, split,
            )
        )
        annotations.extend(boxes)

    annotations.sort(key=lambda a: (a.source_file, a.t_start, a.t_end, a.f_low))
    manifest = DatasetManifest(recordings, annotations, vocab)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def bench_dsp_config(sample_rate: int = 44100) -> DspConfig:
    """Short windows keep desk-scale training cheap without touching the
    frequency geometry."""
    return DspConfig(sample_rate=sample_rate, window_frames=512, window_stride=256)


def bench_model_config(num_classes: int, seed: int = 0) -> ModelConfig:
    """Reference small detector for the synthetic benchmark (CPU scale)."""
    return ModelConfig(
        num_classes=num_classes,
        backbone_widths=(8, 24, 48, 96),
        levels=(4, 5),
        anchor_scales=(28.0, 48.0),
        anchor_ratios=(0.15, 0.3, 0.6),
        fpn_channels=32,
        attn_levels=(5,),
        attn_heads=4,
        attn_key_budget=256,
        rpn_batch=64,
        rcnn_batch=64,
        rpn_pre_nms_topk=512,
        rpn_post_nms_topk_train=256,
        rpn_post_nms_topk_test=128,
        rcnn_hidden=256,
        # dense wavelength ladder: with few scales the head can latch
        # onto one periodic channel and alias distant rows together
        pe_freq_dims=64,
        pe_time_dims=8,
        roi_size=(5, 5),
        nms_iou=0.3,
        score_threshold=0.05,
        lr=2e-3,
        warmup_steps=30,
        total_steps=450,
        lr_decay_milestones=(340, 410),
        lr_decay_gamma=0.3,
        batch_size=2,
        aug_time_jitter=64,
        aug_gain_jitter=0.2,
        aug_noise_mix=0.1,
        seed=seed,
    )


@dataclass
class BenchmarkResult:
    report: EvalReport
    curves: list[PosteriorCurve]
    checkpoint_path: Path
    corpus_dir: Path
    out_dir: Path

    @property
    def detection_map(self) -> float | None:
        return self.report.detection_map

    @property
    def multilabel_map(self) -> float | None:
        return self.report.multilabel_map

    def peak_offsets(self) -> dict[int, int]:
        return {c.species_id: c.peak_offset() for c in self.curves}


def run_benchmark(
    out_dir: str | Path,
    seed: int = 0,
    synth_cfg: SynthConfig | None = None,
    model_cfg: ModelConfig | None = None,
    dsp_cfg: DspConfig | None = None,
    ablate_pe: bool = False,
    score_threshold: float = 0.05,
) -> BenchmarkResult:
    """Generate, train, detect, evaluate and probe in one run.

    ablate_pe zeroes both positional encoding widths; the probe curves
    then have nothing to react to and come out flat, which is the
    control for the alignment claim. Training aborts (TrainError) are
    propagated, not swallowed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    synth_cfg = synth_cfg or SynthConfig(seed=seed)
    corpus_dir = out_dir / "corpus"
    manifest = synth_corpus(synth_cfg, corpus_dir, force=True)

    dsp_cfg = dsp_cfg or bench_dsp_config(synth_cfg.sample_rate)
    model_cfg = model_cfg or bench_model_config(len(synth_cfg.species), seed=seed)
    if ablate_pe:
        model_cfg = dataclasses.replace(model_cfg, pe_freq_dims=0, pe_time_dims=0)

    checkpoint = train(manifest, corpus_dir, model_cfg, dsp_cfg, out_dir / "run")
    detector = checkpoint.build_detector()

    detections = {}
    predicted = {}
    for rec in manifest.recordings_in(Split.TEST):
        dets = detect_file(
            corpus_dir / rec.path,
            checkpoint,
            detector=detector,
            score_threshold=score_threshold,
        )
        detections[rec.path] = dets
        predicted[rec.path] = to_multilabel(dets, rec.duration)

    scope = list(range(len(manifest.vocab)))
    report = merge_reports(
        eval_detection(detections, manifest, scope),
        eval_multilabel(predicted, manifest, scope),
    )
    curves = aggregate_probe(
        checkpoint, manifest, corpus_dir, scope, detector=detector
    )
    report_dir = out_dir / "report"
    render_report(report, report_dir)
    write_probe(curves, dict(report.codes), report_dir)
    return BenchmarkResult(
        report=report,
        curves=curves,
        checkpoint_path=out_dir / "run" / "checkpoint.pt",
        corpus_dir=corpus_dir,
        out_dir=out_dir,
    )
