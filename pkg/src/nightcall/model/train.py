"""Training loop, step log, and checkpoint round-trip.

Determinism contract: every random draw of step k comes from a fresh
generator seeded by (config seed, k), so a run resumed from any
checkpoint replays exactly the batches and samples of an uninterrupted
run. The global torch RNG only matters at model construction, which
seeds it itself.
"""

from __future__ import annotations

import json
import logging
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from nightcall.dataset.types import AnnotationBox, DatasetManifest, Split
from nightcall.dataset.vocab import SpeciesVocab
from nightcall.audio import read_audio
from nightcall.dsp.config import DspConfig
from nightcall.dsp.geometry import GeometryMap
from nightcall.dsp.spectrogram import (
    crop_resize_freq,
    log_normalize,
    resample_to,
    stft_magnitude,
)
from nightcall.dsp.windows import tile_starts, window_boxes
from nightcall.errors import ConfigError, TrainError, ValidationError
from nightcall.model.config import ModelConfig
from nightcall.model.detector import Detector, WindowTargets

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "1"


@dataclass
class TrainItem:
    """One recording held in memory at the working sample rate."""

    path: str
    wave: np.ndarray
    annotations: list[AnnotationBox]
    n_frames: int


def prepare_items(
    manifest: DatasetManifest, dsp_cfg: DspConfig, root: str | Path
) -> list[TrainItem]:
    """Load and resample every TRAIN-split recording into memory."""
    root = Path(root)
    items = []
    for rec in manifest.recordings_in(Split.TRAIN):
        wave, rate = read_audio(root / rec.path)
        wave = resample_to(wave, rate, dsp_cfg.sample_rate, dsp_cfg.resample_beta)
        items.append(
            TrainItem(
                path=rec.path,
                wave=np.asarray(wave, dtype=np.float64),
                annotations=manifest.annotations_of(rec.path),
                n_frames=dsp_cfg.n_frames(len(wave)),
            )
        )
    return items


def _slots(items: list[TrainItem], dsp_cfg: DspConfig) -> list[tuple[int, int]]:
    out = []
    for i, item in enumerate(items):
        for s in tile_starts(item.n_frames, dsp_cfg.window_frames, dsp_cfg.window_stride):
            out.append((i, s))
    return out


def _noise_slots(
    items: list[TrainItem], slots: list[tuple[int, int]], dsp_cfg: DspConfig
) -> list[tuple[int, int]]:
    """Slots whose window overlaps no annotation (background material)."""
    span = dsp_cfg.window_samples / dsp_cfg.sample_rate
    out = []
    for i, s in slots:
        t0 = s * dsp_cfg.hop / dsp_cfg.sample_rate
        t1 = t0 + span
        if not any(
            a.t_start < t1 and a.t_end > t0 for a in items[i].annotations
        ):
            out.append((i, s))
    return out


def _chunk(wave: np.ndarray, start_sample: int, n: int) -> np.ndarray:
    c = np.asarray(wave[start_sample : start_sample + n], dtype=np.float64)
    if c.size < n:
        c = np.pad(c, (0, n - c.size))
    return c


def _image_of_chunk(chunk: np.ndarray, cfg: DspConfig, geom: GeometryMap) -> np.ndarray:
    mag = stft_magnitude(chunk, cfg.n_fft, cfg.hop)
    return log_normalize(crop_resize_freq(mag, geom), cfg.log_eps)


def _targets_tensor(wb) -> WindowTargets:
    return WindowTargets(
        boxes=torch.tensor(
            [[b.x0, b.y0, b.x1, b.y1] for b in wb.boxes], dtype=torch.float32
        ).reshape(-1, 4),
        labels=torch.tensor(wb.labels, dtype=torch.int64),
        ignore=torch.tensor(
            [[b.x0, b.y0, b.x1, b.y1] for b in wb.ignore], dtype=torch.float32
        ).reshape(-1, 4),
    )


def build_batch(
    items: list[TrainItem],
    slots: list[tuple[int, int]],
    noise_slots: list[tuple[int, int]],
    cfg: ModelConfig,
    dsp_cfg: DspConfig,
    geom: GeometryMap,
    generator: torch.Generator,
) -> tuple[torch.Tensor, list[WindowTargets], list[str]]:
    """Sample and augment one training batch.

    Augmentations: window-start jitter in frames, waveform gain jitter,
    and additive mixing of an annotation-free window. No frequency shift
    is ever applied; band position is part of the class identity.
    """
    images, targets, ids = [], [], []
    need = dsp_cfg.window_samples
    for _ in range(cfg.batch_size):
        item_idx, base = slots[
            int(torch.randint(len(slots), (1,), generator=generator))
        ]
        item = items[item_idx]
        start = base
        if cfg.aug_time_jitter > 0:
            j = cfg.aug_time_jitter
            start += int(torch.randint(-j, j + 1, (1,), generator=generator))
            start = max(0, min(start, max(0, item.n_frames - dsp_cfg.window_frames)))
        s0 = start * dsp_cfg.hop
        chunk = _chunk(item.wave, s0, need)
        if cfg.aug_gain_jitter > 0:
            g = cfg.aug_gain_jitter
            chunk = chunk * (
                1.0 + (2.0 * float(torch.rand(1, generator=generator)) - 1.0) * g
            )
        if noise_slots and cfg.aug_noise_mix > 0:
            if float(torch.rand(1, generator=generator)) < cfg.aug_noise_mix:
                ni, ns = noise_slots[
                    int(torch.randint(len(noise_slots), (1,), generator=generator))
                ]
                mix = 0.2 + 0.6 * float(torch.rand(1, generator=generator))
                chunk = chunk + mix * _chunk(items[ni].wave, ns * dsp_cfg.hop, need)
        images.append(_image_of_chunk(chunk, dsp_cfg, geom))
        t0 = s0 / dsp_cfg.sample_rate
        targets.append(
            _targets_tensor(window_boxes(item.annotations, geom, t0, dsp_cfg))
        )
        ids.append(f"{item.path}@frame{start}")
    batch = torch.from_numpy(np.stack(images)).unsqueeze(1)
    return batch, targets, ids


def lr_at(step: int, cfg: ModelConfig) -> float:
    """Linear warmup into a piecewise-constant decayed schedule."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    passed = sum(1 for m in cfg.lr_decay_milestones if step >= m)
    return cfg.lr * cfg.lr_decay_gamma**passed


def _git_commit() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


@dataclass
class Checkpoint:
    """Self-describing training snapshot.

    Everything needed to rebuild the detector and continue the run:
    weights, both configs, the species vocabulary, optimizer state and
    the source commit the run was produced from.
    """

    model_config: ModelConfig
    dsp_config: DspConfig
    vocab: SpeciesVocab
    weights: dict
    step: int
    commit: str = "unknown"
    optimizer: dict | None = None

    def build_detector(self) -> Detector:
        det = Detector(self.model_config, self.dsp_config.window_frames)
        det.load_state_dict(self.weights)
        det.eval()
        return det


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    torch.save(
        {
            "schema": CHECKPOINT_SCHEMA,
            "model_config": ckpt.model_config.to_json(),
            "dsp_config": ckpt.dsp_config.to_json(),
            "vocab": ckpt.vocab.to_json(),
            "weights": ckpt.weights,
            "step": ckpt.step,
            "commit": ckpt.commit,
            "optimizer": ckpt.optimizer,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    doc = torch.load(path, map_location="cpu", weights_only=True)
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(
            f"checkpoint schema {doc.get('schema')!r} != {CHECKPOINT_SCHEMA!r}"
        )
    return Checkpoint(
        model_config=ModelConfig.from_json(doc["model_config"]),
        dsp_config=DspConfig.from_json(doc["dsp_config"]),
        vocab=SpeciesVocab.from_json(doc["vocab"]),
        weights=doc["weights"],
        step=doc["step"],
        commit=doc["commit"],
        optimizer=doc["optimizer"],
    )


def train(
    manifest: DatasetManifest,
    root: str | Path,
    model_cfg: ModelConfig,
    dsp_cfg: DspConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    max_steps: int | None = None,
) -> Checkpoint:
    """Train a detector on the manifest's TRAIN split.

    Writes ``train_log.jsonl`` (one record per step: step, losses, lr,
    wall_time) and ``checkpoint.pt`` under out_dir. ``max_steps`` caps
    how many steps this call runs (the schedule still follows
    cfg.total_steps), which is how interruption is simulated; ``resume``
    continues from a saved checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = prepare_items(manifest, dsp_cfg, root)
    if not items:
        raise ValidationError("train split is empty")
    geom = GeometryMap(dsp_cfg)
    slots = _slots(items, dsp_cfg)
    noise = _noise_slots(items, slots, dsp_cfg)

    detector = Detector(model_cfg, dsp_cfg.window_frames)
    optimizer = torch.optim.Adam(
        detector.parameters(), lr=model_cfg.lr, weight_decay=model_cfg.weight_decay
    )
    start_step = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.model_config != model_cfg or ck.dsp_config != dsp_cfg:
            raise ConfigError("resume checkpoint was trained with a different config")
        detector.load_state_dict(ck.weights)
        if ck.optimizer is not None:
            optimizer.load_state_dict(ck.optimizer)
        start_step = ck.step

    end_step = model_cfg.total_steps
    if max_steps is not None:
        end_step = min(end_step, start_step + max_steps)

    log_path = out_dir / "train_log.jsonl"
    detector.train()
    started = time.monotonic()
    with open(log_path, "a" if resume is not None else "w", encoding="utf-8") as log:
        for step in range(start_step, end_step):
            lr = lr_at(step, model_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            step_seed = model_cfg.seed * 1_000_003 + step + 1
            generator = torch.Generator()
            generator.manual_seed(step_seed)
            images, targets, ids = build_batch(
                items, slots, noise, model_cfg, dsp_cfg, geom, generator
            )
            losses = detector.forward_train(images, targets, sample_seed=step_seed)
            total = losses["total"]
            if not torch.isfinite(total):
                raise TrainError(
                    f"non-finite loss at step {step}: batch {ids}"
                )
            optimizer.zero_grad()
            total.backward()
            nn.utils.clip_grad_norm_(detector.parameters(), model_cfg.grad_clip)
            optimizer.step()
            log.write(
                json.dumps(
                    {
                        "step": step,
                        "losses": {k: float(v.detach()) for k, v in losses.items()},
                        "lr": lr,
                        "wall_time": time.monotonic() - started,
                    }
                )
                + "\n"
            )
            log.flush()

    ckpt = Checkpoint(
        model_config=model_cfg,
        dsp_config=dsp_cfg,
        vocab=manifest.vocab,
        weights=detector.state_dict(),
        step=end_step,
        commit=_git_commit(),
        optimizer=optimizer.state_dict(),
    )
    save_checkpoint(ckpt, out_dir / "checkpoint.pt")
    return ckpt
