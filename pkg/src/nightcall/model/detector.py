"""Assembled two-stage detector.

Data flow: backbone -> per-level self-attention -> FPN -> RPN proposals
-> pyramid RoI align -> positional encoding -> RCNN head. Proposal
coordinates are detached before the second stage (standard two-stage
training), which also keeps the loss surface smooth in the parameters:
discrete proposal selection never moves under differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from nightcall.model.anchors import generate_anchors
from nightcall.model.attention import LevelSelfAttention
from nightcall.model.backbone import build_backbone
from nightcall.model.boxes import clip_boxes, decode_deltas
from nightcall.model.config import ModelConfig
from nightcall.model.fpn import Fpn
from nightcall.model.losses import (
    POSITIVE,
    assign_targets,
    rcnn_loss,
    rpn_loss,
    sample_balanced,
)
from nightcall.model.rcnn import RcnnHead
from nightcall.model.roi import PyramidRoiAlign
from nightcall.model.rpn import Rpn, flatten_level


@dataclass
class WindowTargets:
    """Ground truth of one training window, in pixel coordinates."""

    boxes: torch.Tensor  # (N, 4) float
    labels: torch.Tensor  # (N,) int64 species ids
    ignore: torch.Tensor  # (K, 4) float, sub-visible call fragments

    @classmethod
    def empty(cls) -> "WindowTargets":
        return cls(
            boxes=torch.zeros(0, 4),
            labels=torch.zeros(0, dtype=torch.int64),
            ignore=torch.zeros(0, 4),
        )


class Detector(nn.Module):
    """Full detector; construction is deterministic under cfg.seed."""

    def __init__(self, cfg: ModelConfig, window_frames: int):
        super().__init__()
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.window_frames = window_frames
        self.backbone = build_backbone(cfg)
        self.attention = nn.ModuleDict(
            {
                str(level): LevelSelfAttention(
                    self.backbone.out_channels[level],
                    cfg.attn_heads,
                    cfg.attn_key_budget,
                )
                for level in cfg.effective_attn_levels
            }
        )
        self.fpn = Fpn(self.backbone.out_channels, cfg.levels, cfg.fpn_channels)
        self.rpn = Rpn(cfg)
        self.roi_pool = PyramidRoiAlign(cfg)
        self.head = RcnnHead(cfg, window_frames)
        self._anchor_cache: dict[tuple[int, int, int], torch.Tensor] = {}

    def features(self, images: torch.Tensor) -> dict[int, torch.Tensor]:
        """(B, 1, H, W) -> attention-refined pyramid at cfg.levels."""
        maps = self.backbone(images)
        for level in self.cfg.effective_attn_levels:
            maps[level] = self.attention[str(level)](maps[level])
        return self.fpn({l: maps[l] for l in self.cfg.levels})

    def _anchors(self, pyramid: dict[int, torch.Tensor]) -> dict[int, torch.Tensor]:
        out = {}
        for level, fmap in pyramid.items():
            key = (level, fmap.shape[-2], fmap.shape[-1])
            if key not in self._anchor_cache:
                self._anchor_cache[key] = generate_anchors(
                    self.cfg, level, fmap.shape[-2], fmap.shape[-1]
                ).to(fmap.device)
            out[level] = self._anchor_cache[key]
        return out

    def _flatten_image(self, rpn_out, image_index):
        scores = []
        deltas = []
        for level in self.cfg.levels:
            obj, reg = rpn_out[level]
            s, d = flatten_level(obj[image_index], reg[image_index])
            scores.append(s)
            deltas.append(d)
        return torch.cat(scores), torch.cat(deltas)

    def forward_train(
        self,
        images: torch.Tensor,
        targets: list[WindowTargets],
        proposals_override: list[torch.Tensor] | None = None,
        sample_seed: int = 0,
    ) -> dict[str, torch.Tensor]:
        """Losses for one batch.

        proposals_override bypasses RPN proposal generation (the
        gradient oracle fixes proposals so the sampled RoI set is
        constant under parameter perturbation). sample_seed drives all
        positive/negative sampling; equal seeds give equal samples.
        """
        cfg = self.cfg
        height, width = images.shape[-2:]
        pyramid = self.features(images)
        rpn_out = self.rpn(pyramid)
        anchors = self._anchors(pyramid)
        anchors_flat = torch.cat([anchors[l] for l in cfg.levels])
        generator = torch.Generator()
        generator.manual_seed(sample_seed)

        losses = {k: [] for k in ("rpn_obj", "rpn_reg", "rcnn_cls", "rcnn_reg")}
        for b in range(images.shape[0]):
            tgt = targets[b]
            scores, deltas = self._flatten_image(rpn_out, b)
            obj_l, reg_l = rpn_loss(
                scores, deltas, anchors_flat, tgt.boxes, tgt.ignore, cfg, generator
            )
            losses["rpn_obj"].append(obj_l)
            losses["rpn_reg"].append(reg_l)

            if proposals_override is not None:
                proposals = proposals_override[b].detach()
            else:
                level_slice = {l: (rpn_out[l][0][b], rpn_out[l][1][b]) for l in cfg.levels}
                proposals, _ = self.rpn.propose(
                    level_slice, anchors, (height, width), training=True
                )
                if tgt.boxes.shape[0] > 0:
                    # feeding ground truth back guarantees clean positives
                    proposals = torch.cat([proposals, tgt.boxes])
            labels, matched = assign_targets(
                proposals,
                tgt.boxes,
                cfg.rcnn_pos_iou,
                cfg.rcnn_pos_iou,
                tgt.ignore,
                force_best_per_gt=False,
            )
            pos, neg = sample_balanced(
                labels, cfg.rcnn_batch, cfg.rcnn_pos_fraction, generator
            )
            sampled = torch.cat([pos, neg])
            sample_labels = torch.cat(
                [
                    torch.full((pos.numel(),), POSITIVE, dtype=torch.int64),
                    torch.zeros(neg.numel(), dtype=torch.int64),
                ]
            )
            pooled = self.roi_pool(
                {l: pyramid[l][b] for l in cfg.levels}, proposals[sampled]
            )
            cls_logits, box_deltas = self.head(pooled, proposals[sampled])
            cls_l, reg_l2 = rcnn_loss(
                cls_logits,
                box_deltas,
                proposals[sampled],
                sample_labels,
                matched[sampled],
                tgt.boxes,
                tgt.labels,
                cfg,
            )
            losses["rcnn_cls"].append(cls_l)
            losses["rcnn_reg"].append(reg_l2)

        out = {k: torch.stack(v).mean() for k, v in losses.items()}
        out["total"] = sum(out.values())
        return out

    @torch.no_grad()
    def forward_test(
        self, images: torch.Tensor, score_threshold: float | None = None
    ) -> list[dict[str, torch.Tensor]]:
        """Per image: decoded, score-filtered detections, before NMS.

        Returns dicts of boxes (D, 4), scores (D,), labels (D,). NMS and
        cross-window merging live in the inference layer.
        """
        cfg = self.cfg
        thr = cfg.score_threshold if score_threshold is None else score_threshold
        height, width = images.shape[-2:]
        pyramid = self.features(images)
        rpn_out = self.rpn(pyramid)
        anchors = self._anchors(pyramid)
        results = []
        for b in range(images.shape[0]):
            level_slice = {l: (rpn_out[l][0][b], rpn_out[l][1][b]) for l in cfg.levels}
            proposals, _ = self.rpn.propose(
                level_slice, anchors, (height, width), training=False
            )
            pooled = self.roi_pool(
                {l: pyramid[l][b] for l in cfg.levels}, proposals
            )
            cls_logits, box_deltas = self.head(pooled, proposals)
            probs = F.softmax(cls_logits, dim=1)
            n = proposals.shape[0]
            per_class = box_deltas.reshape(n, cfg.num_classes, 4)
            boxes_out = []
            scores_out = []
            labels_out = []
            for k in range(cfg.num_classes):
                sk = probs[:, k]
                keep = sk >= thr
                if not keep.any():
                    continue
                bk = decode_deltas(
                    proposals[keep], per_class[keep, k], cfg.rcnn_reg_weights
                )
                bk = clip_boxes(bk, float(width), float(height))
                ok = (bk[:, 2] - bk[:, 0] > 1e-3) & (bk[:, 3] - bk[:, 1] > 1e-3)
                boxes_out.append(bk[ok])
                scores_out.append(sk[keep][ok])
                labels_out.append(
                    torch.full((int(ok.sum()),), k, dtype=torch.int64)
                )
            if boxes_out:
                results.append(
                    {
                        "boxes": torch.cat(boxes_out),
                        "scores": torch.cat(scores_out),
                        "labels": torch.cat(labels_out),
                    }
                )
            else:
                results.append(
                    {
                        "boxes": torch.zeros(0, 4),
                        "scores": torch.zeros(0),
                        "labels": torch.zeros(0, dtype=torch.int64),
                    }
                )
        return results

    @torch.no_grad()
    def roi_features(
        self, images: torch.Tensor, boxes: torch.Tensor, image_index: int = 0
    ) -> torch.Tensor:
        """Pooled features (N, C, roi_h, roi_w) for externally chosen
        boxes, as consumed by the frequency probe."""
        pyramid = self.features(images)
        return self.roi_pool(
            {l: pyramid[l][image_index] for l in self.cfg.levels}, boxes
        )
