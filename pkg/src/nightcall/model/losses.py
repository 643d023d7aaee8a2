"""Target assignment, balanced sampling, and the four detector losses."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from nightcall.model.boxes import box_iou_matrix, encode_deltas
from nightcall.model.config import ModelConfig

SMOOTH_L1_BETA = 1.0 / 9.0

POSITIVE = 1
NEGATIVE = 0
IGNORE = -1


def assign_targets(
    candidates: torch.Tensor,
    gt: torch.Tensor,
    pos_iou: float,
    neg_iou: float,
    ignore_regions: torch.Tensor | None = None,
    force_best_per_gt: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Label candidates against ground truth by IoU.

    Returns (labels, matched_gt_index): labels in {POSITIVE, NEGATIVE,
    IGNORE}. A candidate is positive at IoU >= pos_iou, negative below
    neg_iou, ignored in between. Each gt's best-overlapping candidate is
    forced positive (RPN convention) when force_best_per_gt. Candidates
    overlapping an ignore region (sub-visible call fragments) are never
    negatives.
    """
    n = candidates.shape[0]
    device = candidates.device
    labels = torch.full((n,), NEGATIVE, dtype=torch.int64, device=device)
    matched = torch.zeros(n, dtype=torch.int64, device=device)
    if gt.shape[0] > 0:
        iou = box_iou_matrix(candidates, gt)
        best_iou, best_gt = iou.max(dim=1)
        matched = best_gt
        labels[best_iou >= pos_iou] = POSITIVE
        between = (best_iou >= neg_iou) & (best_iou < pos_iou)
        labels[between] = IGNORE
        if force_best_per_gt:
            gt_best = iou.max(dim=0).values  # (G,)
            for g in range(gt.shape[0]):
                if gt_best[g] <= 0:
                    continue  # gt overlaps nothing; cannot be matched
                hits = (iou[:, g] == gt_best[g]).nonzero(as_tuple=True)[0]
                labels[hits] = POSITIVE
                matched[hits] = g
    if ignore_regions is not None and ignore_regions.shape[0] > 0:
        overlap = box_iou_matrix(candidates, ignore_regions).max(dim=1).values
        veto = (overlap >= neg_iou) & (labels == NEGATIVE)
        labels[veto] = IGNORE
    return labels, matched


def sample_balanced(
    labels: torch.Tensor,
    batch: int,
    pos_fraction: float,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Random positive/negative subsets honoring the positive fraction.

    Returns (pos_idx, neg_idx). Sampling uses the provided generator
    only, so identical generator state yields identical samples.
    """
    pos = (labels == POSITIVE).nonzero(as_tuple=True)[0]
    neg = (labels == NEGATIVE).nonzero(as_tuple=True)[0]
    n_pos = min(pos.numel(), int(batch * pos_fraction))
    n_neg = min(neg.numel(), batch - n_pos)
    if pos.numel() > n_pos:
        perm = torch.randperm(pos.numel(), generator=generator)[:n_pos]
        pos = pos[perm]
    if neg.numel() > n_neg:
        perm = torch.randperm(neg.numel(), generator=generator)[:n_neg]
        neg = neg[perm]
    return pos, neg


def rpn_loss(
    scores: torch.Tensor,
    deltas: torch.Tensor,
    anchors: torch.Tensor,
    gt: torch.Tensor,
    ignore_regions: torch.Tensor | None,
    cfg: ModelConfig,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Objectness BCE + smooth-L1 on positives, normalized by the
    sampled count. No positives (empty window) -> regression term 0."""
    labels, matched = assign_targets(
        anchors, gt, cfg.rpn_pos_iou, cfg.rpn_neg_iou, ignore_regions
    )
    pos, neg = sample_balanced(labels, cfg.rpn_batch, cfg.rpn_pos_fraction, generator)
    sampled = torch.cat([pos, neg])
    n_sampled = max(sampled.numel(), 1)
    target = torch.zeros(n_sampled, dtype=scores.dtype, device=scores.device)
    target[: pos.numel()] = 1.0
    obj = F.binary_cross_entropy_with_logits(scores[sampled], target)
    if pos.numel() == 0:
        reg = scores.sum() * 0.0
    else:
        reg_target = encode_deltas(anchors[pos], gt[matched[pos]], cfg.rpn_reg_weights)
        reg = (
            F.smooth_l1_loss(
                deltas[pos], reg_target, beta=SMOOTH_L1_BETA, reduction="sum"
            )
            / n_sampled
        )
    return obj, reg


def rcnn_loss(
    cls_logits: torch.Tensor,
    box_deltas: torch.Tensor,
    proposals: torch.Tensor,
    labels: torch.Tensor,
    matched: torch.Tensor,
    gt: torch.Tensor,
    gt_labels: torch.Tensor,
    cfg: ModelConfig,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy over classes+background, smooth-L1 on the matched
    class's deltas. Inputs are the already-sampled proposal set; labels
    holds POSITIVE/NEGATIVE per row."""
    n = proposals.shape[0]
    if n == 0:
        zero = cls_logits.sum() * 0.0
        return zero, zero
    classes = torch.full(
        (n,), cfg.num_classes, dtype=torch.int64, device=cls_logits.device
    )
    pos_mask = labels == POSITIVE
    classes[pos_mask] = gt_labels[matched[pos_mask]]
    cls = F.cross_entropy(cls_logits, classes)
    if not pos_mask.any():
        return cls, cls_logits.sum() * 0.0
    pos_idx = pos_mask.nonzero(as_tuple=True)[0]
    reg_target = encode_deltas(
        proposals[pos_idx], gt[matched[pos_idx]], cfg.rcnn_reg_weights
    )
    per_class = box_deltas.reshape(n, cfg.num_classes, 4)
    picked = per_class[pos_idx, classes[pos_idx]]
    reg = (
        F.smooth_l1_loss(picked, reg_target, beta=SMOOTH_L1_BETA, reduction="sum") / n
    )
    return cls, reg
