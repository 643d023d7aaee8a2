"""Box arithmetic on tensors: IoU, delta coding, clipping, NMS.

Boxes are (N, 4) tensors in (x0, y0, x1, y1) image-pixel order, x along
time and y along frequency, matching the PixelBox convention.
"""

from __future__ import annotations

import math

import torch

# exp() clamp for decoded sizes; a proposal can grow at most ~1000/16 x
_MAX_SCALE_CLAMP = math.log(1000.0 / 16)


def box_area(boxes: torch.Tensor) -> torch.Tensor:
    return (boxes[:, 2] - boxes[:, 0]).clamp(min=0) * (
        boxes[:, 3] - boxes[:, 1]
    ).clamp(min=0)


def box_iou_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IoU, shape (len(a), len(b)); zero-area boxes give 0."""
    area_a = box_area(a)[:, None]
    area_b = box_area(b)[None, :]
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a + area_b - inter
    return torch.where(union > 0, inter / union, torch.zeros_like(inter))


def encode_deltas(
    src: torch.Tensor, dst: torch.Tensor, weights: tuple[float, ...]
) -> torch.Tensor:
    """Regression targets (tx, ty, tw, th) taking src boxes onto dst."""
    wx, wy, ww, wh = weights
    sw = src[:, 2] - src[:, 0]
    sh = src[:, 3] - src[:, 1]
    scx = src[:, 0] + 0.5 * sw
    scy = src[:, 1] + 0.5 * sh
    dw = dst[:, 2] - dst[:, 0]
    dh = dst[:, 3] - dst[:, 1]
    dcx = dst[:, 0] + 0.5 * dw
    dcy = dst[:, 1] + 0.5 * dh
    return torch.stack(
        [
            wx * (dcx - scx) / sw,
            wy * (dcy - scy) / sh,
            ww * torch.log(dw / sw),
            wh * torch.log(dh / sh),
        ],
        dim=1,
    )


def decode_deltas(
    src: torch.Tensor, deltas: torch.Tensor, weights: tuple[float, ...]
) -> torch.Tensor:
    """Inverse of encode_deltas; zero deltas return src exactly."""
    wx, wy, ww, wh = weights
    sw = src[:, 2] - src[:, 0]
    sh = src[:, 3] - src[:, 1]
    scx = src[:, 0] + 0.5 * sw
    scy = src[:, 1] + 0.5 * sh
    dx = deltas[:, 0] / wx
    dy = deltas[:, 1] / wy
    dw = torch.clamp(deltas[:, 2] / ww, max=_MAX_SCALE_CLAMP)
    dh = torch.clamp(deltas[:, 3] / wh, max=_MAX_SCALE_CLAMP)
    cx = scx + dx * sw
    cy = scy + dy * sh
    w = sw * torch.exp(dw)
    h = sh * torch.exp(dh)
    return torch.stack(
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=1
    )


def clip_boxes(boxes: torch.Tensor, width: float, height: float) -> torch.Tensor:
    x0 = boxes[:, 0].clamp(0, width)
    y0 = boxes[:, 1].clamp(0, height)
    x1 = boxes[:, 2].clamp(0, width)
    y1 = boxes[:, 3].clamp(0, height)
    return torch.stack([x0, y0, x1, y1], dim=1)


def nms(boxes: torch.Tensor, scores: torch.Tensor, iou_threshold: float) -> torch.Tensor:
    """Greedy suppression; returns kept indices into the input.

    Candidates are visited by descending score with ties broken by
    (x0, y0, x1, y1), which makes the result independent of input order.
    """
    n = boxes.shape[0]
    if n == 0:
        return torch.empty(0, dtype=torch.int64)
    # lexicographic order: score desc, then coordinates asc
    order = torch.arange(n)
    for col in (3, 2, 1, 0):
        key = boxes[order, col]
        order = order[torch.argsort(key, stable=True)]
    key = scores[order]
    order = order[torch.argsort(key, stable=True, descending=True)]
    iou = box_iou_matrix(boxes, boxes)
    alive = torch.ones(n, dtype=torch.bool)
    keep = []
    for idx in order.tolist():
        if not alive[idx]:
            continue
        keep.append(idx)
        alive &= iou[idx] <= iou_threshold
        alive[idx] = False
    return torch.tensor(keep, dtype=torch.int64)
