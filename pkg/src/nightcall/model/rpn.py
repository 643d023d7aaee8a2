"""Region proposal network: shared head, decode, per-level NMS."""

from __future__ import annotations

import torch
from torch import nn

from nightcall.model.boxes import clip_boxes, decode_deltas, nms
from nightcall.model.config import ModelConfig


class RpnHead(nn.Module):
    """3x3 trunk with 1x1 objectness and regression branches, shared
    across pyramid levels."""

    def __init__(self, channels: int, anchors_per_position: int):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.SiLU(),
        )
        self.objectness = nn.Conv2d(channels, anchors_per_position, 1)
        self.regression = nn.Conv2d(channels, 4 * anchors_per_position, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        t = self.trunk(x)
        return self.objectness(t), self.regression(t)


def flatten_level(
    obj: torch.Tensor, reg: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """(A, H, W) & (4A, H, W) -> (H*W*A,) & (H*W*A, 4), matching the
    anchor generator's row-major, ratio-innermost order."""
    a = obj.shape[0]
    scores = obj.permute(1, 2, 0).reshape(-1)
    deltas = reg.reshape(a, 4, *reg.shape[1:]).permute(2, 3, 0, 1).reshape(-1, 4)
    return scores, deltas


class Rpn(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.head = RpnHead(cfg.fpn_channels, cfg.anchors_per_position)

    def forward(
        self, pyramid: dict[int, torch.Tensor]
    ) -> dict[int, tuple[torch.Tensor, torch.Tensor]]:
        return {level: self.head(x) for level, x in pyramid.items()}

    def propose(
        self,
        level_outputs: dict[int, tuple[torch.Tensor, torch.Tensor]],
        anchors: dict[int, torch.Tensor],
        image_size: tuple[int, int],
        training: bool,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Decode one image's RPN outputs into scored proposals.

        Per level: top pre-NMS anchors by objectness, decode, clip,
        drop degenerate boxes, NMS. Levels are then pooled and the best
        post-NMS boxes kept. Returns (boxes (M, 4), scores (M,)),
        detached: proposal coordinates are treated as constants by the
        second stage, as in standard two-stage training.
        """
        cfg = self.cfg
        height, width = image_size
        all_boxes = []
        all_scores = []
        for level, (obj, reg) in level_outputs.items():
            scores, deltas = flatten_level(obj.detach(), reg.detach())
            scores = scores.sigmoid()
            k = min(cfg.rpn_pre_nms_topk, scores.shape[0])
            scores, idx = scores.topk(k)
            boxes = decode_deltas(
                anchors[level][idx], deltas[idx], cfg.rpn_reg_weights
            )
            boxes = clip_boxes(boxes, float(width), float(height))
            wide = (boxes[:, 2] - boxes[:, 0]) > 1e-3
            tall = (boxes[:, 3] - boxes[:, 1]) > 1e-3
            keep = wide & tall
            boxes, scores = boxes[keep], scores[keep]
            keep = nms(boxes, scores, cfg.rpn_nms_iou)
            all_boxes.append(boxes[keep])
            all_scores.append(scores[keep])
        boxes = torch.cat(all_boxes)
        scores = torch.cat(all_scores)
        post = cfg.rpn_post_nms_topk_train if training else cfg.rpn_post_nms_topk_test
        k = min(post, scores.shape[0])
        scores, idx = scores.topk(k)
        return boxes[idx], scores
