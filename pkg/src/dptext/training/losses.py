"""Set-prediction losses: Hungarian-matched focal classification plus point L1.

Every decoder layer is supervised (auxiliary losses) and the encoder's
two-stage proposals get their own objectness and box terms, matched over
all memory positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, ops
from ..model.detector import DetectionOutput
from .matching import MatchResult, hungarian_match


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    point: float = 5.0
    alpha: float = 0.25
    gamma: float = 2.0


@dataclass
class Target:
    """Ground truth of one image in normalised coordinates."""

    points: np.ndarray  # [G, N, 2]
    boxes: np.ndarray  # [G, 4] cx, cy, w, h

    @classmethod
    def from_points(cls, points) -> "Target":
        points = np.asarray(points, dtype=np.float64)
        if len(points) == 0:
            return cls(points.reshape(0, 0, 2), np.zeros((0, 4)))
        lo, hi = points.min(axis=1), points.max(axis=1)
        boxes = np.concatenate([(lo + hi) / 2, hi - lo], axis=-1)
        return cls(points, boxes)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class LossBreakdown:
    """``total = cls * classification + point * point_l1 + encoder_proposal``.

    ``classification`` and ``point_l1`` are sums over decoder layers;
    ``aux`` keeps the per-layer values.
    """

    classification: float
    point_l1: float
    encoder_proposal: float
    aux: list[dict[str, float]] = field(default_factory=list)
    total: Tensor | None = None

    @property
    def total_value(self) -> float:
        return float(self.total.data)


def focal_cost(logits: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    """Per-prediction cost of labelling it foreground (lower is better)."""
    p = 1.0 / (1.0 + np.exp(-logits))
    pos = alpha * (1 - p) ** gamma * np.logaddexp(0.0, -logits)
    neg = (1 - alpha) * p ** gamma * np.logaddexp(0.0, logits)
    return pos - neg


def l1_cost(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Mean absolute difference between every prediction and every target, ``[K, G]``."""
    k, g = len(pred), len(gt)
    diff = np.abs(pred.reshape(k, 1, -1) - gt.reshape(1, g, -1))
    return diff.mean(axis=-1)


def match_predictions(logits: np.ndarray, preds: np.ndarray, gt: np.ndarray,
                      weights: LossWeights) -> MatchResult:
    """Hungarian assignment for one image: ``logits [K]``, ``preds [K, ...]``, ``gt [G, ...]``."""
    cost = (weights.cls * focal_cost(logits, weights.alpha, weights.gamma)[:, None]
            + weights.point * l1_cost(preds, gt))
    return hungarian_match(cost)


def _set_loss(logits: Tensor, preds: Tensor, gts: list[np.ndarray], n_gt: int,
              weights: LossWeights) -> tuple[Tensor, Tensor | None]:
    """Focal classification over all predictions and mean L1 over matched ones."""
    b = logits.shape[0]
    rows, cols, targets = [], [], []
    labels = np.zeros(logits.shape)
    for i in range(b):
        if len(gts[i]) == 0:
            continue
        m = match_predictions(logits.data[i], preds.data[i], gts[i], weights)
        rows.extend([i] * len(m.pairs))
        cols.extend(m.pred_indices.tolist())
        targets.append(gts[i][m.gt_indices])
        labels[i, m.pred_indices] = 1.0
    cls = ops.sigmoid_focal_loss(logits, labels, weights.alpha, weights.gamma) * (1.0 / max(n_gt, 1))
    if not rows:
        return cls, None
    matched = ops.getitem(preds, (np.array(rows), np.array(cols)))
    return cls, ops.l1_loss(matched, np.concatenate(targets))


def detection_loss(output: DetectionOutput, targets: list[Target],
                   weights: LossWeights | None = None) -> LossBreakdown:
    w = weights or LossWeights()
    n_gt = sum(len(t) for t in targets)
    gts = [t.points for t in targets]
    total = None
    aux, cls_sum, pt_sum = [], 0.0, 0.0
    for layer in output.layers:
        cls, pt = _set_loss(layer.logits, layer.points, gts, n_gt, w)
        term = cls * w.cls
        if pt is not None:
            term = term + pt * w.point
        total = term if total is None else total + term
        pt_val = float(pt.data) if pt is not None else 0.0
        aux.append({"classification": float(cls.data), "point_l1": pt_val})
        cls_sum += float(cls.data)
        pt_sum += pt_val
    enc_cls, enc_box = _set_loss(output.enc_logits, output.enc_boxes, [t.boxes for t in targets], n_gt, w)
    enc = enc_cls * w.cls
    if enc_box is not None:
        enc = enc + enc_box * w.point
    total = total + enc
    return LossBreakdown(cls_sum, pt_sum, float(enc.data), aux, total)


def layer_l1_to_matched(output: DetectionOutput, targets: list[Target],
                        weights: LossWeights | None = None) -> np.ndarray:
    """Mean point L1 per (image, layer), each layer matched independently; NaN if no gt."""
    w = weights or LossWeights()
    res = np.full((len(targets), len(output.layers)), np.nan)
    for li, layer in enumerate(output.layers):
        for i, t in enumerate(targets):
            if len(t) == 0:
                continue
            m = match_predictions(layer.logits.data[i], layer.points.data[i], t.points, w)
            diff = np.abs(layer.points.data[i][m.pred_indices] - t.points[m.gt_indices])
            res[i, li] = diff.mean()
    return res
