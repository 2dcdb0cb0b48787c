"""Raster polygon IoU and one-to-one F-measure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .polygon import Polygon2D

DEFAULT_RASTER = 512


def _pts(poly) -> np.ndarray:
    return poly.points if isinstance(poly, Polygon2D) else np.asarray(poly, dtype=np.float64)


def rasterize(points: np.ndarray, x0: float, y0: float, pixel: float, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill, sampling each pixel at its centre.

    Each edge crossing a row's centre line toggles the parity of every pixel
    to its right; a running XOR over the toggles yields the mask.
    """
    p = (np.asarray(points, dtype=np.float64) - [x0, y0]) / pixel
    a, b = p, np.roll(p, -1, axis=0)
    ys = np.arange(height) + 0.5
    ya, yb = a[:, 1][None, :], b[:, 1][None, :]
    # half-open rule on y avoids double counting shared vertices
    crosses = (ya <= ys[:, None]) != (yb <= ys[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ys[:, None] - ya) / (yb - ya)
    xc = a[:, 0][None, :] + t * (b[:, 0] - a[:, 0])[None, :]
    rows, cols = np.nonzero(crosses)
    start = np.ceil(xc[rows, cols] - 0.5).astype(np.int64)
    start = np.clip(start, 0, width)
    toggles = np.zeros((height, width + 1), dtype=np.uint8)
    np.bitwise_xor.at(toggles, (rows, start), 1)
    return np.bitwise_xor.accumulate(toggles[:, :width], axis=1).view(bool)


@dataclass(frozen=True)
class IoUResult:
    iou: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.iou


def polygon_iou(a, b, raster: int = DEFAULT_RASTER) -> IoUResult:
    pa, pb = _pts(a), _pts(b)
    lo = np.minimum(pa.min(axis=0), pb.min(axis=0))
    hi = np.maximum(pa.max(axis=0), pb.max(axis=0))
    span = hi - lo
    longest = float(span.max())
    if longest <= 0:
        return IoUResult(0.0, True)
    pixel = longest / raster
    w = max(int(np.ceil(span[0] / pixel)), 1)
    h = max(int(np.ceil(span[1] / pixel)), 1)
    ma = rasterize(pa, lo[0], lo[1], pixel, w, h)
    mb = rasterize(pb, lo[0], lo[1], pixel, w, h)
    union = int(np.count_nonzero(ma | mb))
    if union == 0:
        return IoUResult(0.0, True)
    return IoUResult(np.count_nonzero(ma & mb) / union)


def _boxes_overlap(pa: np.ndarray, pb: np.ndarray) -> bool:
    return bool(np.all(pa.min(axis=0) <= pb.max(axis=0)) and np.all(pb.min(axis=0) <= pa.max(axis=0)))


@dataclass(frozen=True)
class FMeasure:
    precision: float
    recall: float
    f_measure: float
    true_positives: int
    n_predictions: int
    n_ground_truth: int
    vacuous: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall, self.f_measure))


def match_counts(predictions: Sequence, scores: Sequence[float], ground_truth: Sequence,
                 iou_threshold: float = 0.5, raster: int = DEFAULT_RASTER) -> int:
    """True positives under greedy, confidence-ordered one-to-one matching."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    gts = [_pts(g) for g in ground_truth]
    taken = np.zeros(len(gts), dtype=bool)
    tp = 0
    for i in order:
        pp = _pts(predictions[i])
        best, best_j = -1.0, -1
        for j, gp in enumerate(gts):
            if taken[j] or not _boxes_overlap(pp, gp):
                continue
            iou = polygon_iou(pp, gp, raster).iou
            if iou >= iou_threshold and iou > best:
                best, best_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
            tp += 1
    return tp


def prf(tp: int, n_pred: int, n_gt: int) -> FMeasure:
    if n_pred == 0 and n_gt == 0:
        return FMeasure(0.0, 0.0, 0.0, 0, 0, 0, vacuous=True)
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gt if n_gt else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return FMeasure(p, r, f, tp, n_pred, n_gt)


def f_measure(predictions: Sequence, scores: Sequence[float], ground_truth: Sequence,
              iou_threshold: float = 0.5, raster: int = DEFAULT_RASTER) -> FMeasure:
    tp = match_counts(predictions, scores, ground_truth, iou_threshold, raster)
    return prf(tp, len(predictions), len(ground_truth))
