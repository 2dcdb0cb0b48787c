"""Minimum-cost one-to-one assignment (Kuhn-Munkres with potentials)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteCostError(ValueError):
    def __init__(self, row: int, col: int, value: float):
        self.row, self.col = row, col
        super().__init__(f"cost[{row}, {col}] = {value} is not finite")


@dataclass(frozen=True)
class MatchResult:
    """Matched ``(prediction, ground_truth)`` index pairs, sorted by prediction.

    Predictions not listed are background. ``unmatched_gt`` is non-empty only
    when there are fewer predictions than ground truths.
    """

    pairs: tuple[tuple[int, int], ...]
    total_cost: float
    unmatched_gt: tuple[int, ...] = ()

    @property
    def pred_indices(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=np.int64)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)


def _assign_rows(cost: np.ndarray) -> np.ndarray:
    """Column for each row of a cost matrix with rows <= cols.

    Shortest augmenting path over reduced costs; one row is added per outer
    iteration, so the loop runs O(rows^2 * cols).
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based row matched to column j; column 0 is virtual
    way = np.zeros(m + 1, dtype=np.int64)
    padded = np.zeros((n + 1, m + 1))
    padded[1:, 1:] = cost
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols


def hungarian_match(cost) -> MatchResult:
    """Minimum-total-cost assignment for a ``[K predictions, G ground truths]`` matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    bad = np.argwhere(~np.isfinite(cost))
    if len(bad):
        r, c = bad[0]
        raise NonFiniteCostError(int(r), int(c), float(cost[r, c]))
    k, g = cost.shape
    if k == 0 or g == 0:
        return MatchResult((), 0.0, tuple(range(g)))
    if k >= g:
        gt_to_pred = _assign_rows(cost.T)
        pairs = sorted((int(p), j) for j, p in enumerate(gt_to_pred))
    else:
        pred_to_gt = _assign_rows(cost)
        pairs = [(i, int(j)) for i, j in enumerate(pred_to_gt)]
    matched = {j for _, j in pairs}
    total = float(sum(cost[i, j] for i, j in pairs))
    return MatchResult(tuple(pairs), total, tuple(j for j in range(g) if j not in matched))
