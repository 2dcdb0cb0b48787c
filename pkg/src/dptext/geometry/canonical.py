"""Positional label form: clockwise order, start side chosen by position only."""

from __future__ import annotations

import numpy as np

from .polygon import Polygon2D, is_clockwise

TIE_EPS = 1e-6


def make_clockwise(poly: Polygon2D) -> Polygon2D:
    """Reverse a counter-clockwise polygon.

    A plain reversal keeps each half on one physical side, so the side split
    stays valid: ``[a0..a(m-1), b0..b(m-1)]`` becomes ``[b(m-1)..b0, a(m-1)..a0]``.
    """
    if is_clockwise(poly):
        return poly
    return Polygon2D(poly.points[::-1])


def start_side(poly: Polygon2D) -> int:
    """Index (0 or 1) of the side the positional label starts on.

    Top/bottom arranged sides (centroid offset mostly vertical) start on the
    upper side; left/right arranged sides start on the side reaching highest
    (smaller minimum y), and on a tie the left side (smaller mean x). The
    choice depends only on where the points are, never on their labelling.
    """
    a, b = poly.sides
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    dx, dy = abs(ca[0] - cb[0]), abs(ca[1] - cb[1])
    if dy >= dx:
        return 0 if ca[1] <= cb[1] else 1
    min_a, min_b = a[:, 1].min(), b[:, 1].min()
    if abs(min_a - min_b) < TIE_EPS:
        return 0 if ca[0] <= cb[0] else 1
    return 0 if min_a < min_b else 1


def canonicalize_positional_label(poly: Polygon2D, clockwise_only: bool = False) -> Polygon2D:
    poly = make_clockwise(poly)
    if clockwise_only or start_side(poly) == 0:
        return poly
    m = len(poly) // 2
    return Polygon2D(np.roll(poly.points, -m, axis=0))


def start_moved(before: Polygon2D, after: Polygon2D) -> bool:
    return not np.array_equal(before.points[0], after.points[0])
