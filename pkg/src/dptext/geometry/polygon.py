from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

AREA_EPS = 1e-9


class DegenerateGeometryError(ValueError):
    """Zero-area, collinear or coincident input where a shape was required."""


class Orientation(str, enum.Enum):
    NORMAL = "normal"
    INVERSE = "inverse"
    MIRRORED = "mirrored"


@dataclass(frozen=True, eq=False)
class Polygon2D:
    """Ordered control points of one text instance, pixel coordinates, y down.

    ``points[:N//2]`` is one long side and ``points[N//2:]`` the other,
    traversed in opposite directions.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"polygon points must be [N, 2], got {pts.shape}")
        n = len(pts)
        if n < 4 or n % 2:
            raise ValueError(f"polygon needs an even number >= 4 of points, got {n}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polygon contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon2D) and np.array_equal(self.points, other.points)

    @property
    def sides(self) -> tuple[np.ndarray, np.ndarray]:
        m = len(self.points) // 2
        return self.points[:m], self.points[m:]

    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def tolist(self) -> list[list[float]]:
        return self.points.tolist()


@dataclass(frozen=True)
class TextAnnotation:
    polygon: Polygon2D
    orientation: Orientation = Orientation.NORMAL
    instance_id: int = 0


def _points(poly) -> np.ndarray:
    return poly.points if isinstance(poly, Polygon2D) else np.asarray(poly, dtype=np.float64)


def signed_area(poly) -> float:
    """Shoelace area; positive for clockwise traversal in y-down coordinates."""
    p = _points(poly)
    if len(p) < 3:
        raise ValueError("signed_area needs at least 3 points")
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def is_clockwise(poly) -> bool:
    area = signed_area(poly)
    if abs(area) < AREA_EPS:
        raise DegenerateGeometryError(f"polygon area {area:.3g} is degenerate")
    return area > 0
