"""Cubic Bezier sides: sampling and endpoint-pinned least-squares fitting."""

from __future__ import annotations

import numpy as np
from scipy import optimize

from .polygon import DegenerateGeometryError, Polygon2D


def bernstein(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)[:, None]
    s = 1.0 - t
    return np.hstack([s ** 3, 3 * s * s * t, 3 * s * t * t, t ** 3])


def bezier_sample(ctrl, m: int) -> np.ndarray:
    """Evaluate a cubic at ``m`` uniform parameters on [0, 1]."""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    if ctrl.shape != (4, 2):
        raise ValueError(f"cubic Bezier needs 4 control points, got {ctrl.shape}")
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    pts = bernstein(np.linspace(0.0, 1.0, m)) @ ctrl
    pts[0], pts[-1] = ctrl[0], ctrl[-1]
    return pts


def chord_parameters(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        raise DegenerateGeometryError("all side points coincide")
    return np.concatenate([[0.0], np.cumsum(seg) / total])


def _solve_inner(pts: np.ndarray, t: np.ndarray) -> np.ndarray:
    basis = bernstein(t)
    rhs = pts - np.outer(basis[:, 0], pts[0]) - np.outer(basis[:, 3], pts[-1])
    a = basis[:, 1:3]
    normal = a.T @ a
    if np.linalg.matrix_rank(normal, tol=1e-10) < 2:
        raise DegenerateGeometryError("side points do not determine interior control points")
    return np.vstack([pts[0], np.linalg.solve(normal, a.T @ rhs), pts[-1]])


def bernstein_derivative(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)[:, None]
    s = 1.0 - t
    return np.hstack([-3 * s * s, 3 * s * s - 6 * s * t, 6 * s * t - 3 * t * t, 3 * t * t])


def bezier_fit(points) -> np.ndarray:
    """Fit 4 control points to an ordered side; endpoints are pinned.

    Starts from a least-squares solve at cumulative chord-length parameters,
    then refines the interior control points and the per-point parameters
    jointly with Levenberg-Marquardt, so points taken from a cubic are
    recovered to round-off.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ValueError(f"need at least 4 ordered side points, got shape {pts.shape}")
    if len(np.unique(pts, axis=0)) < 3:
        raise DegenerateGeometryError("a side needs at least 3 distinct points")
    t0 = chord_parameters(pts)
    ctrl = _solve_inner(pts, t0)
    k = len(pts)
    scale = max(float(np.ptp(pts, axis=0).max()), 1e-12)

    def unpack(x):
        c = np.vstack([pts[0], x[:4].reshape(2, 2) * scale, pts[-1]])
        return c, np.concatenate([[0.0], x[4:], [1.0]])

    def residual(x):
        c, t = unpack(x)
        return ((bernstein(t) @ c - pts) / scale).ravel()

    def jacobian(x):
        c, t = unpack(x)
        basis = bernstein(t)
        jac = np.zeros((2 * k, 4 + k - 2))
        for j, col in enumerate((1, 2)):
            for d in range(2):
                jac[d::2, 2 * j + d] = basis[:, col]
        tangent = (bernstein_derivative(t) @ c) / scale
        rows = np.arange(1, k - 1)
        jac[2 * rows, 3 + rows] = tangent[1:-1, 0]
        jac[2 * rows + 1, 3 + rows] = tangent[1:-1, 1]
        return jac

    x0 = np.concatenate([(ctrl[1:3] / scale).ravel(), t0[1:-1]])
    sol = optimize.least_squares(residual, x0, jac=jacobian, method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12)
    if sol.cost <= 0.5 * float(residual(x0) @ residual(x0)):
        ctrl, _ = unpack(sol.x)
    return ctrl


def resample_polygon(poly: Polygon2D, n_points: int) -> Polygon2D:
    """Fit each side with a cubic and resample ``n_points / 2`` points per side."""
    if n_points % 2 or n_points < 4:
        raise ValueError(f"n_points must be even and >= 4, got {n_points}")
    m = n_points // 2
    sides = []
    for side in poly.sides:
        if len(side) == m:
            sides.append(side)
        elif len(side) >= 4:
            sides.append(bezier_sample(bezier_fit(side), m))
        else:
            # too few points for a cubic: resample the polyline by arc length
            t = chord_parameters(side)
            u = np.linspace(0.0, 1.0, m)
            sides.append(np.column_stack([np.interp(u, t, side[:, 0]), np.interp(u, t, side[:, 1])]))
    return Polygon2D(np.vstack(sides))
