"""Positional queries: box encoding, prior point sampling, point encoding and update."""

from __future__ import annotations

import numpy as np

from ..autodiff import ConfigError, LayerNorm, Linear, Module, Tensor, ops


def prior_points_sampling(boxes, n_points: int) -> np.ndarray:
    """Place ``n_points / 2`` points uniformly on the top and bottom box sides.

    ``boxes[..., 4]`` holds ``(cx, cy, w, h)``; the top side runs left to right
    and the bottom side right to left, giving a clockwise polygon (y down).
    Output is ``[..., n_points, 2]`` clipped to the unit square.
    """
    if n_points % 2 or n_points < 4:
        raise ConfigError(f"prior points need an even n_points >= 4, got {n_points}")
    boxes = np.asarray(boxes, dtype=np.float64)
    half = n_points // 2
    x, y, w, h = (boxes[..., i:i + 1] for i in range(4))
    n = np.arange(1, n_points + 1, dtype=np.float64)
    steps = np.where(n <= half, n - 1, n_points - n)
    px = x - w / 2 + steps * w / (half - 1)
    py = np.where(n <= half, y - h / 2, y + h / 2)
    return np.clip(np.stack([px, np.broadcast_to(py, px.shape)], axis=-1), 0.0, 1.0)


def point_update(points, offsets) -> Tensor:
    """sigmoid(inverse_sigmoid(points) + offsets); the result stays in (0, 1)."""
    return ops.sigmoid(ops.add(ops.inverse_sigmoid(points), offsets))


class PointQueryEncoder(Module):
    """Per-point sine encoding -> shared linear -> layer norm."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.d_model = d_model
        self.proj = Linear(d_model, d_model, rng)
        self.norm = LayerNorm(d_model)

    def forward(self, points) -> Tensor:
        return self.norm(self.proj(ops.sine_positional_encoding(points, self.d_model)))


class BoxQueryEncoder(Module):
    """Encode ``(x, y, w, h)`` into one positional vector per instance."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.d_model = d_model
        self.proj = Linear(2 * d_model, d_model, rng)
        self.norm = LayerNorm(d_model)

    def forward(self, boxes, n_points: int) -> Tensor:
        enc = self.norm(self.proj(ops.sine_positional_encoding(boxes, self.d_model)))  # [..., d]
        lead = enc.shape[:-1]
        enc = enc.reshape(lead + (1, self.d_model))
        return ops.broadcast_to(enc, lead + (n_points, self.d_model))
