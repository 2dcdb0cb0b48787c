"""Synthetic ribbon scenes with reading-direction cues and polygon labels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from ..geometry import (Orientation, Polygon2D, TextAnnotation, bezier_fit, bezier_sample, rasterize,
                        rotate_annotation, rotate_image)

MAX_ATTEMPTS = 100


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneParams:
    size: int = 64
    instances: tuple[int, int] = (1, 3)
    length: tuple[float, float] = (16.0, 36.0)
    thickness: tuple[float, float] = (7.0, 11.0)
    # sagitta of the quadratic spine as a fraction of its length
    curvature: tuple[float, float] = (-0.25, 0.25)
    tilt_degrees: tuple[float, float] = (-15.0, 15.0)
    inverse_prob: float = 0.03
    mirror_prob: float = 0.0
    n_points: int = 16
    noise: float = 0.03
    rotation: float = 0.0
    spine_samples: int = 24

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


@dataclass
class SyntheticScene:
    image: np.ndarray  # [H, W] floats in [0, 1]
    annotations: list[TextAnnotation]
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[0]


def _ribbon(rng: np.random.Generator, p: SceneParams) -> dict:
    return {
        "centre": rng.uniform(0, p.size, 2),
        "length": rng.uniform(*p.length),
        "thickness": rng.uniform(*p.thickness),
        "bend": rng.uniform(*p.curvature),
        "tilt": rng.uniform(*p.tilt_degrees),
        "inverse": bool(rng.uniform() < p.inverse_prob),
        "mirrored": bool(rng.uniform() < p.mirror_prob),
    }


def ribbon_sides(spec: dict, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense top and bottom sides, both ordered along the reading direction."""
    length, thick = spec["length"], spec["thickness"]
    s = np.linspace(-length / 2, length / 2, m)
    sag = spec["bend"] * length
    v = sag * (1.0 - (2.0 * s / length) ** 2)
    dv = sag * (-8.0 * s / length ** 2)
    tangent = np.stack([np.ones_like(s), dv], -1)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], -1)  # points to +v (down on screen)
    spine = np.stack([s, v], -1)
    top = spine - normal * thick / 2
    bottom = spine + normal * thick / 2
    if spec["mirrored"]:
        top, bottom = top[::-1].copy(), bottom[::-1].copy()
        top[:, 0] *= -1
        bottom[:, 0] *= -1
        top, bottom = top[::-1], bottom[::-1]
    angle = math.radians(spec["tilt"] + (180.0 if spec["inverse"] else 0.0))
    c, si = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -si], [si, c]])
    return top @ rot.T + spec["centre"], bottom @ rot.T + spec["centre"]


def label_polygon(top: np.ndarray, bottom: np.ndarray, n_points: int) -> Polygon2D:
    """Reading-order label: top side start to end, then bottom side end to start."""
    half = n_points // 2
    a = bezier_sample(bezier_fit(top), half)
    b = bezier_sample(bezier_fit(bottom[::-1]), half)
    return Polygon2D(np.vstack([a, b]))


def _paint(image: np.ndarray, top: np.ndarray, bottom: np.ndarray) -> None:
    """Fill the ribbon strip by strip, brightening along the reading direction."""
    h, w = image.shape
    m = len(top)
    for i in range(m - 1):
        quad = np.array([top[i], top[i + 1], bottom[i + 1], bottom[i]])
        mask = rasterize(quad, 0.0, 0.0, 1.0, w, h)
        image[mask] = 0.25 + 0.75 * (i + 0.5) / (m - 1)


def _bbox(pts: np.ndarray, pad: float) -> np.ndarray:
    return np.concatenate([pts.min(0) - pad, pts.max(0) + pad])


def _overlaps(a: np.ndarray, b: np.ndarray) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def _place(rng: np.random.Generator, p: SceneParams, boxes: list) -> tuple | None:
    for _ in range(MAX_ATTEMPTS):
        spec = _ribbon(rng, p)
        top, bottom = ribbon_sides(spec, p.spine_samples)
        pts = np.vstack([top, bottom])
        if pts.min() < 1.0 or pts.max() > p.size - 1.0:
            continue
        box = _bbox(pts, 2.0)
        if any(_overlaps(box, other) for other in boxes):
            continue
        return spec, top, bottom, box
    return None


def _layout(rng: np.random.Generator, p: SceneParams, count: int) -> list | None:
    boxes, placed = [], []
    for _ in range(count):
        found = _place(rng, p, boxes)
        if found is None:
            return None
        boxes.append(found[3])
        placed.append(found[:3])
    return placed


def generate_synthetic_scene(seed: int, params: SceneParams | None = None) -> SyntheticScene:
    """Render 1-3 non-overlapping ribbons; each brightens from its reading start to its end.

    An instance gets up to 100 placement draws; if one cannot be placed the
    whole layout is redrawn, and after 100 failed layouts the scene errors.
    """
    p = params or SceneParams()
    rng = np.random.default_rng(seed)
    count = int(rng.integers(p.instances[0], p.instances[1] + 1))
    for _ in range(MAX_ATTEMPTS):
        placed = _layout(rng, p, count)
        if placed is not None:
            break
    else:
        raise SceneGenerationError(f"seed {seed}: could not place {count} ribbons "
                                   f"after {MAX_ATTEMPTS} layouts")
    image = np.zeros((p.size, p.size))
    annotations, specs = [], []
    for inst, (spec, top, bottom) in enumerate(placed):
        _paint(image, top, bottom)
        if spec["mirrored"]:
            orient = Orientation.MIRRORED
        elif spec["inverse"]:
            orient = Orientation.INVERSE
        else:
            orient = Orientation.NORMAL
        annotations.append(TextAnnotation(label_polygon(top, bottom, p.n_points), orient, inst))
        specs.append({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in spec.items()})
    if p.noise > 0:
        image = image + rng.normal(0.0, p.noise, image.shape)
    # 8-bit quantisation so a scene survives the PGM round trip unchanged
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    scene = SyntheticScene(image, annotations, {"seed": seed, "instances": specs, "rotation": 0.0})
    if p.rotation:
        scene = rotate_scene(scene, p.rotation)
    return scene


def rotate_scene(scene: SyntheticScene, angle: float, positional: bool = False) -> SyntheticScene:
    size = scene.size
    image = np.clip(rotate_image(scene.image, angle), 0.0, 1.0)
    anns = [rotate_annotation(a, angle, size, positional) for a in scene.annotations]
    meta = dict(scene.meta, rotation=float(scene.meta.get("rotation", 0.0)) + angle)
    return SyntheticScene(image, anns, meta)


def resize_scene(scene: SyntheticScene, size: int) -> SyntheticScene:
    """Bilinearly rescale a square scene to ``size`` pixels, scaling the labels."""
    h, w = scene.image.shape
    if (h, w) == (size, size):
        return scene
    sx, sy = size / w, size / h
    image = ndimage.affine_transform(scene.image, np.diag([1 / sy, 1 / sx]),
                                     offset=(0.5 / sy - 0.5, 0.5 / sx - 0.5),
                                     output_shape=(size, size), order=1, mode="constant")
    anns = [replace(a, polygon=Polygon2D(a.polygon.points * [sx, sy])) for a in scene.annotations]
    return SyntheticScene(image, anns, dict(scene.meta))
