"""Dataset splits built from synthetic scenes, and conversion to model targets."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import (INVERSE_ROTATION, ROT_TEST_ANGLES, TRAIN_ROTATION_ANGLES, DegenerateGeometryError,
                        ImageRecord, Polygon2D, canonicalize_positional_label, read_annotations, read_pgm,
                        resample_polygon, write_annotations, write_pgm)
from ..geometry.io import atomic_write_text, dump_json
from .losses import Target
from .synth import SceneParams, SyntheticScene, generate_synthetic_scene, resize_scene, rotate_scene

# stream ids keep the scene seeds of different splits disjoint
SPLIT_STREAMS = {"train": 1, "normal": 2, "inverse": 3, "single": 4}


def scene_seeds(seed: int, split: str, count: int) -> list[int]:
    ss = np.random.SeedSequence([seed, SPLIT_STREAMS[split]])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]


def build_split(seed: int, split: str, count: int, params: SceneParams) -> list[SyntheticScene]:
    return [generate_synthetic_scene(s, params) for s in scene_seeds(seed, split, count)]


def rotated_split(scenes: list[SyntheticScene], size: int) -> list[SyntheticScene]:
    """Each scene plus its copies at the large test angles, rescaled to ``size``."""
    out = []
    for scene in scenes:
        out.append(scene)
        out.extend(resize_scene(rotate_scene(scene, a), size) for a in ROT_TEST_ANGLES)
    return out


def augment(scene: SyntheticScene, rng: np.random.Generator, size: int) -> SyntheticScene:
    """Training-time rotation: keep the scene half the time, else a random angle.

    The angle pool is the six small training angles plus the 180 degree turn.
    """
    if rng.uniform() < 0.5:
        return scene
    pool = TRAIN_ROTATION_ANGLES + (INVERSE_ROTATION,)
    angle = pool[int(rng.integers(len(pool)))]
    return resize_scene(rotate_scene(scene, angle), size)


def polygon_target(poly: Polygon2D, n_points: int, label_mode: str) -> np.ndarray:
    """Resample a label to ``n_points`` and put it in the requested label form."""
    poly = resample_polygon(poly, n_points)
    if label_mode == "positional":
        poly = canonicalize_positional_label(poly)
    elif label_mode != "original":
        raise ValueError(f"unknown label mode {label_mode!r}")
    return poly.points


def scene_target(scene: SyntheticScene, n_points: int, label_mode: str) -> Target:
    w, h = scene.size
    pts = []
    for ann in scene.annotations:
        try:
            pts.append(polygon_target(ann.polygon, n_points, label_mode) / [w, h])
        except DegenerateGeometryError:
            continue
    return Target.from_points(np.array(pts).reshape(len(pts), n_points, 2))


@dataclass
class Batch:
    images: np.ndarray  # [B, H, W]
    targets: list[Target]
    scenes: list[SyntheticScene]


def make_batch(scenes: list[SyntheticScene], n_points: int, label_mode: str) -> Batch:
    images = np.stack([s.image for s in scenes])
    return Batch(images, [scene_target(s, n_points, label_mode) for s in scenes], scenes)



def save_dataset(directory, scenes: list[SyntheticScene], extra_meta: dict | None = None) -> None:
    """Write ``images/*.pgm`` plus ``annotations.json`` (and ``scenes.json`` metadata)."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i, scene in enumerate(scenes):
        name = f"images/{i:05d}.pgm"
        write_pgm(root / name, scene.image)
        w, h = scene.size
        records.append(ImageRecord(i, w, h, name, list(scene.annotations)))
    write_annotations(root / "annotations.json", records)
    meta = {"scenes": [s.meta for s in scenes], **(extra_meta or {})}
    atomic_write_text(root / "scenes.json", dump_json(meta))


def load_dataset(directory) -> list[SyntheticScene]:
    root = Path(directory)
    scenes = []
    for rec in read_annotations(root / "annotations.json"):
        image = read_pgm(root / rec.file)
        scenes.append(SyntheticScene(image, list(rec.annotations), {"id": rec.id, "file": rec.file}))
    return scenes
