"""Dataset files: binary PGM images and the per-split annotation JSON."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polygon import Orientation, Polygon2D, TextAnnotation


class AnnotationFormatError(ValueError):
    """Malformed annotation file; the message names the offending field."""


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit P5 PGM; float input in [0, 1] is scaled to 0..255."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM and return floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise AnnotationFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return data.astype(np.float64) / maxval


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass
class ImageRecord:
    id: int
    width: int
    height: int
    file: str
    annotations: list[TextAnnotation] = field(default_factory=list)


def dataset_to_json(records: list[ImageRecord]) -> dict:
    images, anns = [], []
    for rec in records:
        images.append({"id": rec.id, "width": rec.width, "height": rec.height, "file": rec.file})
        for a in rec.annotations:
            anns.append({"image_id": rec.id, "instance_id": a.instance_id,
                         "points": [[float(x), float(y)] for x, y in a.polygon.points],
                         "orientation": a.orientation.value})
    return {"images": images, "annotations": anns}


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def write_annotations(path, records: list[ImageRecord]) -> None:
    atomic_write_text(path, dump_json(dataset_to_json(records)))


def parse_annotations(text: str, source: str = "<string>") -> list[ImageRecord]:
    """Parse the annotation JSON; errors carry line or field context."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict) or "images" not in obj or "annotations" not in obj:
        raise AnnotationFormatError(f"{source}: top level must hold 'images' and 'annotations'")
    records: dict[int, ImageRecord] = {}
    for i, im in enumerate(obj["images"]):
        try:
            rec = ImageRecord(int(im["id"]), int(im["width"]), int(im["height"]), str(im["file"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationFormatError(f"{source}: images[{i}]: bad or missing field {exc}") from None
        records[rec.id] = rec
    for i, an in enumerate(obj["annotations"]):
        where = f"{source}: annotations[{i}]"
        try:
            image_id = int(an["image_id"])
            pts = np.asarray(an["points"], dtype=np.float64)
            orient = Orientation(an.get("orientation", "normal"))
        except KeyError as exc:
            raise AnnotationFormatError(f"{where}: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise AnnotationFormatError(f"{where}: {exc}") from None
        if image_id not in records:
            raise AnnotationFormatError(f"{where}.image_id: unknown image {image_id}")
        try:
            poly = Polygon2D(pts)
        except ValueError as exc:
            raise AnnotationFormatError(f"{where}.points: {exc}") from None
        rec = records[image_id]
        inst = int(an.get("instance_id", len(rec.annotations)))
        rec.annotations.append(TextAnnotation(poly, orient, inst))
    return list(records.values())


def read_annotations(path) -> list[ImageRecord]:
    return parse_annotations(Path(path).read_text(encoding="utf-8"), str(path))
