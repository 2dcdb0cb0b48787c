"""Rotation about the image centre with an expanded canvas."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy import ndimage

from .canonical import canonicalize_positional_label
from .polygon import Orientation, Polygon2D, TextAnnotation

# Training-time augmentation angles (degrees) and the large-angle test set.
TRAIN_ROTATION_ANGLES = (-45.0, -30.0, -15.0, 15.0, 30.0, 45.0)
INVERSE_ROTATION = 180.0
ROT_TEST_ANGLES = (45.0, 135.0, 180.0, 225.0, 315.0)


def expanded_size(width: int, height: int, angle_degrees: float) -> tuple[int, int]:
    a = math.radians(angle_degrees)
    c, s = abs(math.cos(a)), abs(math.sin(a))
    # round away tiny trig noise so 90/180/360 keep the original size
    w = math.ceil(round(width * c + height * s, 6))
    h = math.ceil(round(width * s + height * c, 6))
    return int(w), int(h)


def rotation_matrix(angle_degrees: float, size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """Affine map (A, t) taking pixel coordinates to the rotated canvas.

    Positive angles rotate counter-clockwise as seen on screen (y down).
    Returns the matrix, the translation and the new ``(width, height)``.
    """
    width, height = size
    new_w, new_h = expanded_size(width, height, angle_degrees)
    a = math.radians(angle_degrees)
    c, s = math.cos(a), math.sin(a)
    mat = np.array([[c, s], [-s, c]])
    centre = np.array([width / 2.0, height / 2.0])
    new_centre = np.array([new_w / 2.0, new_h / 2.0])
    return mat, new_centre - mat @ centre, (new_w, new_h)


def rotate_points(points: np.ndarray, angle_degrees: float, size: tuple[int, int]) -> np.ndarray:
    mat, shift, _ = rotation_matrix(angle_degrees, size)
    return np.asarray(points, dtype=np.float64) @ mat.T + shift


def rotate_image(image: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Bilinear rotation of a 2-D raster onto an expanded canvas (zero fill)."""
    height, width = image.shape
    mat, shift, (new_w, new_h) = rotation_matrix(angle_degrees, (width, height))
    inv = np.linalg.inv(mat)
    # ndimage works in (row, col) index space with pixel centres at integer
    # positions; continuous coordinates put centres at +0.5.
    swap = np.array([[0, 1], [1, 0]])
    inv_rc = swap @ inv @ swap
    offset_xy = -inv @ shift + inv @ np.array([0.5, 0.5]) - np.array([0.5, 0.5])
    offset_rc = offset_xy[::-1]
    return ndimage.affine_transform(image.astype(np.float64), inv_rc, offset=offset_rc,
                                    output_shape=(new_h, new_w), order=1, mode="constant", cval=0.0)


def rotate_annotation(annotation: TextAnnotation, angle_degrees: float, image_size: tuple[int, int],
                      positional: bool = False) -> TextAnnotation:
    """Rotate an annotation with its image; optionally re-canonicalise.

    In reading-order mode the label order follows the text, so a 180 degree
    turn swaps normal and inverse tags.
    """
    pts = rotate_points(annotation.polygon.points, angle_degrees, image_size)
    poly = Polygon2D(pts)
    if positional:
        poly = canonicalize_positional_label(poly)
    orientation = annotation.orientation
    turns = (angle_degrees % 360.0)
    if 90.0 < turns < 270.0 and orientation != Orientation.MIRRORED:
        orientation = Orientation.INVERSE if orientation == Orientation.NORMAL else Orientation.NORMAL
    return replace(annotation, polygon=poly, orientation=orientation)
