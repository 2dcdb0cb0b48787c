from .bezier import bezier_fit, bezier_sample, resample_polygon
from .canonical import canonicalize_positional_label, make_clockwise, start_moved, start_side
from .evaluation import FMeasure, IoUResult, f_measure, match_counts, polygon_iou, prf, rasterize
from .io import (AnnotationFormatError, ImageRecord, read_annotations, read_pgm, write_annotations,
                 write_pgm)
from .polygon import DegenerateGeometryError, Orientation, Polygon2D, TextAnnotation, is_clockwise, signed_area
from .transform import (INVERSE_ROTATION, ROT_TEST_ANGLES, TRAIN_ROTATION_ANGLES, rotate_annotation,
                        rotate_image, rotate_points)

__all__ = [
    "Polygon2D", "TextAnnotation", "Orientation", "DegenerateGeometryError", "signed_area", "is_clockwise",
    "bezier_sample", "bezier_fit", "resample_polygon",
    "canonicalize_positional_label", "make_clockwise", "start_side", "start_moved",
    "rotate_annotation", "rotate_image", "rotate_points",
    "TRAIN_ROTATION_ANGLES", "INVERSE_ROTATION", "ROT_TEST_ANGLES",
    "polygon_iou", "rasterize", "f_measure", "match_counts", "prf", "FMeasure", "IoUResult",
    "ImageRecord", "read_annotations", "write_annotations", "read_pgm", "write_pgm", "AnnotationFormatError",
]
