import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dptext.geometry import (AnnotationFormatError, DegenerateGeometryError, ImageRecord, Orientation, Polygon2D,
                             TextAnnotation, bezier_fit, bezier_sample, canonicalize_positional_label, f_measure,
                             is_clockwise, polygon_iou, read_annotations, read_pgm, resample_polygon,
                             rotate_annotation, rotate_image, rotate_points, signed_area, start_moved,
                             write_annotations, write_pgm)
from dptext.geometry.canonical import start_side
from dptext.geometry.io import parse_annotations

TL, TR, BR, BL = (0.0, 0.0), (4.0, 0.0), (4.0, 1.0), (0.0, 1.0)


def rect(x0, y0, x1, y1):
    return Polygon2D([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


# -- polygon basics ---------------------------------------------------------

def test_unit_square_area_and_orientation():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert signed_area(sq) == 1.0
    assert is_clockwise(sq)
    assert not is_clockwise(sq[::-1])


def test_collinear_is_degenerate():
    with pytest.raises(DegenerateGeometryError):
        is_clockwise([(0, 0), (1, 0), (2, 0)])


def test_polygon_invariants():
    with pytest.raises(ValueError):
        Polygon2D([(0, 0), (1, 0), (1, 1)])
    with pytest.raises(ValueError):
        Polygon2D([(0, 0), (1, 0), (1, np.nan), (0, 1)])


# -- Bezier -----------------------------------------------------------------

def test_bezier_sample_examples():
    line = bezier_sample([(0, 0), (1, 0), (2, 0), (3, 0)], 3)
    np.testing.assert_allclose(line[1], [1.5, 0.0])
    arch = [(0, 0), (0, 1), (1, 1), (1, 0)]
    pts = bezier_sample(arch, 3)
    assert tuple(pts[0]) == (0.0, 0.0)
    np.testing.assert_allclose(pts[1], [0.5, 0.75])


def test_bezier_fit_roundtrip():
    ctrl = np.array([(0.0, 0.0), (1.0, 2.0), (3.0, 2.5), (4.0, 0.0)])
    np.testing.assert_allclose(bezier_fit(bezier_sample(ctrl, 8)), ctrl, atol=1e-6)


def test_bezier_fit_linear_and_degenerate():
    ctrl = bezier_fit([(0, 0), (1, 1), (2, 2), (3, 3)])
    for p in ctrl:
        assert p[0] == pytest.approx(p[1], abs=1e-9)
    with pytest.raises(DegenerateGeometryError):
        bezier_fit([(0, 0), (1, 1), (0, 0), (1, 1), (0, 0)])


def test_resample_keeps_endpoints():
    poly = Polygon2D(np.vstack([bezier_sample([(0, 0), (2, -1), (4, -1), (6, 0)], 8),
                                bezier_sample([(6, 2), (4, 1), (2, 1), (0, 2)], 8)]))
    out = resample_polygon(poly, 8)
    assert len(out) == 8
    np.testing.assert_allclose(out.points[0], poly.points[0])
    np.testing.assert_allclose(out.points[3], poly.points[7])


# -- canonicaliser ----------------------------------------------------------

def test_canonical_rectangle_unchanged():
    poly = Polygon2D([TL, TR, BR, BL])
    assert canonicalize_positional_label(poly) == poly


def test_reading_order_180_relocates_start():
    out = canonicalize_positional_label(Polygon2D([BR, BL, TL, TR]))
    assert out == Polygon2D([TL, TR, BR, BL])


def test_counter_clockwise_input_becomes_clockwise():
    # a plain reversal keeps each half on one physical side, so [TL, BL] and [BR, TR]
    # stay the sides; they sit left/right at equal height and the left one leads
    out = canonicalize_positional_label(Polygon2D([TL, BL, BR, TR]))
    assert is_clockwise(out)
    assert out == Polygon2D([BL, TL, TR, BR])


def test_clockwise_only_mode_keeps_start_side():
    poly = Polygon2D([BR, BL, TL, TR])
    assert canonicalize_positional_label(poly, clockwise_only=True) == poly


def test_rotated_wide_rectangle_starts_on_higher_side():
    # slight tilt so that after 90 degrees the two long sides have different minimum y
    base = np.array([TL, TR, BR, BL]) * 10 + 20
    tilt = rotate_points(base, 5.0, (64, 64))
    turned = rotate_points(tilt, 90.0, (64, 64))
    out = canonicalize_positional_label(Polygon2D(turned))
    a, b = out.sides
    assert a[:, 1].min() < b[:, 1].min()


@st.composite
def polygons(draw):
    m = draw(st.integers(2, 8))
    cx, cy = draw(st.floats(10, 50)), draw(st.floats(10, 50))
    w, h = draw(st.floats(2, 30)), draw(st.floats(1, 10))
    angle = draw(st.floats(-180, 180))
    bend = draw(st.floats(-0.3, 0.3))
    xs = np.linspace(-w / 2, w / 2, m)
    top = np.column_stack([xs, -h / 2 + bend * xs ** 2 / max(w, 1)])
    bottom = np.column_stack([xs[::-1], h / 2 + bend * xs[::-1] ** 2 / max(w, 1)])
    pts = np.vstack([top, bottom])
    a = np.radians(angle)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    pts = pts @ rot.T + [cx, cy]
    if draw(st.booleans()):
        pts = pts[::-1]
    shift = draw(st.integers(0, 1)) * m
    return Polygon2D(np.roll(pts, shift, axis=0))


@settings(max_examples=300, deadline=None)
@given(polygons())
def test_canonicaliser_idempotent_and_clockwise(poly):
    once = canonicalize_positional_label(poly)
    assert canonicalize_positional_label(once) == once
    assert is_clockwise(once)
    assert sorted(map(tuple, once.points)) == sorted(map(tuple, poly.points))


@settings(max_examples=200, deadline=None)
@given(polygons())
def test_canonical_output_independent_of_labelling(poly):
    # reversed direction and swapped start side describe the same physical shape
    m = len(poly) // 2
    variants = [poly, Polygon2D(poly.points[::-1]), Polygon2D(np.roll(poly.points, m, axis=0))]
    outs = [canonicalize_positional_label(v) for v in variants]
    assert all(o == outs[0] for o in outs)


def test_start_moved():
    a = Polygon2D([BR, BL, TL, TR])
    assert start_moved(a, canonicalize_positional_label(a))
    b = Polygon2D([TL, TR, BR, BL])
    assert not start_moved(b, canonicalize_positional_label(b))
    assert start_side(b) == 0


# -- rotation ---------------------------------------------------------------

def test_rotate_points_180_and_360():
    w, h = 80, 40
    p = rotate_points([[0.25 * w, 0.25 * h]], 180.0, (w, h))
    np.testing.assert_allclose(p, [[0.75 * w, 0.75 * h]], atol=1e-9)
    q = np.random.default_rng(0).uniform(0, 40, (5, 2))
    np.testing.assert_allclose(rotate_points(q, 360.0, (w, h)), q, atol=1e-9)


def test_rotate_image_matches_points():
    img = np.zeros((32, 48))
    img[4:8, 6:14] = 1.0
    out = rotate_image(img, 90.0)
    assert out.shape == (48, 32)
    ys, xs = np.nonzero(out > 0.5)
    centre = rotate_points([[10.0, 6.0]], 90.0, (48, 32))[0]
    assert abs(xs.mean() + 0.5 - centre[0]) < 1.0
    assert abs(ys.mean() + 0.5 - centre[1]) < 1.0


def test_rotate_annotation_flips_orientation_tag():
    ann = TextAnnotation(Polygon2D([TL, TR, BR, BL]), Orientation.NORMAL)
    out = rotate_annotation(ann, 180.0, (8, 8))
    assert out.orientation == Orientation.INVERSE
    pos = rotate_annotation(ann, 180.0, (8, 8), positional=True)
    assert pos.polygon.points[0][1] <= pos.polygon.points[-1][1]


# -- IoU and F --------------------------------------------------------------

def test_iou_identical_disjoint_and_offset():
    a = rect(0, 0, 2, 2)
    assert polygon_iou(a, a).iou == 1.0
    assert polygon_iou(a, rect(5, 5, 6, 6)).iou == 0.0
    assert polygon_iou(a, rect(1, 1, 3, 3)).iou == pytest.approx(1 / 7, abs=0.01)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.5, 10), st.floats(0.5, 10),
       st.floats(0, 10), st.floats(0, 10), st.floats(0.5, 10), st.floats(0.5, 10))
def test_iou_rectangles_match_analytic(x0, y0, w0, h0, x1, y1, w1, h1):
    ix = max(0.0, min(x0 + w0, x1 + w1) - max(x0, x1))
    iy = max(0.0, min(y0 + h0, y1 + h1) - max(y0, y1))
    inter = ix * iy
    expected = inter / (w0 * h0 + w1 * h1 - inter)
    got = polygon_iou(rect(x0, y0, x0 + w0, y0 + h0), rect(x1, y1, x1 + w1, y1 + h1)).iou
    assert got == pytest.approx(expected, abs=0.01)


def test_f_measure_examples():
    g1, g2 = rect(0, 0, 2, 2), rect(5, 5, 7, 7)
    assert tuple(f_measure([g1, g2], [0.9, 0.8], [g1, g2])) == (1.0, 1.0, 1.0)
    p, r, f = f_measure([g1], [0.9], [g1, g2])
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3)
    dup = f_measure([g1, g1], [0.9, 0.8], [g1])
    assert dup.true_positives == 1 and dup.precision == 0.5
    assert f_measure([], [], []).vacuous


# -- IO ---------------------------------------------------------------------

def test_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7)) / 255.0
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_annotation_roundtrip(tmp_path):
    ann = TextAnnotation(Polygon2D([TL, TR, BR, BL]), Orientation.INVERSE, 3)
    rec = ImageRecord(0, 8, 8, "images/00000.pgm", [ann])
    write_annotations(tmp_path / "a.json", [rec])
    back = read_annotations(tmp_path / "a.json")
    assert back[0].annotations[0].polygon == ann.polygon
    assert back[0].annotations[0].orientation == Orientation.INVERSE


@pytest.mark.parametrize("text, needle", [
    ("{not json", ":1:"),
    ('{"images": []}', "top level"),
    ('{"images": [{"id": 0, "width": 8, "height": 8, "file": "x"}],'
     ' "annotations": [{"image_id": 0, "points": [[0, 0], [1, 0], [1, 1]]}]}', "annotations[0].points"),
    ('{"images": [], "annotations": [{"image_id": 4, "points": []}]}', "unknown image"),
])
def test_malformed_annotations_name_the_problem(text, needle):
    with pytest.raises(AnnotationFormatError, match=needle.replace("[", r"\[").replace("]", r"\]")):
        parse_annotations(text)


def test_every_corner_ordering_canonicalises_to_one_of_two_labels():
    corners = [TL, TR, BR, BL]
    results = set()
    for start in range(4):
        for direction in (1, -1):
            order = [corners[(start + direction * i) % 4] for i in range(4)]
            results.add(tuple(map(tuple, canonicalize_positional_label(Polygon2D(order)).points)))
    # the top/bottom split and the left/right split give one canonical label each
    assert len(results) == 2
    assert all(is_clockwise(np.array(r)) for r in results)
