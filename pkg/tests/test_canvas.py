import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialcanvas.canvas import (
    Canvas,
    DegenerateExtent,
    InfoSeed,
    ObjectInfo,
    PixelOutOfFrame,
    boundary_lookup,
    build_frame,
    dump_canvas,
    rasterize,
    rasterize_points,
    union_frame,
    utility_canvas,
)
from spatialcanvas.geometry import (
    Circle,
    Containment,
    GeometricObject,
    HalfSpace,
    Point2,
    Rect,
    classify_points,
    validate_polygon,
)
from spatialcanvas.workloads import random_polygon

from .conftest import square

UNIT = Rect.from_bounds(0, 0, 1, 1)
SEED = InfoSeed(7)


def box_meets_segment(box, seg):
    """Liang-Barsky clip of a closed segment against a closed box."""
    x0, y0, x1, y1 = seg
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - box[0]), (dx, box[2] - x0), (-dy, y0 - box[1]), (dy, box[3] - y0)):
        if p == 0:
            if q < 0:
                return False
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def pixel_boxes(frame):
    i, j = np.meshgrid(np.arange(frame.width), np.arange(frame.height))
    x0 = frame.extent.min.x + i * frame.dx
    y0 = frame.extent.min.y + j * frame.dy
    return i.ravel(), j.ravel(), np.c_[x0.ravel(), y0.ravel(), (x0 + frame.dx).ravel(), (y0 + frame.dy).ravel()]


def fill_of(c):
    r = c.dense().rows[2]
    return np.zeros((c.frame.height, c.frame.width), bool) if r is None else r.present


def center_classes(frame, poly):
    x = frame.center_x(np.arange(frame.width))
    y = frame.center_y(np.arange(frame.height))
    xx, yy = np.meshgrid(x, y)
    return classify_points(np.c_[xx.ravel(), yy.ravel()], poly).reshape(frame.height, frame.width)


class TestFrame:
    def test_pixel_box(self):
        f = build_frame(UNIT, 4, 4)
        assert f.pixel_box(0, 0) == Rect.from_bounds(0, 0, 0.25, 0.25)

    def test_world_to_pixel(self):
        f = build_frame(UNIT, 4, 4)
        assert f.pixel_of(Point2(0.99, 0.99)) == (3, 3)
        assert f.pixel_of(Point2(1.0, 0.5)) is None

    def test_degenerate_extent(self):
        with pytest.raises(DegenerateExtent):
            build_frame(Rect.from_bounds(1, 1, 1, 1), 4, 4)

    def test_union_frame_margin(self):
        f = union_frame([Rect.from_bounds(0, 0, 1, 1), Rect.from_bounds(1, 1, 2, 2)], resolution=64)
        assert f.extent.as_tuple() == pytest.approx((-0.02, -0.02, 2.02, 2.02))
        assert (f.width, f.height) == (64, 64)

    def test_union_frame_empty(self):
        with pytest.raises(DegenerateExtent):
            union_frame([])


class TestRasterize:
    def test_single_point(self, unit_frame4):
        c = rasterize(GeometricObject.of(Point2(0.5, 0.5)), SEED, unit_frame4)
        assert c.count_nonnull() == 1
        m = c.cell(2, 2)
        assert m.r0 == ObjectInfo(7, 1.0, 0.0) and m.r1 is None and m.r2 is None

    def test_unit_square_matches_center_pip(self, unit_square):
        f = build_frame(Rect.from_bounds(0, 0, 2, 2), 16, 16)
        c = rasterize(GeometricObject.of(unit_square), SEED, f)
        want = center_classes(f, unit_square) == Containment.INSIDE
        assert np.array_equal(fill_of(c), want)

    def test_annulus(self):
        f = build_frame(Rect.from_bounds(0, 0, 2, 2), 16, 16)
        ring = validate_polygon([
            [(0.2, 0.2), (1.8, 0.2), (1.8, 1.8), (0.2, 1.8)],
            [(0.6, 0.6), (1.4, 0.6), (1.4, 1.4), (0.6, 1.4)],
        ])
        c = rasterize(GeometricObject.of(ring), SEED, f)
        fill = fill_of(c)
        assert np.array_equal(fill, center_classes(f, ring) == Containment.INSIDE)
        assert not fill[8, 8] and fill[2, 2]

    def test_outside_frame_is_empty(self, unit_frame4):
        c = rasterize(GeometricObject.of(square(5, 5, 6, 6)), SEED, unit_frame4)
        assert c.is_empty() and len(c.boundary_flat()) == 0

    def test_point_batch_prunes_outside(self, unit_frame4):
        b = rasterize_points(np.array([[0.1, 0.1], [2.0, 2.0], [0.9, 0.6]]), np.array([1, 2, 3]), unit_frame4)
        assert len(b) == 2
        assert b.cells.rows[0].id.tolist() == [1, 3]
        assert (b.pix_i.tolist(), b.pix_j.tolist()) == ([0, 3], [0, 2])


class TestUtility:
    def test_rect_equals_polygon(self, unit_square):
        f = build_frame(Rect.from_bounds(-0.5, -0.5, 1.5, 1.5), 32, 32)
        a = utility_canvas(UNIT, SEED, f)
        b = rasterize(GeometricObject.of(unit_square), SEED, f)
        assert a.equals(b)
        assert np.array_equal(a.boundary_flat(), b.boundary_flat())

    def test_circle(self):
        f = build_frame(Rect.from_bounds(-2, -2, 2, 2), 20, 20)
        c = utility_canvas(Circle(Point2(0, 0), 1), SEED, f)
        # pixel 14 has center 0.9, pixel 15 has 1.1
        assert f.center_x(14) == pytest.approx(0.9) and f.center_y(9) == pytest.approx(-0.1)
        assert c.cell(14, 9).r2 is not None
        assert c.cell(15, 9).r2 is None

    def test_halfspace(self):
        f = build_frame(UNIT, 10, 10)
        c = utility_canvas(HalfSpace(1, 0, -0.5), SEED, f)
        assert c.cell(4, 3).r2 is not None
        assert c.cell(6, 3).r2 is None

    def test_circle_boundary_covers_disc_edge(self):
        f = build_frame(Rect.from_bounds(-2, -2, 2, 2), 40, 40)
        circ = Circle(Point2(0.13, -0.21), 1.1)
        c = utility_canvas(circ, SEED, f)
        bnd = set(c.boundary_flat().tolist())
        rng = np.random.default_rng(3)
        t = rng.uniform(0, 2 * np.pi, 2000)
        xy = np.c_[circ.center.x + circ.r * np.cos(t), circ.center.y + circ.r * np.sin(t)]
        i, j, ok = f.world_to_pixel(xy[:, 0], xy[:, 1])
        assert set(f.flat(i[ok], j[ok]).tolist()) <= bnd


class TestBoundaryLookup:
    @pytest.fixture
    def big_square(self):
        f = build_frame(Rect.from_bounds(0, 0, 10, 10), 10, 10)
        return rasterize(GeometricObject.of(square(1.5, 1.5, 8.5, 8.5)), InfoSeed(3), f)

    def test_interior(self, big_square):
        assert boundary_lookup(big_square, (5, 5)) == []

    def test_right_edge(self, big_square):
        entries = boundary_lookup(big_square, (8, 5))
        assert [(rid, dim) for rid, dim, _ in entries] == [(3, 2)]

    def test_point(self, unit_frame4):
        c = rasterize(GeometricObject.of(Point2(0.5, 0.5)), InfoSeed(9), unit_frame4)
        entries = boundary_lookup(c, (2, 2))
        assert [(rid, dim) for rid, dim, _ in entries] == [(9, 0)]
        assert entries[0][2] == Point2(0.5, 0.5)

    def test_out_of_frame(self, big_square):
        with pytest.raises(PixelOutOfFrame):
            boundary_lookup(big_square, (10, 0))


class TestInvariants:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(8, 48))
    def test_conservative(self, seed, res):
        rng = np.random.default_rng(seed)
        poly = random_polygon(rng, UNIT, size=0.35)
        f = build_frame(UNIT, res, res)
        c = rasterize(GeometricObject.of(poly), SEED, f)
        have = set(c.boundary_flat().tolist())
        i, j, boxes = pixel_boxes(f)
        for e in poly.edges():
            hit = [k for k in range(len(boxes)) if box_meets_segment(boxes[k], e)]
            assert set(f.flat(i[hit], j[hit]).tolist()) <= have

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(8, 48))
    def test_exactness_anchor(self, seed, res):
        rng = np.random.default_rng(seed)
        poly = random_polygon(rng, UNIT, size=0.35)
        f = build_frame(UNIT, res, res)
        c = rasterize(GeometricObject.of(poly), SEED, f)
        fill = fill_of(c).ravel()
        bnd = np.zeros(f.size, bool)
        bnd[c.boundary_flat()] = True
        _, _, boxes = pixel_boxes(f)
        for corner in ((0, 1), (2, 1), (0, 3), (2, 3)):
            cls = classify_points(boxes[:, corner], poly) != Containment.OUTSIDE
            assert np.array_equal(cls[~bnd], fill[~bnd])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(8, 64))
    def test_two_resolutions_agree(self, seed, res):
        rng = np.random.default_rng(seed)
        poly = random_polygon(rng, UNIT, size=0.35)
        f1 = build_frame(UNIT, res, res)
        f2 = build_frame(UNIT, 2 * res, 2 * res)
        c1 = rasterize(GeometricObject.of(poly), SEED, f1)
        c2 = rasterize(GeometricObject.of(poly), SEED, f2)
        b1 = np.zeros(f1.size, bool)
        b1[c1.boundary_flat()] = True
        b2 = np.zeros(f2.size, bool)
        b2[c2.boundary_flat()] = True
        # each coarse pixel covers a 2x2 block of fine pixels
        fine_fill = fill_of(c2).reshape(res, 2, res, 2).transpose(0, 2, 1, 3).reshape(res * res, 4)
        fine_bnd = b2.reshape(res, 2, res, 2).transpose(0, 2, 1, 3).reshape(res * res, 4)
        coarse = fill_of(c1).ravel()
        for k in range(4):
            ok = ~b1 & ~fine_bnd[:, k]
            assert np.array_equal(coarse[ok], fine_fill[ok, k])


class TestDump:
    def test_format(self, unit_frame4):
        c = rasterize(GeometricObject.of(Point2(0.5, 0.5)), InfoSeed(9), unit_frame4)
        assert dump_canvas(c) == "2 2 | (9,1,0) - - | 9:0"

    def test_empty(self, unit_frame4):
        assert dump_canvas(Canvas.empty(unit_frame4)) == ""
