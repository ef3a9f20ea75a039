import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialcanvas.canvas import build_frame
from spatialcanvas.geometry import Circle, GeometricObject, HalfSpace, Point2, Rect
from spatialcanvas.oracle import (
    oracle_distance_join,
    oracle_group_aggregate,
    oracle_join,
    oracle_knn,
    oracle_od_select,
    oracle_select,
    oracle_voronoi_labels,
)
from spatialcanvas.queries import (
    Dataset,
    DuplicateId,
    DuplicateSeed,
    EmptyPolygonSet,
    KOutOfRange,
    MissingAttribute,
    MissingDestination,
    PolygonSet,
    aggregate_select,
    distance_join,
    groupby_join_aggregate,
    knn,
    multi_polygon_select,
    od_select,
    rasterjoin_error_bounds,
    select_points,
    select_polygons,
    spatial_join,
    voronoi,
)
from spatialcanvas.workloads import clustered_points, point_dataset, polygon_dataset, random_polygon, uniform_points

from .conftest import square

UNIT = Rect.from_bounds(0, 0, 1, 1)


def ids(*xs):
    return np.array(xs, dtype=np.int64)


def random_points(rng, n, **attrs):
    xy = np.vstack([uniform_points(rng, n - n // 2, UNIT), clustered_points(rng, n // 2, UNIT)])
    return point_dataset(xy, **attrs)


class TestDataset:
    def test_duplicate_id(self):
        with pytest.raises(DuplicateId):
            Dataset.points([1, 1], [[0, 0], [1, 1]])

    def test_missing_attribute(self):
        d = Dataset.points([1], [[0, 0]])
        with pytest.raises(MissingAttribute):
            aggregate_select(d, UNIT, "sum:a")


class TestSelectPoints:
    def test_two_points_unit_square(self, unit_square):
        d = Dataset.points([1, 2], [[0.5, 0.5], [2, 2]])
        assert np.array_equal(select_points(d, unit_square), ids(1))

    def test_mbr_rect_selects_all(self):
        rng = np.random.default_rng(0)
        d = random_points(rng, 200)
        assert np.array_equal(select_points(d, d.bounds.expanded(0.01)), d.ids)

    def test_disjoint(self):
        d = random_points(np.random.default_rng(1), 100)
        assert len(select_points(d, square(5, 5, 6, 6))) == 0

    def test_boundary_points_count(self, unit_square):
        d = Dataset.points([1, 2, 3], [[1.0, 0.5], [0.0, 0.0], [1.0 + 1e-9, 0.5]])
        assert np.array_equal(select_points(d, unit_square, resolution=16), ids(1, 2))

    def test_empty_dataset(self, unit_square):
        d = Dataset.points([], np.zeros((0, 2)))
        assert len(select_points(d, unit_square)) == 0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([16, 64, 256]))
    def test_matches_oracle(self, seed, res):
        rng = np.random.default_rng(seed)
        d = random_points(rng, 500)
        for q in (random_polygon(rng, UNIT), Circle(Point2(*rng.random(2)), 0.3),
                  HalfSpace(*rng.normal(size=2), 0.1), Rect.from_bounds(0.2, 0.1, 0.7, 0.6)):
            assert np.array_equal(select_points(d, q, resolution=res), oracle_select(d, q))

    def test_threads_do_not_change_result(self):
        rng = np.random.default_rng(2)
        d = random_points(rng, 5000)
        q = random_polygon(rng, UNIT, kind="holed", size=0.4)
        assert np.array_equal(select_points(d, q, threads=3), select_points(d, q))

    def test_explicit_frame_excluding_points(self, unit_square):
        d = Dataset.points([1, 2], [[0.5, 0.5], [3, 3]])
        frame = build_frame(Rect.from_bounds(2, 2, 4, 4), 32, 32)
        assert np.array_equal(select_points(d, unit_square, frame=frame), ids(1))

    def test_inexact_is_superset_for_polygons(self):
        rng = np.random.default_rng(3)
        d = random_points(rng, 2000)
        q = random_polygon(rng, UNIT, size=0.4)
        rough = set(select_points(d, q, resolution=32, exact=False).tolist())
        exact = set(oracle_select(d, q).tolist())
        # the raw plan keeps only points in filled pixels, so it may err either way near edges
        assert len(rough ^ exact) < len(exact)


class TestMultiSelect:
    def test_second_polygon_only(self):
        d = Dataset.points([1], [[2.5, 2.5]])
        qs = (square(0, 0, 1, 1), square(2, 2, 3, 3))
        assert np.array_equal(multi_polygon_select(d, PolygonSet(qs, "any")), ids(1))
        assert len(multi_polygon_select(d, PolygonSet(qs, "all"))) == 0

    def test_empty_set(self):
        d = Dataset.points([1], [[0, 0]])
        with pytest.raises(EmptyPolygonSet):
            multi_polygon_select(d, PolygonSet(()))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_any_is_union_and_single_degenerates(self, seed):
        rng = np.random.default_rng(seed)
        d = random_points(rng, 800)
        polys = tuple(random_polygon(rng, UNIT, size=0.3) for _ in range(4))
        union = np.unique(np.concatenate([select_points(d, p) for p in polys]))
        assert np.array_equal(multi_polygon_select(d, PolygonSet(polys, "any")), union)
        assert np.array_equal(multi_polygon_select(d, PolygonSet(polys[:1])), select_points(d, polys[0]))
        both = PolygonSet(polys[:2], "all")
        assert np.array_equal(multi_polygon_select(d, both), oracle_select(d, both))


class TestSelectPolygons:
    def test_overlap_and_far(self, unit_square):
        d = polygon_dataset([square(0.5, 0.5, 1.5, 1.5), square(6, 6, 7, 7)])
        assert np.array_equal(select_polygons(d, unit_square), ids(1))

    def test_identical(self, unit_square):
        d = polygon_dataset([unit_square])
        assert np.array_equal(select_polygons(d, unit_square), ids(1))

    def test_edge_touch(self, unit_square):
        d = polygon_dataset([square(1, 0, 2, 1), square(1.01, 0, 2, 1)])
        assert np.array_equal(select_polygons(d, unit_square), ids(1))

    def test_vertex_touch(self, unit_square):
        d = polygon_dataset([square(1, 1, 2, 2)])
        assert np.array_equal(select_polygons(d, unit_square, resolution=16), ids(1))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = polygon_dataset([random_polygon(rng, UNIT, size=0.1) for _ in range(15)])
        for q in (random_polygon(rng, UNIT, size=0.35), Circle(Point2(*rng.random(2)), 0.2),
                  HalfSpace(1.0, -0.5, -0.2), Rect.from_bounds(0.3, 0.3, 0.5, 0.8)):
            assert np.array_equal(select_polygons(d, q, resolution=128), oracle_select(d, q))


class TestJoins:
    def test_type_one(self):
        y1, y2 = square(0, 0, 1, 1), square(3, 3, 4, 4)
        a = Dataset.points([1, 2], [[0.5, 0.5], [2, 2]])
        b = polygon_dataset([y1, y2], first_id=10)
        assert spatial_join(a, b, "I").tolist() == [[1, 10]]

    def test_empty_right(self):
        a = Dataset.points([1], [[0, 0]])
        b = Dataset.polygons([], [])
        assert spatial_join(a, b).shape == (0, 2)

    def test_self_join_disjoint(self):
        d = polygon_dataset([square(k * 2, 0, k * 2 + 1, 1) for k in range(4)])
        assert spatial_join(d, d, "II").tolist() == [[k, k] for k in range(1, 5)]

    def test_bad_type(self, unit_square):
        d = polygon_dataset([unit_square])
        with pytest.raises(ValueError):
            spatial_join(d, d, "III")

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = random_points(rng, 600)
        y = polygon_dataset([random_polygon(rng, UNIT, size=0.2) for _ in range(6)])
        z = polygon_dataset([random_polygon(rng, UNIT, size=0.1) for _ in range(10)], first_id=100)
        assert np.array_equal(spatial_join(p, y, "I", resolution=256), oracle_join(p, y, "I"))
        assert np.array_equal(spatial_join(z, y, "II", resolution=256), oracle_join(z, y, "II"))

    def test_distance_join_boundary(self):
        a = Dataset.points([1], [[0, 0]])
        b = Dataset.points([1], [[3, 4]])
        assert distance_join(a, b, 5).tolist() == [[1, 1]]
        assert distance_join(a, b, 4.9).shape == (0, 2)

    def test_distance_join_random(self):
        rng = np.random.default_rng(4)
        a = point_dataset(uniform_points(rng, 300, UNIT))
        b = point_dataset(uniform_points(rng, 200, UNIT), first_id=1000)
        assert np.array_equal(distance_join(a, b, 0.2), oracle_distance_join(a, b, 0.2))


class TestAggregate:
    def test_four_points(self, unit_square):
        d = Dataset.points(range(1, 7), [[0.1, 0.1], [0.2, 0.9], [0.5, 0.5], [0.9, 0.3], [1.5, 0.5], [2, 2]])
        assert aggregate_select(d, unit_square) == 4

    def test_sum(self, unit_square):
        d = Dataset.points([1, 2, 3], [[0.2, 0.2], [0.8, 0.8], [3, 3]], a=[1.5, 2.5, 10.0])
        assert aggregate_select(d, unit_square, "sum:a") == 4.0

    def test_empty_selection(self):
        d = Dataset.points([1], [[0.5, 0.5]], a=[3.0])
        far = square(5, 5, 6, 6)
        assert aggregate_select(d, far) == 0
        assert aggregate_select(d, far, "sum:a") == 0.0


class TestGroupBy:
    @pytest.fixture
    def small(self):
        p = Dataset.points(range(1, 7), [[0.2, 0.2], [0.7, 0.7], [2.2, 2.2], [2.5, 2.5], [2.8, 2.1], [5, 5]])
        y = polygon_dataset([square(0, 0, 1, 1), square(2, 2, 3, 3), square(4, 0, 4.5, 0.5)])
        return p, y

    @pytest.mark.parametrize("plan", ["canonical", "rasterjoin"])
    def test_small(self, small, plan):
        p, y = small
        assert groupby_join_aggregate(p, y, plan=plan) == {1: 2, 2: 3}

    def test_plans_agree_on_random(self):
        rng = np.random.default_rng(5)
        p = random_points(rng, 1000, a=rng.random(1000))
        y = polygon_dataset([random_polygon(rng, UNIT, size=0.25) for _ in range(10)])
        want = oracle_group_aggregate(p, y)
        assert groupby_join_aggregate(p, y) == want
        assert groupby_join_aggregate(p, y, plan="rasterjoin") == want
        sums = oracle_group_aggregate(p, y, "sum:a")
        for plan in ("canonical", "rasterjoin"):
            got = groupby_join_aggregate(p, y, "sum:a", plan=plan)
            assert got.keys() == sums.keys()
            for k in got:
                assert got[k] == pytest.approx(sums[k], rel=1e-9)

    def test_unrefined_error_within_bound(self):
        rng = np.random.default_rng(6)
        p = random_points(rng, 3000)
        y = polygon_dataset([random_polygon(rng, UNIT, size=0.25) for _ in range(8)])
        want = oracle_group_aggregate(p, y)
        raw = groupby_join_aggregate(p, y, plan="rasterjoin", exact=False, resolution=64)
        bound = rasterjoin_error_bounds(p, y, resolution=64)
        for yid in y.ids.tolist():
            assert abs(raw.get(yid, 0) - want.get(yid, 0)) <= bound[yid]


class TestKnn:
    def test_single(self):
        d = Dataset.points([9], [[0.3, 0.3]])
        assert knn(d, Point2(0, 0), 1).tolist() == [9]

    def test_collinear(self):
        d = Dataset.points([1, 2, 3, 4, 5], [[x, 0] for x in range(1, 6)])
        assert sorted(knn(d, Point2(0, 0), 3).tolist()) == [1, 2, 3]

    def test_tie_lower_id(self):
        d = Dataset.points([4, 2, 7], [[1, 0], [-1, 0], [0, 3]])
        assert knn(d, Point2(0, 0), 1).tolist() == [2]

    def test_k_out_of_range(self):
        d = Dataset.points([1], [[0, 0]])
        with pytest.raises(KOutOfRange):
            knn(d, Point2(0, 0), 2)
        with pytest.raises(KOutOfRange):
            knn(d, Point2(0, 0), 0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([1, 5, 50]))
    def test_matches_oracle(self, seed, k):
        rng = np.random.default_rng(seed)
        d = random_points(rng, 100)
        x = Point2(*rng.uniform(-0.2, 1.2, 2))
        got = knn(d, x, k)
        assert len(got) == k
        assert np.array_equal(got, oracle_knn(d, x, k))


class TestVoronoi:
    def test_one_seed(self):
        f = build_frame(UNIT, 16, 16)
        assert (voronoi([Point2(0.3, 0.3)], f).dense().rows[2].id == 1).all()

    def test_mirrored(self):
        f = build_frame(UNIT, 16, 16)
        lab = voronoi([Point2(0.25, 0.5), Point2(0.75, 0.5)], f).dense().rows[2].id
        assert (lab[:, :8] == 1).all() and (lab[:, 8:] == 2).all()

    def test_tie_goes_to_lower_index(self):
        f = build_frame(Rect.from_bounds(0, 0, 3, 1), 3, 1)
        lab = voronoi([Point2(2.5, 0.5), Point2(0.5, 0.5)], f).dense().rows[2].id
        assert lab.tolist() == [[2, 1, 1]]

    def test_random(self):
        rng = np.random.default_rng(7)
        f = build_frame(UNIT, 64, 64)
        seeds = [Point2(*p) for p in rng.random((10, 2))]
        lab = voronoi(seeds, f).dense().rows[2].id
        x = f.center_x(np.arange(64))[None, :]
        y = f.center_y(np.arange(64))[:, None]
        assert np.array_equal(lab, oracle_voronoi_labels(seeds, x, y))

    def test_duplicate_seed(self):
        with pytest.raises(DuplicateSeed):
            voronoi([Point2(0, 0), Point2(0, 0)], build_frame(UNIT, 4, 4))


class TestOD:
    def test_examples(self, unit_square):
        q2 = square(2, 2, 3, 3)
        d = Dataset.od([1, 2, 3], [[0.5, 0.5], [0.5, 0.5], [2.5, 2.5]], [[2.5, 2.5], [0.5, 0.5], [2.5, 2.5]])
        assert od_select(d, unit_square, q2).tolist() == [1]

    def test_whole_extent(self):
        rng = np.random.default_rng(8)
        d = Dataset.od(np.arange(1, 51), rng.random((50, 2)), rng.random((50, 2)))
        box = Rect.from_bounds(0, 0, 1, 1)
        assert np.array_equal(od_select(d, box, box), d.ids)

    def test_missing_destination(self, unit_square):
        with pytest.raises(MissingDestination):
            od_select(Dataset.points([1], [[0, 0]]), unit_square, unit_square)

    def test_destination_outside_frame(self, unit_square):
        d = Dataset.od([1, 2], [[0.5, 0.5], [0.5, 0.5]], [[9.5, 9.5], [3, 3]])
        frame = build_frame(Rect.from_bounds(0, 0, 4, 4), 64, 64)
        assert od_select(d, unit_square, square(9, 9, 10, 10), frame=frame).tolist() == [1]

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = Dataset.od(np.arange(1, 1001), rng.random((1000, 2)), rng.random((1000, 2)))
        q1, q2 = random_polygon(rng, UNIT, size=0.4), random_polygon(rng, UNIT, size=0.4)
        assert np.array_equal(od_select(d, q1, q2, resolution=128), oracle_od_select(d, q1, q2))
        both = PolygonSet((q1, random_polygon(rng, UNIT, size=0.4)), "any")
        assert np.array_equal(od_select(d, q1, both, resolution=128), oracle_od_select(d, q1, both))


class TestResolutionIndependence:
    def test_select(self):
        rng = np.random.default_rng(9)
        d = random_points(rng, 3000)
        q = GeometricObject.of(random_polygon(rng, UNIT, kind="holed", size=0.4))
        results = [select_points(d, q, resolution=r) for r in (256, 1024, 4096)]
        assert all(np.array_equal(results[0], r) for r in results[1:])
