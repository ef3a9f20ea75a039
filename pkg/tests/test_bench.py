import csv

import numpy as np
import pytest

from spatialcanvas.bench import checksum, make_points, naive_select, run_bench, write_report
from spatialcanvas.cli import main
from spatialcanvas.oracle import oracle_select
from spatialcanvas.queries import PolygonSet
from spatialcanvas.workloads import BENCH_EXTENT, bench_polygons


def test_fixture_polygons():
    polys = bench_polygons()
    assert len(polys) == 8
    for p in polys:
        b = p.bounds
        assert BENCH_EXTENT.min.x <= b.min.x and b.max.x <= BENCH_EXTENT.max.x
        assert BENCH_EXTENT.min.y <= b.min.y and b.max.y <= BENCH_EXTENT.max.y


def test_checksum_is_order_free():
    assert checksum(np.array([3, 1, 2])) == checksum(np.array([1, 2, 3]))
    assert checksum(np.array([1, 2])) != checksum(np.array([1, 3]))


def test_naive_matches_oracle():
    d = make_points(5000, seed=2)
    q = PolygonSet(tuple(bench_polygons()[:3]))
    assert np.array_equal(naive_select(d, q), oracle_select(d, q))


def test_repetitions_zero():
    with pytest.raises(ValueError):
        run_bench([100], [1], repetitions=0)


def test_cli_repetitions_zero(tmp_path):
    assert main(["bench", "--sizes", "100", "--repetitions", "0", "-o", str(tmp_path / "r.csv")]) == 2


def test_harness_self_check(tmp_path):
    rows = run_bench([10_000, 100_000, 1_000_000], [1], ["canvas-parallel", "naive-pip"], repetitions=1)
    assert len(rows) == 6
    for n in (10_000, 100_000, 1_000_000):
        sums = {r.checksum for r in rows if r.n_points == n}
        assert len(sums) == 1
    write_report(tmp_path / "r.csv", rows)
    with open(tmp_path / "r.csv") as fh:
        got = list(csv.DictReader(fh))
    assert len(got) == 6 and set(got[0]) == {"engine", "query", "n_points", "n_polygons", "ms", "cardinality", "checksum"}


def test_cli_bench(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["bench", "--sizes", "2000", "--polygons", "1,2", "--engines", "canvas,oracle",
                 "--repetitions", "1", "-o", str(out)])
    assert code == 0
    assert len(out.read_text().splitlines()) == 5
