import json

import numpy as np
import pytest

from spatialcanvas.cli import main
from spatialcanvas.io import (
    InvalidGeometry,
    ParseError,
    SpecError,
    load_dataset,
    parse_constraint,
    parse_spec,
    write_points_csv,
)
from spatialcanvas.queries import Dataset, DuplicateId, PolygonSet

SQUARE_WITH_HOLE = {
    "type": "FeatureCollection",
    "features": [{
        "type": "Feature",
        "properties": {"id": 4},
        "geometry": {"type": "Polygon", "coordinates": [
            [[0, 0], [4, 0], [4, 4], [0, 4], [0, 0]],
            [[1, 1], [1, 3], [3, 3], [3, 1], [1, 1]],
        ]},
    }],
}


@pytest.fixture
def two_points(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("id,x,y\n1,0.5,0.5\n2,2,2\n")
    return p


def write_spec(tmp_path, obj, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def run(tmp_path, spec, *extra):
    out = tmp_path / "out.csv"
    code = main(["query", str(write_spec(tmp_path, spec)), "-o", str(out), *extra])
    return code, (out.read_text() if out.exists() else None)


class TestLoad:
    def test_points(self, two_points):
        d = load_dataset(two_points)
        assert d.kind == "points" and len(d) == 2

    def test_attributes(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("id,x,y,w\n1,0,0,2.5\n")
        assert load_dataset(p).attr("w").tolist() == [2.5]

    def test_duplicate(self, tmp_path):
        p = tmp_path / "dup.csv"
        p.write_text("id,x,y\n1,0,0\n1,1,1\n")
        with pytest.raises(DuplicateId):
            load_dataset(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("x,y,id\n0,0,1\n")
        with pytest.raises(ParseError):
            load_dataset(p)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,x,y\n1,a,0\n")
        with pytest.raises(ParseError, match=":2:"):
            load_dataset(p)

    def test_square_with_hole(self, tmp_path):
        p = tmp_path / "y.geojson"
        p.write_text(json.dumps(SQUARE_WITH_HOLE))
        d = load_dataset(p)
        assert d.ids.tolist() == [4]
        (poly,) = d.geoms[0].polygons
        assert len(poly.holes) == 1

    def test_invalid_ring(self, tmp_path):
        bad = json.loads(json.dumps(SQUARE_WITH_HOLE))
        bad["features"][0]["geometry"]["coordinates"] = [[[0, 0], [1, 1], [1, 0], [0, 1], [0, 0]]]
        p = tmp_path / "y.geojson"
        p.write_text(json.dumps(bad))
        with pytest.raises(InvalidGeometry):
            load_dataset(p)

    def test_od(self, tmp_path):
        p = tmp_path / "od.csv"
        p.write_text("id,ox,oy,dx,dy\n1,0,0,1,1\n")
        d = load_dataset(p)
        assert d.kind == "od" and d.dest.tolist() == [[1.0, 1.0]]


class TestSpec:
    def test_missing_field(self):
        with pytest.raises(SpecError, match="constraint"):
            parse_spec({"kind": "select-points", "data": "x.csv"})

    def test_low_resolution(self):
        with pytest.raises(SpecError):
            parse_spec({"kind": "voronoi", "seeds": [[0, 0]], "resolution": 8})

    def test_unknown_kind(self):
        with pytest.raises(SpecError):
            parse_spec({"kind": "skyline"})

    def test_constraints(self):
        assert parse_constraint({"rect": [0, 0, 1, 2]}).height == 2
        assert parse_constraint({"circle": [0, 0, 3]}).r == 3
        qs = parse_constraint({"polygons": [[[[0, 0], [1, 0], [1, 1]]]] * 2, "mode": "all"})
        assert isinstance(qs, PolygonSet) and qs.mode == "all" and len(qs.polygons) == 2
        with pytest.raises(SpecError):
            parse_constraint({"rect": [0, 0, 1]})


class TestQueryCommand:
    def test_select(self, tmp_path, two_points):
        spec = {"kind": "select-points", "data": two_points.name,
                "constraint": {"polygon": [[[0, 0], [1, 0], [1, 1], [0, 1]]]}}
        code, text = run(tmp_path, spec)
        assert code == 0 and text == "id\n1\n"

    def test_knn_single(self, tmp_path):
        (tmp_path / "one.csv").write_text("id,x,y\n42,3,4\n")
        code, text = run(tmp_path, {"kind": "knn", "data": "one.csv", "point": [0, 0], "k": 1})
        assert code == 0 and text == "id\n42\n"

    def test_malformed_spec(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["query", str(p), "-o", str(tmp_path / "o.csv")]) == 2
        assert "bad.json" in capsys.readouterr().err
        assert not (tmp_path / "o.csv").exists()

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["query"])
        assert e.value.code == 2

    def test_missing_dataset(self, tmp_path):
        code, _ = run(tmp_path, {"kind": "select-points", "data": "nope.csv", "constraint": {"rect": [0, 0, 1, 1]}})
        assert code == 2

    def test_query_error(self, tmp_path, two_points):
        code, _ = run(tmp_path, {"kind": "knn", "data": two_points.name, "point": [0, 0], "k": 5})
        assert code == 1

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        d = Dataset.points(np.arange(10, 510), rng.random((500, 2)) * 50)
        write_points_csv(tmp_path / "pts.csv", d)
        b = d.bounds
        spec = {"kind": "select-points", "data": "pts.csv",
                "constraint": {"rect": [b.min.x, b.min.y, b.max.x, b.max.y]}}
        code, text = run(tmp_path, spec)
        assert code == 0
        assert [int(v) for v in text.split()[1:]] == d.ids.tolist()

    def test_resolution_and_threads_do_not_change_output(self, tmp_path):
        main(["generate", "points", "3000", "--seed", "3", "-o", str(tmp_path / "p.csv")])
        main(["generate", "polygons", "3", "--seed", "3", "--size", "0.3", "-o", str(tmp_path / "y.geojson")])
        spec = {"kind": "multi-select", "data": "p.csv", "constraint": {"file": "y.geojson"}}
        outs = set()
        for extra in (["--resolution", "64"], ["--resolution", "1024", "--threads", "3"], []):
            code, text = run(tmp_path, spec, *extra)
            assert code == 0
            outs.add(text)
        assert len(outs) == 1

    def test_oracle_matches_engine(self, tmp_path):
        main(["generate", "points", "2000", "--seed", "4", "-o", str(tmp_path / "p.csv")])
        main(["generate", "polygons", "5", "--seed", "4", "--size", "0.2", "-o", str(tmp_path / "y.geojson")])
        spec = write_spec(tmp_path, {"kind": "groupby", "points": "p.csv", "polygons": "y.geojson"})
        texts = []
        for cmd, extra in (("query", []), ("query", ["--plan", "rasterjoin"]), ("oracle", [])):
            out = tmp_path / f"{cmd}{len(texts)}.csv"
            assert main([cmd, str(spec), "-o", str(out), *extra]) == 0
            texts.append(out.read_text())
        assert texts[0] == texts[1] == texts[2]

    def test_voronoi_rows(self, tmp_path):
        spec = {"kind": "voronoi", "seeds": [[0.25, 0.5], [0.75, 0.5]], "extent": [0, 0, 1, 1], "resolution": 16}
        code, text = run(tmp_path, spec)
        lines = text.splitlines()
        assert code == 0 and lines[0] == "px,py,seed_id" and len(lines) == 257
        assert lines[1] == "0,0,1" and lines[16] == "15,0,2"


class TestGenerate:
    @pytest.mark.parametrize("what,name", [("points", "p.csv"), ("od", "od.csv"), ("polygons", "y.geojson")])
    def test_loadable(self, tmp_path, what, name):
        assert main(["generate", what, "25", "-o", str(tmp_path / name)]) == 0
        assert len(load_dataset(tmp_path / name)) == 25

    def test_seeded(self, tmp_path):
        main(["generate", "points", "50", "--seed", "9", "-o", str(tmp_path / "a.csv")])
        main(["generate", "points", "50", "--seed", "9", "-o", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
