"""Command line interface.

Exit codes: 0 on success, 1 when a query fails, 2 for usage or input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import oracle as orc
from . import queries as qry
from .bench import ENGINES, ChecksumMismatch, make_points, run_bench, write_report
from .canvas import DEFAULT_RESOLUTION, DegenerateExtent, FrameMismatch, build_frame
from .geometry import GeometryError, Point2, Rect
from .io import (
    InvalidGeometry,
    ParseError,
    QuerySpec,
    SpecError,
    format_value,
    load_dataset,
    load_spec,
    parse_constraint,
    write_csv,
    write_od_csv,
    write_points_csv,
    write_polygons_geojson,
)
from .workloads import polygon_dataset, random_polygon

USAGE_ERRORS = (SpecError, ParseError, InvalidGeometry, qry.DuplicateId)
QUERY_ERRORS = (qry.QueryError, GeometryError, FrameMismatch, DegenerateExtent)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _seeds(spec: QuerySpec) -> list[Point2]:
    raw = spec.fields["seeds"]
    if isinstance(raw, str):
        d = load_dataset(spec.path("seeds"), "points")
        return [Point2(float(x), float(y)) for x, y in d.xy]
    try:
        return [Point2(float(x), float(y)) for x, y in raw]
    except (TypeError, ValueError):
        raise SpecError("seeds must be a list of [x, y] pairs or a points CSV path") from None


def _voronoi_frame(spec: QuerySpec, seeds):
    if spec.extent is not None:
        return spec.frame()
    return qry.query_frame([Rect.from_bounds(s.x, s.y, s.x, s.y) for s in seeds], spec.resolution)


def _point(spec: QuerySpec) -> Point2:
    try:
        x, y = (float(v) for v in spec.fields["point"])
    except (TypeError, ValueError):
        raise SpecError("point must be [x, y]") from None
    return Point2(x, y)


def _int_field(spec: QuerySpec, key: str) -> int:
    v = spec.fields[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SpecError(f"{key} must be an integer")
    return v


def _load_inputs(spec: QuerySpec) -> dict:
    """Load every dataset and constraint named by the spec."""
    f = spec.fields
    out = {}
    for key in ("data", "left", "right", "points", "polygons"):
        if key in f:
            kind = "points" if key == "points" else ("polygons" if key == "polygons" else None)
            out[key] = load_dataset(spec.path(key), kind)
    for key in ("constraint", "q1", "q2"):
        if key in f:
            out[key] = parse_constraint(f[key], spec.base)
    if spec.kind == "multi-select" and not isinstance(out["constraint"], qry.PolygonSet):
        out["constraint"] = qry.PolygonSet((out["constraint"],), f.get("mode", "any"))
    if "distance" in f:
        try:
            out["distance"] = float(f["distance"])
        except (TypeError, ValueError):
            raise SpecError("distance must be a number") from None
    if spec.kind == "knn":
        out["point"] = _point(spec)
        out["k"] = _int_field(spec, "k")
    if spec.kind in ("aggregate", "groupby"):
        agg = f.get("agg", "count")
        if not isinstance(agg, str) or not (agg == "count" or agg.startswith("sum:")):
            raise SpecError("agg must be 'count' or 'sum:<attribute>'")
        out["agg"] = agg
    if spec.kind == "join":
        jt = f.get("join_type", "I")
        if jt not in ("I", "II"):
            raise SpecError("join_type must be I or II")
        out["join_type"] = jt
    if spec.kind == "voronoi":
        out["seeds"] = _seeds(spec)
    return out


def execute(spec: QuerySpec, use_oracle: bool = False):
    """Run a spec; returns ``(header, rows)`` for the CSV output."""
    a = _load_inputs(spec)
    opts = dict(resolution=spec.resolution, frame=spec.frame(), exact=spec.exact)
    kind = spec.kind
    if kind in ("select-points", "multi-select", "select-polygons"):
        if use_oracle:
            ids = orc.oracle_select(a["data"], a["constraint"])
        elif kind == "select-polygons":
            ids = qry.select_polygons(a["data"], a["constraint"], **opts)
        else:
            ids = qry.select_points(a["data"], a["constraint"], threads=spec.threads, **opts)
        return ["id"], [[int(i)] for i in ids]
    if kind in ("join", "distance-join"):
        if kind == "join":
            pairs = (orc.oracle_join(a["left"], a["right"], a["join_type"]) if use_oracle
                     else qry.spatial_join(a["left"], a["right"], a["join_type"], threads=spec.threads, **opts))
        else:
            pairs = (orc.oracle_distance_join(a["left"], a["right"], a["distance"]) if use_oracle
                     else qry.distance_join(a["left"], a["right"], a["distance"], **opts))
        return ["a_id", "b_id"], [[int(x), int(y)] for x, y in pairs]
    if kind == "aggregate":
        v = (orc.oracle_aggregate(a["data"], a["constraint"], a["agg"]) if use_oracle
             else qry.aggregate_select(a["data"], a["constraint"], a["agg"], threads=spec.threads, **opts))
        return ["value"], [[format_value(v)]]
    if kind == "groupby":
        res = (orc.oracle_group_aggregate(a["points"], a["polygons"], a["agg"]) if use_oracle
               else qry.groupby_join_aggregate(a["points"], a["polygons"], a["agg"], spec.plan,
                                               threads=spec.threads, **opts))
        return ["id", "value"], [[k, format_value(v)] for k, v in sorted(res.items())]
    if kind == "knn":
        ids = (orc.oracle_knn(a["data"], a["point"], a["k"]) if use_oracle
               else qry.knn(a["data"], a["point"], a["k"], resolution=spec.resolution, frame=spec.frame()))
        return ["id"], [[int(i)] for i in np.sort(ids)]
    if kind == "voronoi":
        seeds = a["seeds"]
        frame = _voronoi_frame(spec, seeds)
        if use_oracle:
            if len({(s.x, s.y) for s in seeds}) != len(seeds):
                raise qry.DuplicateSeed("seed locations must be distinct")
            x = frame.center_x(np.arange(frame.width))[None, :]
            y = frame.center_y(np.arange(frame.height))[:, None]
            labels = orc.oracle_voronoi_labels(seeds, x, y)
        else:
            labels = np.broadcast_to(qry.voronoi(seeds, frame).dense().rows[2].id, (frame.height, frame.width))
        jj, ii = np.meshgrid(np.arange(frame.height), np.arange(frame.width), indexing="ij")
        return ["px", "py", "seed_id"], zip(ii.ravel(), jj.ravel(), labels.ravel())
    if kind == "od-select":
        ids = (orc.oracle_od_select(a["data"], a["q1"], a["q2"]) if use_oracle
               else qry.od_select(a["data"], a["q1"], a["q2"], **opts))
        return ["id"], [[int(i)] for i in ids]
    raise SpecError(f"unsupported kind {kind}")


def _apply_overrides(spec: QuerySpec, args) -> QuerySpec:
    if getattr(args, "resolution", None) is not None:
        if args.resolution < 16:
            raise SpecError("resolution must be >= 16")
        spec.resolution = args.resolution
    if getattr(args, "exact", None) is not None:
        spec.exact = args.exact
    if getattr(args, "plan", None) is not None:
        spec.plan = args.plan
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise SpecError("threads must be positive")
        spec.threads = args.threads
    return spec


def _cmd_query(args, use_oracle: bool) -> int:
    spec = _apply_overrides(load_spec(args.spec), args)
    header, rows = execute(spec, use_oracle)
    write_csv(args.output, header, rows)
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _engine_list(text: str) -> list[str]:
    engines = [v for v in text.split(",") if v]
    bad = [e for e in engines if e not in ENGINES]
    if bad or not engines:
        raise argparse.ArgumentTypeError(f"unknown engine(s) {bad}; choose from {', '.join(ENGINES)}")
    return engines


def _cmd_bench(args) -> int:
    if args.repetitions < 1:
        raise SpecError("repetitions must be at least 1")
    try:
        rows = run_bench(
            args.sizes,
            args.polygons,
            args.engines,
            args.repetitions,
            args.seed,
            args.distribution,
            args.resolution or 1024,
            args.threads,
        )
    except ValueError as e:
        raise SpecError(str(e)) from None
    write_report(args.output, rows)
    for r in rows:
        print(f"{r.engine:16s} n={r.n_points:<9d} k={r.n_polygons} {r.ms:10.1f} ms  |result|={r.cardinality}")
    return 0


def _cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.what == "points":
        d = make_points(args.n, args.seed, args.distribution)
        write_points_csv(args.output, qry.Dataset.points(d.ids, d.xy, attr=rng.random(len(d))))
    elif args.what == "od":
        o = make_points(args.n, args.seed, args.distribution)
        t = make_points(args.n, args.seed + 1, args.distribution)
        write_od_csv(args.output, qry.Dataset.od(o.ids, o.xy, t.xy))
    else:
        extent = Rect.from_bounds(0, 0, 100, 100)
        polys = [random_polygon(rng, extent, size=args.size) for _ in range(args.n)]
        write_polygons_geojson(args.output, polygon_dataset(polys))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spatialcanvas", description="Canvas-based spatial query engine.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def knobs(sp):
        sp.add_argument("--resolution", type=int, help=f"frame width/height in pixels (default {DEFAULT_RESOLUTION})")
        sp.add_argument("--exact", dest="exact", action="store_true", default=None, help="refine boundary pixels (default)")
        sp.add_argument("--no-exact", dest="exact", action="store_false", help="raw raster answer")
        sp.add_argument("--plan", choices=("canonical", "rasterjoin"), help="group-by plan")
        sp.add_argument("--threads", type=int, help="worker threads")

    q = sub.add_parser("query", help="run a JSON query spec")
    q.add_argument("spec")
    q.add_argument("-o", "--output", required=True)
    knobs(q)
    o = sub.add_parser("oracle", help="run a query spec with the brute-force oracle")
    o.add_argument("spec")
    o.add_argument("-o", "--output", required=True)
    knobs(o)

    b = sub.add_parser("bench", help="time engines on multi-polygon selection")
    b.add_argument("--sizes", type=_int_list, default=[10_000, 100_000])
    b.add_argument("--polygons", type=_int_list, default=[1, 2, 4, 8])
    b.add_argument("--engines", type=_engine_list, default=["canvas", "canvas-parallel", "naive-pip"])
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--distribution", choices=("uniform", "clustered", "mixed"), default="mixed")
    b.add_argument("--resolution", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("-o", "--output", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("what", choices=("points", "od", "polygons"))
    g.add_argument("n", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--distribution", choices=("uniform", "clustered", "mixed"), default="mixed")
    g.add_argument("--size", type=float, default=0.1, help="polygon radius as a fraction of the extent")
    g.add_argument("-o", "--output", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "query":
            return _cmd_query(args, use_oracle=False)
        if args.command == "oracle":
            return _cmd_query(args, use_oracle=True)
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_generate(args)
    except USAGE_ERRORS as e:
        print(f"spatialcanvas: {e}", file=sys.stderr)
        return 2
    except (QUERY_ERRORS + (ChecksumMismatch,)) as e:
        print(f"spatialcanvas: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"spatialcanvas: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
