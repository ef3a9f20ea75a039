"""File formats: point and OD CSVs, GeoJSON polygons, JSON query specs, CSV results."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .canvas import RasterFrame, build_frame
from .geometry import Circle, GeometricObject, GeometryError, HalfSpace, Point2, Rect, validate_polygon
from .queries import Dataset, DuplicateId, PolygonSet


class ParseError(ValueError):
    pass


class InvalidGeometry(ValueError):
    pass


class SpecError(ValueError):
    """A query spec is malformed or misses a required field."""


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _read_csv(path: Path, required: Sequence[str]):
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header[: len(required)] != list(required):
            raise ParseError(f"{path}:1: header must start with {','.join(required)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append((int(row[0]), [float(c) for c in row[1:]]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from None
    ids = np.array([r[0] for r in rows], dtype=np.int64)
    vals = np.array([r[1] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    if not np.isfinite(vals).all():
        raise InvalidGeometry(f"{path}: non-finite value")
    return header, ids, vals


def _check_ids(path, ids):
    vals, counts = np.unique(ids, return_counts=True)
    if (counts > 1).any():
        raise DuplicateId(f"{path}: duplicate id {int(vals[counts > 1][0])}")


def load_points_csv(path) -> Dataset:
    """Points from a CSV with header ``id,x,y[,attr...]``."""
    header, ids, vals = _read_csv(Path(path), ("id", "x", "y"))
    _check_ids(path, ids)
    attrs = {name: vals[:, k] for k, name in enumerate(header[3:], start=2)}
    return Dataset.points(ids, vals[:, :2], **attrs)


def load_od_csv(path) -> Dataset:
    """Trips from a CSV with header ``id,ox,oy,dx,dy[,attr...]``."""
    header, ids, vals = _read_csv(Path(path), ("id", "ox", "oy", "dx", "dy"))
    _check_ids(path, ids)
    attrs = {name: vals[:, k] for k, name in enumerate(header[5:], start=4)}
    return Dataset.od(ids, vals[:, :2], vals[:, 2:4], **attrs)


def _geometry_object(geom: dict, where: str) -> GeometricObject:
    gtype = geom.get("type") if isinstance(geom, dict) else None
    coords = geom.get("coordinates") if isinstance(geom, dict) else None
    if gtype == "Polygon":
        parts = [coords]
    elif gtype == "MultiPolygon":
        parts = coords
    else:
        raise ParseError(f"{where}: geometry type must be Polygon or MultiPolygon, got {gtype!r}")
    try:
        return GeometricObject(tuple(validate_polygon(rings) for rings in parts))
    except GeometryError as e:
        raise InvalidGeometry(f"{where}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ParseError(f"{where}: bad coordinates ({e})") from None


def load_polygons_geojson(path) -> Dataset:
    """Polygon records from a GeoJSON FeatureCollection with integer ``id`` properties."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}: {e.msg}") from None
    if not isinstance(data, dict) or data.get("type") != "FeatureCollection":
        raise ParseError(f"{path}: expected a FeatureCollection")
    ids, geoms = [], []
    for k, feat in enumerate(data.get("features", [])):
        where = f"{path}: feature {k}"
        props = feat.get("properties") or {}
        fid = props.get("id", feat.get("id"))
        if isinstance(fid, bool) or not isinstance(fid, int):
            raise ParseError(f"{where}: missing integer id")
        ids.append(fid)
        geoms.append(_geometry_object(feat.get("geometry"), where))
    ids = np.array(ids, dtype=np.int64)
    _check_ids(path, ids)
    return Dataset.polygons(ids, geoms)


def load_dataset(path, kind: Optional[str] = None) -> Dataset:
    """Load ``points``, ``od`` or ``polygons`` data; ``kind`` is inferred when omitted."""
    path = Path(path)
    if kind is None:
        if path.suffix.lower() in (".geojson", ".json"):
            kind = "polygons"
        else:
            try:
                with open(path, newline="") as fh:
                    first = fh.readline()
            except OSError as e:
                raise ParseError(f"{path}: {e.strerror}") from None
            kind = "od" if first.replace(" ", "").startswith("id,ox,") else "points"
    if kind == "points":
        return load_points_csv(path)
    if kind == "od":
        return load_od_csv(path)
    if kind == "polygons":
        return load_polygons_geojson(path)
    raise ValueError(f"unknown dataset kind {kind!r}")


def write_points_csv(path, d: Dataset) -> None:
    header = ["id", "x", "y", *d.attrs]
    rows = ([int(i), repr(float(x)), repr(float(y)), *(repr(float(d.attrs[a][k])) for a in d.attrs)]
            for k, (i, (x, y)) in enumerate(zip(d.ids, d.xy)))
    write_csv(path, header, rows)


def write_od_csv(path, d: Dataset) -> None:
    rows = ([int(i), *(repr(float(v)) for v in (*o, *t))] for i, o, t in zip(d.ids, d.xy, d.dest))
    write_csv(path, ["id", "ox", "oy", "dx", "dy"], rows)


def write_polygons_geojson(path, d: Dataset) -> None:
    feats = []
    for i, g in zip(d.ids, d.geoms):
        polys = [[r.tolist() + [r[0].tolist()] for r in p.rings] for p in g.polygons]
        geom = {"type": "Polygon", "coordinates": polys[0]} if len(polys) == 1 else {
            "type": "MultiPolygon", "coordinates": polys}
        feats.append({"type": "Feature", "properties": {"id": int(i)}, "geometry": geom})
    text = '{"type": "FeatureCollection", "features": [\n'
    text += ",\n".join(json.dumps(f) for f in feats) + "\n]}\n"
    write_text(path, text)


# ---------------------------------------------------------------------------
# atomic output
# ---------------------------------------------------------------------------


def write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    write_text(path, "\n".join(lines) + "\n")


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# query specs
# ---------------------------------------------------------------------------

KINDS = (
    "select-points",
    "select-polygons",
    "join",
    "distance-join",
    "aggregate",
    "groupby",
    "knn",
    "voronoi",
    "od-select",
    "multi-select",
)

_REQUIRED = {
    "select-points": ("data", "constraint"),
    "select-polygons": ("data", "constraint"),
    "join": ("left", "right"),
    "distance-join": ("left", "right", "distance"),
    "aggregate": ("data", "constraint"),
    "groupby": ("points", "polygons"),
    "knn": ("data", "point", "k"),
    "voronoi": ("seeds",),
    "od-select": ("data", "q1", "q2"),
    "multi-select": ("data", "constraint"),
}


@dataclass
class QuerySpec:
    """A parsed query description; dataset paths are resolved against ``base``."""

    kind: str
    fields: dict
    base: Path = Path(".")
    resolution: int = 2048
    extent: Optional[Rect] = None
    exact: bool = True
    plan: str = "canonical"
    threads: int = 1
    options: dict = field(default_factory=dict)

    def path(self, key: str) -> Path:
        p = Path(self.fields[key])
        return p if p.is_absolute() else self.base / p

    def frame(self) -> Optional[RasterFrame]:
        if self.extent is None:
            return None
        return build_frame(self.extent, self.resolution, self.resolution)


def parse_spec(obj: Any, base: Path = Path(".")) -> QuerySpec:
    if not isinstance(obj, dict):
        raise SpecError("spec must be a JSON object")
    kind = obj.get("kind")
    if kind not in KINDS:
        raise SpecError(f"unknown query kind {kind!r}; expected one of {', '.join(KINDS)}")
    missing = [k for k in _REQUIRED[kind] if k not in obj]
    if missing:
        raise SpecError(f"{kind} spec missing field(s): {', '.join(missing)}")
    res = obj.get("resolution", 2048)
    if isinstance(res, bool) or not isinstance(res, int) or res < 16:
        raise SpecError("resolution must be an integer >= 16")
    extent = obj.get("extent")
    if extent is not None:
        try:
            extent = Rect.from_bounds(*map(float, extent))
        except (TypeError, ValueError, GeometryError) as e:
            raise SpecError(f"bad extent: {e}") from None
    exact = obj.get("exact", True)
    if not isinstance(exact, bool):
        raise SpecError("exact must be true or false")
    plan = obj.get("plan", "canonical")
    if plan not in ("canonical", "rasterjoin"):
        raise SpecError("plan must be canonical or rasterjoin")
    threads = obj.get("threads", 1)
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise SpecError("threads must be a positive integer")
    return QuerySpec(kind, obj, base, res, extent, exact, plan, threads)


def load_spec(path) -> QuerySpec:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as e:
        raise SpecError(f"{path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise SpecError(f"{path}:{e.lineno}: {e.msg}") from None
    return parse_spec(obj, path.parent)


def _floats(v, n: int, what: str) -> list[float]:
    try:
        out = [float(x) for x in v]
    except (TypeError, ValueError):
        raise SpecError(f"{what} must be a list of {n} numbers") from None
    if len(out) != n:
        raise SpecError(f"{what} must be a list of {n} numbers")
    return out


def parse_constraint(obj: Any, base: Path = Path(".")):
    """Constraint from its JSON form.

    Accepted forms: ``{"rect": [x0, y0, x1, y1]}``, ``{"circle": [x, y, r]}``,
    ``{"halfspace": [a, b, c]}``, ``{"polygon": [ring, hole, ...]}``,
    ``{"polygons": [[ring, ...], ...], "mode": "any"|"all"}`` and
    ``{"file": "shapes.geojson", "mode": ...}`` (several features form a set).
    """
    if not isinstance(obj, dict) or not obj:
        raise SpecError("constraint must be a JSON object")
    mode = obj.get("mode", "any")
    if mode not in ("any", "all"):
        raise SpecError("mode must be any or all")
    try:
        if "rect" in obj:
            return Rect.from_bounds(*_floats(obj["rect"], 4, "rect"))
        if "circle" in obj:
            x, y, r = _floats(obj["circle"], 3, "circle")
            return Circle(Point2(x, y), r)
        if "halfspace" in obj:
            return HalfSpace(*_floats(obj["halfspace"], 3, "halfspace"))
        if "polygon" in obj:
            return validate_polygon(obj["polygon"])
        if "polygons" in obj:
            return PolygonSet(tuple(validate_polygon(p) for p in obj["polygons"]), mode)
        if "file" in obj:
            p = Path(obj["file"])
            d = load_polygons_geojson(p if p.is_absolute() else base / p)
            if len(d) == 1 and "mode" not in obj:
                return d.geoms[0]
            return PolygonSet(tuple(d.geoms), mode)
    except GeometryError as e:
        raise InvalidGeometry(f"constraint: {e}") from None
    except (TypeError, ValueError) as e:
        if isinstance(e, (ParseError, InvalidGeometry, DuplicateId)):
            raise
        raise SpecError(f"constraint: {e}") from None
    raise SpecError(f"unrecognized constraint keys: {', '.join(obj)}")
