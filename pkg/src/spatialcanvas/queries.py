"""Query plans built from the canvas operators.

Each query rasterizes its inputs into one shared frame, runs its operator
plan, and (with ``exact=True``) refines the raster answer at boundary pixels
with exact vector predicates, so results match vector semantics at any
resolution.

Refinement rule for points: the raster count of constraint regions covering a
point's pixel is corrected, for every boundary layer at that pixel, by
subtracting the layer's pixel-center fill and adding the exact containment of
the stored point. Pixels without boundary entries are uniform, so their raster
answer is already exact.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import algebra as alg
from .canvas import (
    DEFAULT_RESOLUTION,
    Canvas,
    CanvasBatch,
    Cells,
    InfoRow,
    InfoSeed,
    PointEntries,
    RasterFrame,
    build_frame,
    circle_canvas,
    concat_cells,
    rasterize,
    rasterize_points,
    region_canvas,
    union_frame,
)
from .geometry import (
    Circle,
    GeometricObject,
    GeometryError,
    HalfSpace,
    NonPositiveRadius,
    Point2,
    Polygon,
    Rect,
    contains,
    distances,
    region_intersects,
)


class QueryError(ValueError):
    pass


class DuplicateId(QueryError):
    pass


class KOutOfRange(QueryError):
    pass


class DuplicateSeed(QueryError):
    pass


class MissingAttribute(QueryError):
    pass


class MissingDestination(QueryError):
    pass


class EmptyPolygonSet(QueryError):
    pass


# ---------------------------------------------------------------------------
# data and constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar record table.

    ``kind`` is ``"points"``, ``"polygons"`` or ``"od"``. Point and OD data
    keep coordinates in ``xy`` (origins for OD) and ``dest``; polygon data
    keeps one :class:`GeometricObject` per record in ``geoms``.
    """

    kind: str
    ids: np.ndarray
    xy: Optional[np.ndarray] = None
    dest: Optional[np.ndarray] = None
    geoms: tuple = ()
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("points", "polygons", "od"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if len(np.unique(ids)) != len(ids):
            vals, counts = np.unique(ids, return_counts=True)
            raise DuplicateId(f"duplicate id {int(vals[counts > 1][0])}")
        object.__setattr__(self, "ids", ids)
        n = len(ids)
        for name in ("xy", "dest"):
            a = getattr(self, name)
            if a is not None:
                a = np.asarray(a, dtype=float).reshape(-1, 2)
                if len(a) != n:
                    raise ValueError(f"{name} has {len(a)} rows for {n} ids")
                if not np.isfinite(a).all():
                    raise GeometryError("non-finite coordinate")
                object.__setattr__(self, name, a)
        if self.kind in ("points", "od") and self.xy is None:
            raise ValueError(f"{self.kind} dataset needs coordinates")
        if self.kind == "polygons":
            geoms = tuple(g if isinstance(g, GeometricObject) else GeometricObject.of(g) for g in self.geoms)
            if len(geoms) != n:
                raise ValueError(f"{len(geoms)} geometries for {n} ids")
            object.__setattr__(self, "geoms", geoms)
        attrs = {k: np.asarray(v, dtype=float).reshape(-1) for k, v in self.attrs.items()}
        for k, v in attrs.items():
            if len(v) != n:
                raise ValueError(f"attribute {k!r} has {len(v)} values for {n} ids")
        object.__setattr__(self, "attrs", attrs)

    @classmethod
    def points(cls, ids, xy, **attrs) -> Dataset:
        return cls("points", ids, xy, attrs=attrs)

    @classmethod
    def polygons(cls, ids, geoms, **attrs) -> Dataset:
        return cls("polygons", ids, geoms=tuple(geoms), attrs=attrs)

    @classmethod
    def od(cls, ids, origin, dest, **attrs) -> Dataset:
        return cls("od", ids, origin, dest, attrs=attrs)

    def __len__(self) -> int:
        return len(self.ids)

    def attr(self, name: str) -> np.ndarray:
        try:
            return self.attrs[name]
        except KeyError:
            raise MissingAttribute(f"attribute {name!r} not present") from None

    def record_bounds(self) -> list[Rect]:
        if self.kind == "polygons":
            return [g.bounds for g in self.geoms]
        return [Rect.from_bounds(x, y, x, y) for x, y in self.xy]

    @property
    def bounds(self) -> Optional[Rect]:
        if not len(self):
            return None
        if self.kind == "polygons":
            out = self.geoms[0].bounds
            for g in self.geoms[1:]:
                out = out.union(g.bounds)
            return out
        pts = self.xy if self.dest is None else np.vstack([self.xy, self.dest])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return Rect.from_bounds(lo[0], lo[1], hi[0], hi[1])


@dataclass(frozen=True)
class PolygonSet:
    """Several constraint regions; ``mode`` "any" is a union, "all" an intersection."""

    polygons: tuple
    mode: str = "any"

    def __post_init__(self):
        if self.mode not in ("any", "all"):
            raise ValueError(f"unknown polygon-set mode {self.mode!r}")
        object.__setattr__(self, "polygons", tuple(self.polygons))


Constraint = Union[Polygon, GeometricObject, Rect, Circle, HalfSpace, PolygonSet]


@dataclass(frozen=True)
class Count:
    pass


@dataclass(frozen=True)
class Sum:
    attr: str


Aggregate = Union[Count, Sum, str]


def _agg(agg: Aggregate):
    if isinstance(agg, str):
        if agg == "count":
            return Count()
        if agg.startswith("sum:"):
            return Sum(agg[4:])
        raise ValueError(f"unknown aggregate {agg!r}")
    return agg


def _regions(q: Constraint) -> tuple[list, str]:
    if isinstance(q, PolygonSet):
        if not q.polygons:
            raise EmptyPolygonSet("polygon set is empty")
        return list(q.polygons), q.mode
    return [q], "any"


def _bounds(region) -> Optional[Rect]:
    return getattr(region, "bounds", None)


def query_frame(boxes: Sequence[Optional[Rect]], resolution: Optional[int] = None, frame: Optional[RasterFrame] = None):
    """The shared frame of a plan: ``frame`` if given, else the padded union MBR."""
    if frame is not None:
        return frame
    return union_frame([b for b in boxes if b is not None], resolution or DEFAULT_RESOLUTION)


def _id_frame(max_id: int) -> RasterFrame:
    """Frame in which pixel ``(k, 0)`` covers world ``[k, k+1) x [0, 1)``; target of gamma_c."""
    w = int(max_id) + 1
    return build_frame(Rect.from_bounds(0.0, 0.0, float(w), 1.0), w, 1)


def _empty_batch(frame: RasterFrame) -> CanvasBatch:
    e = np.zeros(0, dtype=np.int64)
    return CanvasBatch(frame, e, e, Cells.empty((0,)), np.zeros((0, 2)))


def _concat_batches(frame: RasterFrame, parts: Sequence[CanvasBatch]) -> CanvasBatch:
    parts = [p for p in parts if len(p)]
    if not parts:
        return _empty_batch(frame)
    xy = None
    if all(p.xy is not None for p in parts):
        xy = np.concatenate([p.xy for p in parts])
    return CanvasBatch(
        frame,
        np.concatenate([p.pix_i for p in parts]),
        np.concatenate([p.pix_j for p in parts]),
        concat_cells([p.cells for p in parts]),
        xy,
    )


def _tag_row2(batch: CanvasBatch, tag: int) -> CanvasBatch:
    """Set row 2 of every member to ``(tag, 1, 0)``: the refined join result."""
    n = len(batch)
    r2 = InfoRow.constant(np.ones(n, dtype=bool), tag, 1.0, 0.0)
    cells = Cells((batch.cells.rows[0], None, r2), (n,))
    return CanvasBatch(batch.frame, batch.pix_i, batch.pix_j, cells, batch.xy)


def _constraint_canvas(regions: list, frame: RasterFrame, seed_id: int = 1) -> Canvas:
    canvases = [region_canvas(r, InfoSeed(seed_id), frame) for r in regions]
    if len(canvases) == 1:
        return canvases[0]
    return alg.multiway_blend(canvases, alg.OPLUS)


def _layer_flags(flat: np.ndarray, layers, frame: RasterFrame) -> np.ndarray:
    """Whether each flat pixel carries an entry of any layer."""
    if not layers or not len(flat):
        return np.zeros(len(flat), dtype=bool)
    if len(flat) * 8 >= frame.size:
        grid = np.zeros(frame.size, dtype=bool)
        for layer in layers:
            grid[layer.pixels] = True
        return grid[flat]
    pix = np.unique(np.concatenate([l.pixels for l in layers]))
    if not len(pix):
        return np.zeros(len(flat), dtype=bool)
    pos = np.minimum(np.searchsorted(pix, flat), len(pix) - 1)
    return pix[pos] == flat


def _exact_pred(counts: np.ndarray, mode: str, n: int) -> np.ndarray:
    return counts >= 1 if mode == "any" else counts == n


def _decide(batch: CanvasBatch, cq: Canvas, m: alg.MaskSet, mode: str, n: int, exact: bool) -> np.ndarray:
    """Per-member outcome of ``mask(blend(batch, cq, odot), m)`` with refinement."""
    if not len(batch):
        return np.zeros(0, dtype=bool)
    blended = alg.blend(batch, cq, alg.ODOT)
    keep = np.array(m(blended.cells), dtype=bool)
    if not exact:
        return keep
    flat = batch.flat
    cand = np.nonzero(_layer_flags(flat, cq.layers, batch.frame))[0]
    if not len(cand):
        return keep
    r2 = blended.cells.rows[2]
    counts = np.zeros(len(cand)) if r2 is None else np.where(r2.present[cand], r2.count[cand], 0.0)
    cflat = flat[cand]
    cxy = batch.xy[cand]
    for layer in cq.layers:
        hit, pos = layer.lookup(cflat)
        if hit.any():
            h = np.nonzero(hit)[0]
            counts[h] += contains(layer.geometry, cxy[h]).astype(float) - layer.filled[pos[h]]
    keep[cand] = _exact_pred(counts, mode, n)
    return keep


def _select_xy(
    xy: np.ndarray,
    ids: np.ndarray,
    regions: list,
    mode: str,
    frame: RasterFrame,
    exact: bool,
    threads: int = 1,
    cq: Optional[Canvas] = None,
) -> np.ndarray:
    """Boolean selection of point rows against a constraint."""
    n = len(regions)
    if cq is None:
        cq = _constraint_canvas(regions, frame)
    m = alg.mask_p_any() if mode == "any" else alg.mask_p_all(n)
    out = np.zeros(len(xy), dtype=bool)
    _, _, ok = frame.world_to_pixel(xy[:, 0], xy[:, 1])
    rows = np.nonzero(ok)[0]

    def run(part):
        batch = rasterize_points(xy[part], ids[part], frame)
        return part, _decide(batch, cq, m, mode, n, exact)

    chunks = [rows] if threads <= 1 or len(rows) < 2 * threads else np.array_split(rows, threads)
    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    for part, keep in results:
        out[part] = keep
    if exact and not ok.all():
        # outside the frame the canvases are empty; decide those points exactly
        rest = np.nonzero(~ok)[0]
        counts = sum(contains(r, xy[rest]).astype(float) for r in regions)
        out[rest] = _exact_pred(counts, mode, n)
    return out


def _check_kind(d: Dataset, *kinds: str) -> None:
    if d.kind not in kinds:
        raise QueryError(f"expected a {' or '.join(kinds)} dataset, got {d.kind}")


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def select_points(
    d: Dataset,
    q: Constraint,
    *,
    resolution: Optional[int] = None,
    frame: Optional[RasterFrame] = None,
    exact: bool = True,
    threads: int = 1,
) -> np.ndarray:
    """Ids of points inside ``q``, ascending.

    Plan: ``mask[M_p'](blend[odot](C_P, C_Q))``. ``PolygonSet`` constraints
    blend their regions with oplus first and require one (any) or all hits.
    """
    _check_kind(d, "points", "od")
    regions, mode = _regions(q)
    if not len(d):
        return np.zeros(0, dtype=np.int64)
    frame = query_frame([d.bounds] + [_bounds(r) for r in regions], resolution, frame)
    keep = _select_xy(d.xy, d.ids, regions, mode, frame, exact, threads)
    return np.sort(d.ids[keep])


def multi_polygon_select(d: Dataset, qs: PolygonSet, **opts) -> np.ndarray:
    """Points inside at least one (``any``) or every (``all``) polygon of ``qs``."""
    if not isinstance(qs, PolygonSet):
        qs = PolygonSet(tuple(qs))
    if not qs.polygons:
        raise EmptyPolygonSet("polygon set is empty")
    return select_points(d, qs, **opts)


def _window_flags(c: Canvas, win) -> np.ndarray:
    """Boundary-pixel mask of ``c`` over the window ``win``."""
    i0, j0, w, h = win
    out = np.zeros((h, w), dtype=bool)
    for layer in c.layers:
        i, j = c.frame.unflat(layer.pixels)
        ok = (i >= i0) & (i < i0 + w) & (j >= j0) & (j < j0 + h)
        out[j[ok] - j0, i[ok] - i0] = True
    return out


def _polygon_hit(cy: Canvas, geom: GeometricObject, cq: Canvas, region, exact: bool) -> bool:
    """Whether one polygon record intersects one constraint region.

    Plan: ``mask[M_y](blend[oplus](C_Y, C_Q))`` evaluated over C_Y's window
    (outside it C_Y is empty, so nothing there can reach count 2).
    """
    win = cy.window
    if win[2] == 0 or win[3] == 0:
        local_q = None
    else:
        local_q = cq.restricted(*win)
    if local_q is None:
        return exact and any(region_intersects(p, region) for p in geom.polygons)
    survived = alg.mask(alg.blend(cy, local_q, alg.OPLUS), alg.M_Y).cells.nonnull()
    if not exact:
        return bool(survived.any())
    edge = _window_flags(cy, win) | _window_flags(cq, win)
    if (survived & ~edge).any():
        return True
    fill_y = cy.cells.present(2)
    fill_q = local_q.cells.present(2)
    maybe = (fill_y | _window_flags(cy, win)) & (fill_q | _window_flags(cq, win))
    if not maybe.any():
        return False
    return any(region_intersects(p, region) for p in geom.polygons)


def _polygon_hits(d: Dataset, canvases: list, regions: list, mode: str, frame: RasterFrame, exact: bool) -> np.ndarray:
    per_region = []
    boxes = d.record_bounds()
    for region in regions:
        cq = region_canvas(region, InfoSeed(1), frame)
        rb = _bounds(region)
        hits = np.zeros(len(d), dtype=bool)
        for k, (cy, geom) in enumerate(zip(canvases, d.geoms)):
            if rb is not None and not boxes[k].intersects(rb):
                continue
            hits[k] = _polygon_hit(cy, geom, cq, region, exact)
        per_region.append(hits)
    stack = np.array(per_region)
    return stack.any(axis=0) if mode == "any" else stack.all(axis=0)


def select_polygons(
    d: Dataset,
    q: Constraint,
    *,
    resolution: Optional[int] = None,
    frame: Optional[RasterFrame] = None,
    exact: bool = True,
) -> np.ndarray:
    """Ids of polygon records intersecting ``q`` (closed regions), ascending."""
    _check_kind(d, "polygons")
    regions, mode = _regions(q)
    if not len(d):
        return np.zeros(0, dtype=np.int64)
    frame = query_frame([d.bounds] + [_bounds(r) for r in regions], resolution, frame)
    canvases = [rasterize(g, InfoSeed(int(i)), frame) for i, g in zip(d.ids, d.geoms)]
    keep = _polygon_hits(d, canvases, regions, mode, frame, exact)
    return np.sort(d.ids[keep])


# ---------------------------------------------------------------------------
# joins
# ---------------------------------------------------------------------------


def _pairs(a_ids: list, b_ids: list) -> np.ndarray:
    if not a_ids:
        return np.zeros((0, 2), dtype=np.int64)
    out = np.column_stack([np.concatenate(a_ids), np.concatenate(b_ids)]).astype(np.int64)
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def _in_box(xy: np.ndarray, box: Rect) -> np.ndarray:
    return (xy[:, 0] >= box.min.x) & (xy[:, 0] <= box.max.x) & (xy[:, 1] >= box.min.y) & (xy[:, 1] <= box.max.y)


def _join_points(a: Dataset, b: Dataset, frame: RasterFrame, exact: bool, threads: int = 1):
    """Per polygon record of ``b``: row indices of ``a`` points inside it."""
    a_box = a.bounds
    for bid, geom in zip(b.ids, b.geoms):
        box = geom.bounds
        if a_box is None or not box.intersects(a_box):
            continue
        rows = np.nonzero(_in_box(a.xy, box))[0]
        if not len(rows):
            continue
        cq = rasterize(geom, InfoSeed(int(bid)), frame)
        keep = _select_xy(a.xy[rows], a.ids[rows], [geom], "any", frame, exact, threads, cq=cq)
        yield int(bid), rows[keep]


def spatial_join(
    a: Dataset,
    b: Dataset,
    join_type: str = "I",
    *,
    resolution: Optional[int] = None,
    frame: Optional[RasterFrame] = None,
    exact: bool = True,
    threads: int = 1,
) -> np.ndarray:
    """``(a_id, b_id)`` pairs, sorted; nested loop of selections over ``b``'s records.

    Type I joins points against polygons, type II polygons against polygons.
    Records of ``b`` whose MBR misses ``a``'s MBR are skipped.
    """
    _check_kind(b, "polygons")
    if join_type not in ("I", "II"):
        raise ValueError(f"join type must be I or II, got {join_type!r}")
    if not len(a) or not len(b):
        return np.zeros((0, 2), dtype=np.int64)
    frame = query_frame([a.bounds, b.bounds], resolution, frame)
    a_ids, b_ids = [], []
    if join_type == "I":
        _check_kind(a, "points", "od")
        for bid, rows in _join_points(a, b, frame, exact, threads):
            a_ids.append(a.ids[rows])
            b_ids.append(np.full(len(rows), bid))
        return _pairs(a_ids, b_ids)
    _check_kind(a, "polygons")
    a_canvases = [rasterize(g, InfoSeed(int(i)), frame) for i, g in zip(a.ids, a.geoms)]
    a_boxes = a.record_bounds()
    a_box = a.bounds
    for bid, geom in zip(b.ids, b.geoms):
        box = geom.bounds
        if not box.intersects(a_box):
            continue
        cq = rasterize(geom, InfoSeed(int(bid)), frame)
        for k in range(len(a)):
            if a_boxes[k].intersects(box) and _polygon_hit(a_canvases[k], a.geoms[k], cq, geom, exact):
                a_ids.append(a.ids[k : k + 1])
                b_ids.append(np.array([bid]))
    return _pairs(a_ids, b_ids)


def distance_join(
    a: Dataset,
    b: Dataset,
    dist: float,
    *,
    resolution: Optional[int] = None,
    frame: Optional[RasterFrame] = None,
    exact: bool = True,
) -> np.ndarray:
    """Pairs ``(a_id, b_id)`` with ``distance(a, b) <= dist``: a join against circles around ``b``."""
    _check_kind(a, "points", "od")
    _check_kind(b, "points", "od")
    if not dist > 0:
        raise NonPositiveRadius(f"distance must be positive, got {dist}")
    if not len(a) or not len(b):
        return np.zeros((0, 2), dtype=np.int64)
    bb = b.bounds
    grown = Rect.from_bounds(bb.min.x - dist, bb.min.y - dist, bb.max.x + dist, bb.max.y + dist)
    frame = query_frame([a.bounds, grown], resolution, frame)
    a_ids, b_ids = [], []
    for bid, (x, y) in zip(b.ids, b.xy):
        circ = Circle(Point2(float(x), float(y)), float(dist))
        rows = np.nonzero(_in_box(a.xy, circ.bounds))[0]
        if not len(rows):
            continue
        keep = _select_xy(a.xy[rows], a.ids[rows], [circ], "any", frame, exact)
        a_ids.append(a.ids[rows[keep]])
        b_ids.append(np.full(int(keep.sum()), bid))
    return _pairs(a_ids, b_ids)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def _point_values(d: Dataset, agg) -> np.ndarray:
    if isinstance(agg, Sum):
        return d.attr(agg.attr)
    return np.zeros(len(d))


def _reduce_groups(stream: CanvasBatch, agg, max_id: int) -> dict:
    """gamma_c with resolver + into the id frame, then read row 0 per group."""
    blend_fn = alg.PLUS_SUM if isinstance(agg, Sum) else alg.PLUS
    moved = alg.geometric_transform(stream, alg.GAMMA_C, frame=_id_frame(max_id))
    out = alg.multiway_blend(moved, blend_fn)
    r0 = out.cells.rows[0]
    if r0 is None:
        return {}
    lj, li = np.nonzero(r0.present)
    gids = li + out.origin[0]
    field_ = r0.value if isinstance(agg, Sum) else r0.count
    vals = np.broadcast_to(field_, r0.shape)[lj, li]
    order = np.argsort(gids)
    if isinstance(agg, Sum):
        return {int(g): float(v) for g, v in zip(gids[order], vals[order])}
    return {int(g): int(v) for g, v in zip(gids[order], vals[order])}


def aggregate_select(d: Dataset, q: Constraint, agg: Aggregate = "count", **opts):
    """Count (or sum of an attribute) over the points selected by ``q``.

    Plan: ``multiway_blend[+](geometric_transform[gamma_c](C_result))`` read at
    pixel ``(1, 0)``.
    """
    agg = _agg(agg)
    values = _point_values(d, agg)
    if not len(d):
        return 0.0 if isinstance(agg, Sum) else 0
    regions, _ = _regions(q)
    frame = query_frame([d.bounds] + [_bounds(r) for r in regions], opts.get("resolution"), opts.get("frame"))
    sel = np.isin(d.ids, select_points(d, q, frame=frame, exact=opts.get("exact", True), threads=opts.get("threads", 1)))
    batch = rasterize_points(d.xy[sel], d.ids[sel], frame, 1.0, values[sel])
    result = _reduce_groups(_tag_row2(batch, 1), agg, 1)
    if isinstance(agg, Sum):
        return result.get(1, 0.0)
    return result.get(1, 0)


def _id_index(ids: np.ndarray):
    order = np.argsort(ids)
    sorted_ids = ids[order]

    def rows_of(q):
        return order[np.searchsorted(sorted_ids, q)]

    return rows_of


def groupby_join_aggregate(
    p: Dataset,
    y: Dataset,
    agg: Aggregate = "count",
    plan: str = "canonical",
    *,
    resolution: Optional[int] = None,
    frame: Optional[RasterFrame] = None,
    exact: bool = True,
    threads: int = 1,
) -> dict:
    """Per polygon id, the count (or attribute sum) of points inside it.

    ``plan="canonical"`` joins every polygon with the point canvases and
    aggregates with gamma_c and ``+``. ``plan="rasterjoin"`` first merges all
    points into one count canvas. Polygons with no points are omitted. With
    ``exact=False`` the raster-join answer may be off by at most
    :func:`rasterjoin_error_bounds` per group.
    """
    _check_kind(p, "points", "od")
    _check_kind(y, "polygons")
    agg = _agg(agg)
    values = _point_values(p, agg)
    if plan not in ("canonical", "rasterjoin"):
        raise ValueError(f"unknown plan {plan!r}")
    if not len(p) or not len(y):
        return {}
    frame = query_frame([p.bounds, y.bounds], resolution, frame)
    max_id = int(y.ids.max())
    if plan == "canonical":
        parts = []
        for yid, rows in _join_points(p, y, frame, exact, threads):
            b = rasterize_points(p.xy[rows], p.ids[rows], frame, 1.0, values[rows])
            parts.append(_tag_row2(b, yid))
        return _reduce_groups(_concat_batches(frame, parts), agg, max_id)
    return _rasterjoin(p, y, agg, values, frame, exact, max_id)


def _merged_points(p: Dataset, values: np.ndarray, frame: RasterFrame, agg) -> Canvas:
    """``multiway_blend[+](C_P)`` with the exact point locations attached."""
    batch = rasterize_points(p.xy, p.ids, frame, 1.0, values)
    merged = alg.multiway_blend(batch, alg.PLUS_SUM if isinstance(agg, Sum) else alg.PLUS)
    entries = PointEntries.build(batch.flat, batch.cells.rows[0].id, batch.xy)
    return Canvas(merged.frame, merged.cells, merged.origin, merged.layers, entries)


def _rasterjoin(p: Dataset, y: Dataset, agg, values, frame, exact, max_id) -> dict:
    merged = _merged_points(p, values, frame, agg)
    rows_of = _id_index(p.ids)
    parts = []
    for yid, geom in zip(y.ids, y.geoms):
        cy = rasterize(geom, InfoSeed(int(yid)), frame)
        win = cy.window
        if win[2] == 0 or win[3] == 0:
            continue
        local = merged.restricted(*win)
        joined = alg.mask(alg.blend(local, cy, alg.ODOT), alg.mask_p_any())
        pieces = alg.dissect(joined)
        if exact:
            edge = cy.boundary_flat()
            if len(pieces):
                pieces = pieces.subset(~np.isin(pieces.flat, edge))
            idx = merged.points.in_pixels(edge)
            if len(idx):
                pxy = merged.points.xy[idx]
                inside = contains(geom, pxy)
                idx = idx[inside]
                pids = merged.points.ids[idx]
                b = rasterize_points(pxy[inside], pids, frame, 1.0, values[rows_of(pids)])
                parts.append(_tag_row2(b, int(yid)))
        if len(pieces):
            parts.append(CanvasBatch(frame, pieces.pix_i, pieces.pix_j, pieces.cells, None))
    return _reduce_groups(_concat_batches(frame, parts), agg, max_id)


def rasterjoin_error_bounds(p: Dataset, y: Dataset, *, resolution: Optional[int] = None, frame=None) -> dict:
    """Per polygon id, the number of points lying in that polygon's boundary pixels."""
    frame = query_frame([p.bounds, y.bounds], resolution, frame)
    batch = rasterize_points(p.xy, p.ids, frame)
    entries = PointEntries.build(batch.flat, batch.cells.rows[0].id, batch.xy)
    out = {}
    for yid, geom in zip(y.ids, y.geoms):
        cy = rasterize(geom, InfoSeed(int(yid)), frame)
        out[int(yid)] = int(len(entries.in_pixels(cy.boundary_flat())))
    return out


# ---------------------------------------------------------------------------
# kNN, Voronoi, origin-destination
# ---------------------------------------------------------------------------


def knn(
    d: Dataset,
    x: Point2,
    k: int,
    *,
    resolution: Optional[int] = None,
    frame: Optional[RasterFrame] = None,
    max_steps: int = 200,
) -> np.ndarray:
    """Ids of the ``k`` points nearest to ``x``, ordered by (distance, id).

    Searches the radius ``r`` of a circle constraint so that the exact
    distance-selection count ``n(r)`` reaches ``k``; ``n`` is monotone, so an
    exponential search followed by bisection terminates. Equal distances are
    ordered by id.
    """
    _check_kind(d, "points", "od")
    n_pts = len(d)
    if not 1 <= k <= n_pts:
        raise KOutOfRange(f"k={k} outside 1..{n_pts}")
    if not isinstance(x, Point2):
        x = Point2(*map(float, x))
    frame = query_frame([d.bounds, Rect.from_bounds(x.x, x.y, x.x, x.y)], resolution, frame)
    batch = rasterize_points(d.xy, d.ids, frame)
    rows_of = _id_index(d.ids)
    m = alg.mask_p_any()

    def selected(r: float) -> np.ndarray:
        cq = circle_canvas(Circle(x, r), InfoSeed(1), frame)
        i0, j0, w, h = cq.window
        near = (batch.pix_i >= i0) & (batch.pix_i < i0 + w) & (batch.pix_j >= j0) & (batch.pix_j < j0 + h)
        sub = batch.subset(near)
        keep = _decide(sub, cq, m, "any", 1, True)
        return sub.cells.rows[0].id[keep]

    r_lo = 0.0
    r = frame.diagonal * np.sqrt(k / n_pts) / 4
    while True:
        s_hi = selected(r)
        if len(s_hi) >= k:
            r_hi = r
            break
        r_lo, r = r, r * 2
    for _ in range(max_steps):
        if len(s_hi) == k:
            break
        mid = (r_lo + r_hi) / 2
        if not r_lo < mid < r_hi:
            break
        s = selected(mid)
        if len(s) >= k:
            r_hi, s_hi = mid, s
        else:
            r_lo = mid
    rows = rows_of(s_hi)
    dist = distances(d.xy[rows], x)
    order = np.lexsort((d.ids[rows], dist))
    return d.ids[rows[order[:k]]]


def voronoi(
    seeds: Sequence[Point2],
    frame: Optional[RasterFrame] = None,
    *,
    resolution: Optional[int] = None,
    keep_on_tie: bool = True,
) -> Canvas:
    """Nearest-seed labelling: row 2 of each pixel is ``(seed index, distance, 0)``.

    Folds one value transform per seed over an empty canvas; seed indices
    start at 1 and equidistant pixels keep the lower index.
    """
    seeds = [s if isinstance(s, Point2) else Point2(*map(float, s)) for s in seeds]
    if not seeds:
        raise QueryError("voronoi needs at least one seed")
    if len({(s.x, s.y) for s in seeds}) != len(seeds):
        raise DuplicateSeed("seed locations must be distinct")
    if frame is None:
        frame = query_frame([Rect.from_bounds(s.x, s.y, s.x, s.y) for s in seeds], resolution)
    c = Canvas.empty(frame)
    for idx, s in enumerate(seeds, start=1):
        c = alg.value_transform(c, alg.voronoi_step(s, idx, keep_on_tie))
    return c


def od_select(
    d: Dataset,
    q1: Constraint,
    q2: Constraint,
    *,
    resolution: Optional[int] = None,
    frame: Optional[RasterFrame] = None,
    exact: bool = True,
) -> np.ndarray:
    """Ids of trips whose origin is inside ``q1`` and destination inside ``q2``.

    Origins are selected against ``C_Q1``, survivors are moved to their
    destinations with gamma_d, blended with ``C_Q2`` (seed id 2) and kept by
    ``M_p`` testing for id 2.
    """
    if d.kind != "od" or d.dest is None:
        raise MissingDestination("dataset has no destination attribute")
    r1, mode1 = _regions(q1)
    r2, mode2 = _regions(q2)
    if not len(d):
        return np.zeros(0, dtype=np.int64)
    frame = query_frame([d.bounds] + [_bounds(r) for r in r1 + r2], resolution, frame)
    first = _select_xy(d.xy, d.ids, r1, mode1, frame, exact)
    if not first.any():
        return np.zeros(0, dtype=np.int64)
    sel_ids = d.ids[first]
    origins = rasterize_points(d.xy[first], sel_ids, frame)
    moved = alg.geometric_transform(origins, alg.gamma_d(d.ids, d.dest))
    cq2 = _constraint_canvas(r2, frame, seed_id=2)
    n2 = len(r2)
    m = alg.mask_p(2) if mode2 == "any" and n2 == 1 else (alg.mask_p_any() if mode2 == "any" else alg.mask_p_all(n2))
    keep = _decide(moved, cq2, m, mode2, n2, exact)
    out = set(moved.cells.rows[0].id[keep].tolist())
    if exact:
        # destinations outside the frame were dropped by the transform
        landed = np.isin(sel_ids, moved.cells.rows[0].id)
        rows_of = _id_index(d.ids)
        lost = sel_ids[~landed]
        if len(lost):
            counts = sum(contains(r, d.dest[rows_of(lost)]).astype(float) for r in r2)
            out.update(lost[_exact_pred(counts, mode2, n2)].tolist())
    return np.array(sorted(out), dtype=np.int64)
