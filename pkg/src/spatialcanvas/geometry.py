"""Exact 2D vector geometry: primitives, validation and predicates.

All predicates work in plain double precision. The only tolerance is the
on-boundary distance ``BOUNDARY_TOL``; every other comparison is exact on the
floating point inputs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

BOUNDARY_TOL = 1e-12

# pairs of (point, edge) evaluated per broadcast block
_BLOCK = 1 << 21


class GeometryError(ValueError):
    """Base class for invalid geometry."""


class DegenerateRing(GeometryError):
    pass


class SelfIntersectingRing(GeometryError):
    pass


class HoleOutsideOuter(GeometryError):
    pass


class OverlappingHoles(GeometryError):
    pass


class NonPositiveRadius(GeometryError):
    pass


class DegenerateHalfSpace(GeometryError):
    pass


class Containment(enum.IntEnum):
    OUTSIDE = 0
    INSIDE = 1
    ON_BOUNDARY = 2


@dataclass(frozen=True, slots=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite coordinate ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    @property
    def bounds(self) -> Rect:
        return Rect(self, self)


@dataclass(frozen=True, slots=True)
class Rect:
    min: Point2
    max: Point2

    def __post_init__(self):
        if self.min.x > self.max.x or self.min.y > self.max.y:
            raise GeometryError(f"inverted rectangle {self.min} - {self.max}")

    @classmethod
    def from_bounds(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> Rect:
        return cls(Point2(float(xmin), float(ymin)), Point2(float(xmax), float(ymax)))

    @classmethod
    def from_corners(cls, l1: Point2, l2: Point2) -> Rect:
        """Rectangle spanned by two diagonal end points, in any order."""
        return cls.from_bounds(min(l1.x, l2.x), min(l1.y, l2.y), max(l1.x, l2.x), max(l1.y, l2.y))

    @property
    def width(self) -> float:
        return self.max.x - self.min.x

    @property
    def height(self) -> float:
        return self.max.y - self.min.y

    @property
    def bounds(self) -> Rect:
        return self

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.min.x, self.min.y, self.max.x, self.max.y)

    def union(self, other: Rect) -> Rect:
        return Rect.from_bounds(
            min(self.min.x, other.min.x),
            min(self.min.y, other.min.y),
            max(self.max.x, other.max.x),
            max(self.max.y, other.max.y),
        )

    def intersects(self, other: Rect) -> bool:
        return not (
            other.min.x > self.max.x
            or other.max.x < self.min.x
            or other.min.y > self.max.y
            or other.max.y < self.min.y
        )

    def expanded(self, fraction: float) -> Rect:
        dx = self.width * fraction
        dy = self.height * fraction
        return Rect.from_bounds(self.min.x - dx, self.min.y - dy, self.max.x + dx, self.max.y + dy)

    def to_polygon(self) -> Polygon:
        x0, y0, x1, y1 = self.as_tuple()
        return validate_polygon([[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]])

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        x, y = xy[:, 0], xy[:, 1]
        return (x >= self.min.x) & (x <= self.max.x) & (y >= self.min.y) & (y <= self.max.y)


@dataclass(frozen=True, slots=True)
class Circle:
    center: Point2
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise NonPositiveRadius(f"radius must be positive, got {self.r}")

    @property
    def bounds(self) -> Rect:
        c = self.center
        return Rect.from_bounds(c.x - self.r, c.y - self.r, c.x + self.r, c.y + self.r)

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        # closed disc, same distance formula as ``distance``
        return distances(xy, self.center) <= self.r


@dataclass(frozen=True, slots=True)
class HalfSpace:
    """The open half plane ``a*x + b*y + c < 0``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise DegenerateHalfSpace("a and b cannot both be zero")

    bounds = None

    def evaluate(self, x, y):
        return self.a * x + self.b * y + self.c

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return self.evaluate(xy[:, 0], xy[:, 1]) < 0


@dataclass(frozen=True, eq=False)
class Polyline:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 2:
            raise GeometryError("a polyline needs at least two vertices")
        if not np.isfinite(v).all():
            raise GeometryError("non-finite polyline vertex")
        if (np.diff(v, axis=0) == 0).all(axis=1).any():
            raise GeometryError("consecutive polyline vertices must differ")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def bounds(self) -> Rect:
        return _bounds_of(self.vertices)

    def segments(self) -> np.ndarray:
        return np.hstack([self.vertices[:-1], self.vertices[1:]])


@dataclass(frozen=True, eq=False)
class Polygon:
    """A validated polygon: counter-clockwise outer ring, clockwise holes.

    Rings are stored open (no repeated closing vertex) as read-only ``(n, 2)``
    arrays. Build instances through :func:`validate_polygon`.
    """

    outer: np.ndarray
    holes: tuple[np.ndarray, ...] = field(default=())

    @property
    def rings(self) -> tuple[np.ndarray, ...]:
        return (self.outer, *self.holes)

    @property
    def bounds(self) -> Rect:
        return _bounds_of(self.outer)

    def edges(self) -> np.ndarray:
        """All ring edges as an ``(E, 4)`` array of ``x0, y0, x1, y1``."""
        return np.vstack([_ring_edges(r) for r in self.rings])

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        return classify_points(xy, self) != Containment.OUTSIDE

    def __eq__(self, other):
        if not isinstance(other, Polygon) or len(self.holes) != len(other.holes):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.rings, other.rings))

    __hash__ = object.__hash__


Primitive = Union[Point2, Polyline, Polygon]


def dimension_of(prim: Primitive) -> int:
    if isinstance(prim, Point2):
        return 0
    if isinstance(prim, Polyline):
        return 1
    if isinstance(prim, Polygon):
        return 2
    raise TypeError(f"not a geometric primitive: {type(prim).__name__}")


@dataclass(frozen=True, eq=False)
class GeometricObject:
    """A non-empty, possibly heterogeneous collection of primitives."""

    primitives: tuple[Primitive, ...]

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise GeometryError("a geometric object needs at least one primitive")
        for p in prims:
            dimension_of(p)
        object.__setattr__(self, "primitives", prims)

    @classmethod
    def of(cls, *prims: Primitive) -> GeometricObject:
        return cls(prims)

    def of_dimension(self, d: int) -> list:
        return [p for p in self.primitives if dimension_of(p) == d]

    @property
    def points(self) -> list[Point2]:
        return self.of_dimension(0)

    @property
    def polylines(self) -> list[Polyline]:
        return self.of_dimension(1)

    @property
    def polygons(self) -> list[Polygon]:
        return self.of_dimension(2)

    @property
    def dimensions(self) -> set[int]:
        return {dimension_of(p) for p in self.primitives}

    @property
    def bounds(self) -> Rect:
        return mbr(self)

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        """Closed containment in the union of the object's 2-primitives."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        out = np.zeros(len(xy), dtype=bool)
        for poly in self.polygons:
            out |= poly.contains_xy(xy)
        return out


Region = Union[Polygon, GeometricObject, Rect, Circle, HalfSpace]


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------


def _bounds_of(v: np.ndarray) -> Rect:
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    return Rect.from_bounds(lo[0], lo[1], hi[0], hi[1])


def _ring_edges(ring: np.ndarray) -> np.ndarray:
    return np.hstack([ring, np.roll(ring, -1, axis=0)])


def signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _clean_ring(raw) -> np.ndarray:
    ring = np.asarray(raw, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise DegenerateRing(f"ring must be a list of (x, y) pairs, got shape {ring.shape}")
    if not np.isfinite(ring).all():
        raise GeometryError("non-finite ring vertex")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring):
        keep = np.ones(len(ring), dtype=bool)
        keep[1:] = (np.diff(ring, axis=0) != 0).any(axis=1)
        ring = ring[keep]
        while len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
            ring = ring[:-1]
    if len(np.unique(ring, axis=0)) < 3:
        raise DegenerateRing(f"ring has fewer than 3 distinct vertices: {ring.tolist()}")
    d = ring[1:] - ring[0]
    if not (d[:, 0] * d[0, 1] - d[:, 1] * d[0, 0]).any():
        raise DegenerateRing("ring vertices are collinear")
    return ring


def _ring_is_simple(ring: np.ndarray) -> bool:
    n = len(ring)
    edges = _ring_edges(ring)
    hits = segments_intersect_matrix(edges, edges)
    idx = np.arange(n)
    hits[idx, idx] = False
    hits[idx, (idx + 1) % n] = False
    hits[(idx + 1) % n, idx] = False
    if hits.any():
        return False
    # adjacent edges may only share their common vertex
    d = edges[:, 2:] - edges[:, :2]
    nxt = np.roll(d, -1, axis=0)
    cross = d[:, 0] * nxt[:, 1] - d[:, 1] * nxt[:, 0]
    dot = (d * nxt).sum(axis=1)
    return not ((cross == 0) & (dot < 0)).any()


def _orient(ring: np.ndarray, ccw: bool) -> np.ndarray:
    if (signed_area(ring) > 0) != ccw:
        ring = ring[::-1]
    ring = np.ascontiguousarray(ring)
    ring.setflags(write=False)
    return ring


def validate_polygon(rings: Sequence[Iterable]) -> Polygon:
    """Validate raw rings (outer first, then holes) and normalize orientation.

    Raises
    ------
    DegenerateRing
        A ring has fewer than three distinct vertices or zero area.
    SelfIntersectingRing
        A ring crosses or touches itself.
    HoleOutsideOuter
        A hole is not strictly inside the outer ring.
    OverlappingHoles
        Two holes share at least one point.
    """
    rings = list(rings)
    if not rings:
        raise DegenerateRing("at least one ring is required")
    cleaned = [_clean_ring(r) for r in rings]
    for ring in cleaned:
        if not _ring_is_simple(ring):
            raise SelfIntersectingRing(f"ring is not simple: {ring.tolist()}")
        if signed_area(ring) == 0:
            raise DegenerateRing("ring has zero area")
    outer = _orient(cleaned[0], ccw=True)
    holes = tuple(_orient(h, ccw=False) for h in cleaned[1:])
    shell = Polygon(outer)
    outer_edges = _ring_edges(outer)
    for hole in holes:
        if segments_intersect_matrix(_ring_edges(hole), outer_edges).any():
            raise HoleOutsideOuter("hole touches or crosses the outer ring")
        if classify_points(hole[:1], shell)[0] != Containment.INSIDE:
            raise HoleOutsideOuter("hole lies outside the outer ring")
    for i, h1 in enumerate(holes):
        for h2 in holes[i + 1 :]:
            if segments_intersect_matrix(_ring_edges(h1), _ring_edges(h2)).any():
                raise OverlappingHoles("holes touch or cross")
            if (
                classify_points(h1[:1], Polygon(h2))[0] != Containment.OUTSIDE
                or classify_points(h2[:1], Polygon(h1))[0] != Containment.OUTSIDE
            ):
                raise OverlappingHoles("one hole contains another")
    return Polygon(outer, holes)


# ---------------------------------------------------------------------------
# predicates
# ---------------------------------------------------------------------------


def _orientation(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(a, b) -> bool:
    """True iff the closed segments ``a`` and ``b`` share at least one point.

    Each segment is ``((x0, y0), (x1, y1))`` or a flat ``(x0, y0, x1, y1)``.
    """
    sa = np.asarray(a, dtype=float).reshape(1, 4)
    sb = np.asarray(b, dtype=float).reshape(1, 4)
    return bool(segments_intersect_matrix(sa, sb)[0, 0])


def segments_intersect_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise closed-segment intersection, ``(n, 4) x (m, 4) -> (n, m)``."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax0, ay0, ax1, ay1 = (a[:, k, None] for k in range(4))
    bx0, by0, bx1, by1 = (b[None, :, k] for k in range(4))
    d1 = _orientation(bx0, by0, bx1, by1, ax0, ay0)
    d2 = _orientation(bx0, by0, bx1, by1, ax1, ay1)
    d3 = _orientation(ax0, ay0, ax1, ay1, bx0, by0)
    d4 = _orientation(ax0, ay0, ax1, ay1, bx1, by1)
    proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)

    def within(px, py, qx0, qy0, qx1, qy1):
        return (
            (np.minimum(qx0, qx1) <= px)
            & (px <= np.maximum(qx0, qx1))
            & (np.minimum(qy0, qy1) <= py)
            & (py <= np.maximum(qy0, qy1))
        )

    touch = (
        ((d1 == 0) & within(ax0, ay0, bx0, by0, bx1, by1))
        | ((d2 == 0) & within(ax1, ay1, bx0, by0, bx1, by1))
        | ((d3 == 0) & within(bx0, by0, ax0, ay0, ax1, ay1))
        | ((d4 == 0) & within(bx1, by1, ax0, ay0, ax1, ay1))
    )
    return proper | touch


def _classify_block(px, py, edges, tol):
    x0, y0, x1, y1 = (edges[None, :, k] for k in range(4))
    px = px[:, None]
    py = py[:, None]
    crosses = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    inside = (crosses & (px < xint)).sum(axis=1) % 2 == 1

    near = (
        (px >= np.minimum(x0, x1) - tol)
        & (px <= np.maximum(x0, x1) + tol)
        & (py >= np.minimum(y0, y1) - tol)
        & (py <= np.maximum(y0, y1) + tol)
    )
    on = np.zeros(len(px), dtype=bool)
    pi, ei = np.nonzero(near)
    if len(pi):
        e = edges[ei]
        ex, ey = e[:, 2] - e[:, 0], e[:, 3] - e[:, 1]
        qx, qy = px[pi, 0] - e[:, 0], py[pi, 0] - e[:, 1]
        t = np.clip((qx * ex + qy * ey) / (ex * ex + ey * ey), 0.0, 1.0)
        dx = qx - t * ex
        dy = qy - t * ey
        hit = dx * dx + dy * dy <= tol * tol
        on[pi[hit]] = True
    out = np.where(inside, Containment.INSIDE, Containment.OUTSIDE).astype(np.int8)
    out[on] = Containment.ON_BOUNDARY
    return out


def classify_points(xy, poly: Polygon, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Even-odd classification of many points against one polygon.

    Returns an ``int8`` array of :class:`Containment` codes. The ray goes
    toward +x; a vertex lying exactly on the ray is treated as above it, which
    is the usual symbolic perturbation of the ray.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    edges = poly.edges()
    out = np.empty(len(xy), dtype=np.int8)
    step = max(1, _BLOCK // len(edges))
    for s in range(0, len(xy), step):
        blk = xy[s : s + step]
        out[s : s + step] = _classify_block(blk[:, 0], blk[:, 1], edges, tol)
    return out


def point_in_polygon(p: Point2, poly: Polygon, tol: float = BOUNDARY_TOL) -> Containment:
    return Containment(int(classify_points([(p.x, p.y)], poly, tol)[0]))


def contains(region: Region, xy) -> np.ndarray:
    """Vectorized membership of points in a constraint region.

    Polygons, rectangles and circles are closed; a half space is open, as its
    defining inequality is strict.
    """
    if isinstance(region, (list, tuple)):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        out = np.zeros(len(xy), dtype=bool)
        for r in region:
            out |= contains(r, xy)
        return out
    return region.contains_xy(xy)


def polygons_intersect(a: Polygon, b: Polygon) -> bool:
    """True iff the closed regions of two validated polygons share a point."""
    if not a.bounds.intersects(b.bounds):
        return False
    if segments_intersect_matrix(a.edges(), b.edges()).any():
        return True
    # boundaries are disjoint: one outer ring lies inside the other region or
    # the regions are disjoint
    if classify_points(a.outer[:1], b)[0] != Containment.OUTSIDE:
        return True
    return classify_points(b.outer[:1], a)[0] != Containment.OUTSIDE


def objects_intersect(a: GeometricObject, b: GeometricObject) -> bool:
    return any(polygons_intersect(p, q) for p in a.polygons for q in b.polygons)


def mbr(obj) -> Rect:
    """Minimum bounding rectangle of an object, primitive or bounded shape."""
    if isinstance(obj, GeometricObject):
        boxes = [p.bounds for p in obj.primitives]
        out = boxes[0]
        for b in boxes[1:]:
            out = out.union(b)
        return out
    bounds = getattr(obj, "bounds", None)
    if bounds is None:
        raise ValueError(f"{type(obj).__name__} is unbounded")
    return bounds


def distance(p: Point2, q: Point2) -> float:
    dx = p.x - q.x
    dy = p.y - q.y
    return math.sqrt(dx * dx + dy * dy)


def distances(xy, p: Point2) -> np.ndarray:
    """Distances from many points to ``p``; bitwise equal to :func:`distance`."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    dx = xy[:, 0] - p.x
    dy = xy[:, 1] - p.y
    return np.sqrt(dx * dx + dy * dy)


def _segment_distances(p: Point2, edges: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = edges.T
    ex, ey = x1 - x0, y1 - y0
    ll = ex * ex + ey * ey
    t = np.clip(((p.x - x0) * ex + (p.y - y0) * ey) / np.where(ll > 0, ll, 1.0), 0.0, 1.0)
    dx = x0 + t * ex - p.x
    dy = y0 + t * ey - p.y
    return np.sqrt(dx * dx + dy * dy)


def region_intersects(poly: Polygon, region) -> bool:
    """Exact test whether a polygon meets a constraint region.

    Regions follow :func:`contains`: closed polygons, rectangles and circles,
    open half spaces, and unions given as lists or objects.
    """
    if isinstance(region, GeometricObject):
        region = list(region.polygons)
    if isinstance(region, (list, tuple)):
        return any(region_intersects(poly, r) for r in region)
    if isinstance(region, Polygon):
        return polygons_intersect(poly, region)
    if isinstance(region, Rect):
        if region.width == 0 or region.height == 0:
            return bool(contains(poly, np.array([[region.min.x, region.min.y]]))[0]) or any(
                segments_intersect(e, (region.min.x, region.min.y, region.max.x, region.max.y))
                for e in poly.edges()
            )
        return polygons_intersect(poly, region.to_polygon())
    if isinstance(region, Circle):
        c = region.center
        if poly.contains_xy(np.array([[c.x, c.y]]))[0]:
            return True
        return bool((_segment_distances(c, poly.edges()) <= region.r).any())
    if isinstance(region, HalfSpace):
        return bool((region.evaluate(poly.outer[:, 0], poly.outer[:, 1]) < 0).any())
    raise TypeError(f"unsupported region {type(region).__name__}")
