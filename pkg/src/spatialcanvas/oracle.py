"""Brute-force reference answers.

Everything here works on vector geometry only; no canvas is ever built.
Results use the same shapes as :mod:`spatialcanvas.queries` so they can be
compared directly.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .geometry import Point2, contains, distances, region_intersects
from .queries import Dataset, KOutOfRange, PolygonSet, Sum, _agg


def _regions(q):
    if isinstance(q, PolygonSet):
        return list(q.polygons), q.mode
    return [q], "any"


def _combine(hits: list, mode: str) -> np.ndarray:
    stack = np.array(hits)
    return stack.any(axis=0) if mode == "any" else stack.all(axis=0)


def _point_mask(xy: np.ndarray, q) -> np.ndarray:
    regions, mode = _regions(q)
    return _combine([contains(r, xy) for r in regions], mode)


def oracle_select(d: Dataset, q) -> np.ndarray:
    """Ids satisfying ``q``: containment for points, intersection for polygons."""
    if not len(d):
        return np.zeros(0, dtype=np.int64)
    if d.kind == "polygons":
        regions, mode = _regions(q)
        hits = [[any(region_intersects(p, r) for p in g.polygons) for g in d.geoms] for r in regions]
        keep = _combine(hits, mode)
    else:
        keep = _point_mask(d.xy, q)
    return np.sort(d.ids[keep])


def _sorted_pairs(pairs: list) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    out = np.array(pairs, dtype=np.int64)
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def oracle_join(a: Dataset, b: Dataset, join_type: str = "I") -> np.ndarray:
    """All ``(a_id, b_id)`` pairs by exhaustive testing."""
    pairs = []
    for bid, g in zip(b.ids, b.geoms):
        if join_type == "I":
            inside = contains(g, a.xy) if len(a) else np.zeros(0, bool)
            pairs.extend((int(aid), int(bid)) for aid in a.ids[inside])
        else:
            for aid, ga in zip(a.ids, a.geoms):
                if any(region_intersects(p, q) for p in ga.polygons for q in g.polygons):
                    pairs.append((int(aid), int(bid)))
    return _sorted_pairs(pairs)


def oracle_distance_join(a: Dataset, b: Dataset, dist: float) -> np.ndarray:
    pairs = []
    for bid, (x, y) in zip(b.ids, b.xy):
        near = distances(a.xy, Point2(float(x), float(y))) <= dist
        pairs.extend((int(aid), int(bid)) for aid in a.ids[near])
    return _sorted_pairs(pairs)


def oracle_aggregate(d: Dataset, q, agg="count"):
    agg = _agg(agg)
    keep = _point_mask(d.xy, q) if len(d) else np.zeros(0, bool)
    if isinstance(agg, Sum):
        return math.fsum(d.attr(agg.attr)[keep])
    return int(keep.sum())


def oracle_group_aggregate(p: Dataset, y: Dataset, agg="count") -> dict:
    """Per polygon id the exact count, or the compensated sum, of points inside."""
    agg = _agg(agg)
    out = {}
    for yid, g in zip(y.ids, y.geoms):
        inside = contains(g, p.xy) if len(p) else np.zeros(0, bool)
        if not inside.any():
            continue
        if isinstance(agg, Sum):
            out[int(yid)] = math.fsum(p.attr(agg.attr)[inside])
        else:
            out[int(yid)] = int(inside.sum())
    return dict(sorted(out.items()))


def oracle_knn(d: Dataset, x, k: int) -> np.ndarray:
    """First ``k`` ids after sorting by (distance, id)."""
    if not 1 <= k <= len(d):
        raise KOutOfRange(f"k={k} outside 1..{len(d)}")
    if not isinstance(x, Point2):
        x = Point2(*map(float, x))
    dist = distances(d.xy, x)
    order = np.lexsort((d.ids, dist))
    return d.ids[order[:k]]


def oracle_voronoi_label(seeds: Sequence[Point2], center: Point2) -> int:
    """1-based index of the nearest seed; ties go to the lowest index."""
    best, best_d = 0, math.inf
    for idx, s in enumerate(seeds, start=1):
        dx = center.x - s.x
        dy = center.y - s.y
        dd = math.sqrt(dx * dx + dy * dy)
        if dd < best_d:
            best, best_d = idx, dd
    return best


def oracle_voronoi_labels(seeds: Sequence[Point2], x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized :func:`oracle_voronoi_label` over arrays of pixel centers."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    best = np.zeros(x.shape, dtype=np.int64)
    best_d = np.full(x.shape, np.inf)
    for idx, s in enumerate(seeds, start=1):
        dx = x - s.x
        dy = y - s.y
        dd = np.sqrt(dx * dx + dy * dy)
        closer = dd < best_d
        best[closer] = idx
        best_d[closer] = dd[closer]
    return best


def oracle_od_select(d: Dataset, q1, q2) -> np.ndarray:
    if not len(d):
        return np.zeros(0, dtype=np.int64)
    keep = _point_mask(d.xy, q1) & _point_mask(d.dest, q2)
    return np.sort(d.ids[keep])
