"""Synthetic workloads: random points and polygons, plus the shipped fixtures."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .geometry import GeometricObject, Polygon, Rect, validate_polygon
from .queries import Dataset

BENCH_EXTENT = Rect.from_bounds(0.0, 0.0, 100.0, 100.0)


def uniform_points(rng: np.random.Generator, n: int, extent: Rect = BENCH_EXTENT) -> np.ndarray:
    lo = np.array([extent.min.x, extent.min.y])
    hi = np.array([extent.max.x, extent.max.y])
    return lo + rng.random((n, 2)) * (hi - lo)


def clustered_points(rng: np.random.Generator, n: int, extent: Rect = BENCH_EXTENT, clusters: int = 8) -> np.ndarray:
    """Gaussian blobs around random centers, clipped to the extent."""
    lo = np.array([extent.min.x, extent.min.y])
    hi = np.array([extent.max.x, extent.max.y])
    span = hi - lo
    centers = lo + rng.random((clusters, 2)) * span
    scale = rng.uniform(0.02, 0.08, size=clusters)[:, None] * span
    which = rng.integers(0, clusters, size=n)
    pts = centers[which] + rng.standard_normal((n, 2)) * scale[which]
    return np.clip(pts, lo, hi)


def point_dataset(xy: np.ndarray, first_id: int = 1, **attrs) -> Dataset:
    return Dataset.points(np.arange(first_id, first_id + len(xy)), xy, **attrs)


def _star_ring(rng, cx, cy, n, r_min, r_max):
    gaps = rng.uniform(0.5, 1.5, size=n)
    ang = np.cumsum(gaps / gaps.sum() * 2 * np.pi) + rng.uniform(0, 2 * np.pi)
    r = rng.uniform(r_min, r_max, size=n)
    max_gap = float((gaps / gaps.sum() * 2 * np.pi).max())
    return np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)]), max_gap


def random_polygon(rng: np.random.Generator, extent: Rect = Rect.from_bounds(0, 0, 1, 1), kind: str = "any",
                   size: float = 0.25) -> Polygon:
    """A random simple polygon: ``convex``, ``concave`` (star-shaped) or ``holed``.

    ``size`` is the outer radius as a fraction of the extent's smaller side.
    """
    if kind == "any":
        kind = ("convex", "concave", "holed")[int(rng.integers(0, 3))]
    s = min(extent.width, extent.height) * size
    cx = rng.uniform(extent.min.x + s, extent.max.x - s)
    cy = rng.uniform(extent.min.y + s, extent.max.y - s)
    n = int(rng.integers(5, 16))
    if kind == "convex":
        ring, _ = _star_ring(rng, cx, cy, n, s, s)
        return validate_polygon([ring])
    ring, max_gap = _star_ring(rng, cx, cy, n, 0.4 * s, s)
    if kind == "concave":
        return validate_polygon([ring])
    # every outer edge stays at least 0.4 s cos(max_gap / 2) from the center
    inner = 0.4 * s * np.cos(max_gap / 2) * 0.6
    hole, _ = _star_ring(rng, cx, cy, int(rng.integers(3, 8)), 0.5 * inner, inner)
    return validate_polygon([ring, hole])


def polygon_dataset(polys, first_id: int = 1) -> Dataset:
    return Dataset.polygons(np.arange(first_id, first_id + len(polys)), [GeometricObject.of(p) for p in polys])


def bench_polygons() -> list[Polygon]:
    """The hand-authored constraint polygons shipped with the package."""
    text = resources.files("spatialcanvas").joinpath("fixtures/bench_polygons.geojson").read_text()
    data = json.loads(text)
    out = []
    for feat in data["features"]:
        out.append(validate_polygon(feat["geometry"]["coordinates"]))
    return out
