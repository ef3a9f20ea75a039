"""Desk-scale benchmark: multi-polygon point selection across engines.

Engines:

* ``canvas``: the canvas plan, single-threaded;
* ``canvas-parallel``: the canvas plan over point chunks in a thread pool;
* ``naive-pip``: one exact point-in-polygon scan per constraint polygon;
* ``oracle``: the reference implementation.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import astuple, dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import contains
from .io import write_csv
from .oracle import oracle_select
from .queries import Dataset, PolygonSet, select_points
from .workloads import bench_polygons, clustered_points, point_dataset, uniform_points

ENGINES = ("canvas", "canvas-parallel", "naive-pip", "oracle")


class ChecksumMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchRow:
    engine: str
    query: str
    n_points: int
    n_polygons: int
    ms: float
    cardinality: int
    checksum: str


def checksum(ids: np.ndarray) -> str:
    data = np.ascontiguousarray(np.sort(np.asarray(ids, dtype=np.int64)))
    return hashlib.sha256(data.tobytes()).hexdigest()[:16]


def make_points(n: int, seed: int = 0, distribution: str = "mixed") -> Dataset:
    """``n`` points in the bench extent: uniform, clustered, or half of each."""
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        xy = uniform_points(rng, n)
    elif distribution == "clustered":
        xy = clustered_points(rng, n)
    elif distribution == "mixed":
        xy = np.vstack([uniform_points(rng, n - n // 2), clustered_points(rng, n // 2)])
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return point_dataset(xy)


def naive_select(d: Dataset, q: PolygonSet) -> np.ndarray:
    """Per-polygon exact point-in-polygon scans over every point."""
    hit = np.zeros(len(d), dtype=bool)
    for p in q.polygons:
        hit |= contains(p, d.xy)
    return np.sort(d.ids[hit])


def engine_fn(engine: str, resolution: int, threads: int) -> Callable[[Dataset, PolygonSet], np.ndarray]:
    if engine == "canvas":
        return lambda d, q: select_points(d, q, resolution=resolution)
    if engine == "canvas-parallel":
        return lambda d, q: select_points(d, q, resolution=resolution, threads=threads)
    if engine == "naive-pip":
        return naive_select
    if engine == "oracle":
        return oracle_select
    raise ValueError(f"unknown engine {engine!r}; expected one of {', '.join(ENGINES)}")


def time_engine(fn, d, q, repetitions: int) -> tuple[float, np.ndarray]:
    """Median wall time in milliseconds, and the result of the last run."""
    times = []
    result = None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        result = fn(d, q)
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times)), result


def run_bench(
    sizes: Sequence[int],
    polygon_counts: Sequence[int],
    engines: Sequence[str] = ("canvas", "naive-pip"),
    repetitions: int = 5,
    seed: int = 0,
    distribution: str = "mixed",
    resolution: int = 1024,
    threads: Optional[int] = None,
    polygons=None,
) -> list[BenchRow]:
    """Time Any-mode selection for every (size, polygon count, engine).

    Raises :class:`ChecksumMismatch` when engines disagree on a result.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    threads = threads or max(2, os.cpu_count() or 1)
    polygons = polygons if polygons is not None else bench_polygons()
    for k in polygon_counts:
        if not 1 <= k <= len(polygons):
            raise ValueError(f"polygon count {k} outside 1..{len(polygons)}")
    fns = {e: engine_fn(e, resolution, threads) for e in engines}
    rows = []
    for n in sizes:
        d = make_points(n, seed, distribution)
        for k in polygon_counts:
            q = PolygonSet(tuple(polygons[:k]), "any")
            sums = {}
            for e in engines:
                ms, ids = time_engine(fns[e], d, q, repetitions)
                sums[e] = checksum(ids)
                rows.append(BenchRow(e, "multi-select-any", n, k, ms, len(ids), sums[e]))
            if len(set(sums.values())) > 1:
                raise ChecksumMismatch(f"n={n} k={k}: {sums}")
    return rows


def write_report(path, rows: Sequence[BenchRow]) -> None:
    header = [f.name for f in fields(BenchRow)]
    out = []
    for r in rows:
        vals = list(astuple(r))
        vals[4] = f"{r.ms:.3f}"
        out.append(vals)
    write_csv(path, header, out)
