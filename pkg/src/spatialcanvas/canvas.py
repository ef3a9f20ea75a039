"""Discrete canvases: raster frames, object information cells, rasterization.

A canvas stores one ``(id, count, value)`` triple per primitive dimension at
every pixel of a :class:`RasterFrame`. Storage is a dense window over the part
of the frame the canvas touches; everything outside the window is the empty
matrix. Each dimension row is held separately and may be ``None`` (all null),
so a polygon canvas only pays for its row 2.

Boundary pixels are tracked conservatively and mapped back to exact geometry,
which is what lets the query layer refine raster answers to vector-exact ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from .geometry import (
    Circle,
    Containment,
    GeometricObject,
    GeometryError,
    HalfSpace,
    Point2,
    Polygon,
    Polyline,
    Rect,
    classify_points,
)

# slack, in pixel units, that widens conservative boundary tests
_PIXEL_SLACK = 1e-9


class DegenerateExtent(ValueError):
    pass


class PixelOutOfFrame(IndexError):
    pass


class FrameMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# cell values
# ---------------------------------------------------------------------------


class ObjectInfo(NamedTuple):
    id: int
    count: float = 1.0
    value: float = 0.0


class InfoMatrix(NamedTuple):
    """One cell: a row per primitive dimension, ``None`` meaning null."""

    r0: Optional[ObjectInfo] = None
    r1: Optional[ObjectInfo] = None
    r2: Optional[ObjectInfo] = None

    @property
    def is_empty(self) -> bool:
        return self.r0 is None and self.r1 is None and self.r2 is None


EMPTY = InfoMatrix()


@dataclass(frozen=True)
class InfoSeed:
    """Initial information written into freshly rasterized pixels."""

    id: int
    count: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.id is None:
            raise ValueError("seed id cannot be null")


def _is_constant(a: np.ndarray) -> bool:
    return a.ndim > 0 and a.size > 0 and all(s == 0 for s in a.strides)


@dataclass(frozen=True, eq=False)
class InfoRow:
    """Structure-of-arrays storage for one dimension row.

    ``id``, ``count`` and ``value`` may be read-only broadcast views of a
    scalar; their content is meaningless wherever ``present`` is false.
    """

    present: np.ndarray
    id: np.ndarray
    count: np.ndarray
    value: np.ndarray

    @classmethod
    def constant(cls, present: np.ndarray, id: int, count: float, value: float) -> InfoRow:
        shape = present.shape
        return cls(
            present,
            np.broadcast_to(np.int64(id), shape),
            np.broadcast_to(np.float64(count), shape),
            np.broadcast_to(np.float64(value), shape),
        )

    @classmethod
    def from_arrays(cls, present, id, count, value) -> InfoRow:
        present = np.asarray(present, dtype=bool)
        shape = present.shape
        return cls(
            present,
            np.broadcast_to(np.asarray(id, dtype=np.int64), shape),
            np.broadcast_to(np.asarray(count, dtype=np.float64), shape),
            np.broadcast_to(np.asarray(value, dtype=np.float64), shape),
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.present.shape

    def take(self, index) -> InfoRow:
        present = self.present[index]
        fields = []
        for a in (self.id, self.count, self.value):
            if _is_constant(a):
                fields.append(np.broadcast_to(a.reshape(-1)[0], present.shape))
            else:
                fields.append(a[index])
        return InfoRow(present, *fields)

    def masked(self, keep) -> InfoRow:
        return InfoRow(self.present & keep, self.id, self.count, self.value)

    def place(self, shape, index) -> InfoRow:
        """Embed this row into a larger null grid at ``index``."""
        present = np.zeros(shape, dtype=bool)
        present[index] = self.present
        fields = []
        for a in (self.id, self.count, self.value):
            if _is_constant(a):
                fields.append(np.broadcast_to(a.reshape(-1)[0], shape))
            else:
                full = np.zeros(shape, dtype=a.dtype)
                full[index] = a
                fields.append(full)
        return InfoRow(present, *fields)


@dataclass(frozen=True, eq=False)
class Cells:
    """Object information matrices over an arbitrary leading shape."""

    rows: tuple[Optional[InfoRow], Optional[InfoRow], Optional[InfoRow]]
    shape: tuple[int, ...]

    @classmethod
    def empty(cls, shape) -> Cells:
        return cls((None, None, None), tuple(shape))

    def row(self, d: int) -> Optional[InfoRow]:
        return self.rows[d]

    def present(self, d: int) -> np.ndarray:
        r = self.rows[d]
        if r is None:
            return np.zeros(self.shape, dtype=bool)
        return r.present

    def nonnull(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for r in self.rows:
            if r is not None:
                out |= r.present
        return out

    def take(self, index) -> Cells:
        rows = tuple(None if r is None else r.take(index) for r in self.rows)
        shape = np.broadcast_to(np.False_, self.shape)[index].shape
        return Cells(rows, shape)

    def masked(self, keep) -> Cells:
        keep = np.broadcast_to(keep, self.shape)
        return Cells(tuple(None if r is None else r.masked(keep) for r in self.rows), self.shape)

    def place(self, shape, index) -> Cells:
        return Cells(tuple(None if r is None else r.place(shape, index) for r in self.rows), tuple(shape))

    def matrix(self, index) -> InfoMatrix:
        out = []
        for r in self.rows:
            if r is None or not r.present[index]:
                out.append(None)
            else:
                out.append(ObjectInfo(int(r.id[index]), float(r.count[index]), float(r.value[index])))
        return InfoMatrix(*out)

    @classmethod
    def from_matrices(cls, matrices: Sequence[InfoMatrix]) -> Cells:
        n = len(matrices)
        rows = []
        for d in range(3):
            entries = [m[d] for m in matrices]
            if all(e is None for e in entries):
                rows.append(None)
                continue
            present = np.array([e is not None for e in entries], dtype=bool)
            ids = np.array([0 if e is None else e.id for e in entries], dtype=np.int64)
            counts = np.array([0.0 if e is None else e.count for e in entries], dtype=np.float64)
            values = np.array([0.0 if e is None else e.value for e in entries], dtype=np.float64)
            rows.append(InfoRow(present, ids, counts, values))
        return cls(tuple(rows), (n,))

    def equals(self, other: Cells) -> bool:
        """Semantic, row-wise equality (null rows compare equal)."""
        if self.shape != other.shape:
            return False
        for a, b in zip(self.rows, other.rows):
            pa = np.zeros(self.shape, bool) if a is None else a.present
            pb = np.zeros(self.shape, bool) if b is None else b.present
            if not np.array_equal(pa, pb):
                return False
            if not pa.any():
                continue
            for fa, fb in ((a.id, b.id), (a.count, b.count), (a.value, b.value)):
                if not np.array_equal(fa[pa], fb[pa]):
                    return False
        return True


def concat_cells(parts: Sequence[Cells]) -> Cells:
    """Concatenate 1-D cell arrays."""
    n = sum(p.shape[0] for p in parts)
    rows = []
    for d in range(3):
        if all(p.rows[d] is None for p in parts):
            rows.append(None)
            continue
        fields = {"present": [], "id": [], "count": [], "value": []}
        for p in parts:
            r = p.rows[d]
            m = p.shape[0]
            if r is None:
                fields["present"].append(np.zeros(m, bool))
                fields["id"].append(np.zeros(m, np.int64))
                fields["count"].append(np.zeros(m))
                fields["value"].append(np.zeros(m))
            else:
                for k in fields:
                    fields[k].append(np.broadcast_to(getattr(r, k), (m,)))
        rows.append(InfoRow(*(np.concatenate(fields[k]) for k in ("present", "id", "count", "value"))))
    return Cells(tuple(rows), (n,))


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RasterFrame:
    """World extent discretized into ``width x height`` half-open pixels.

    Pixel ``(i, j)`` covers ``[xmin + i*dx, xmin + (i+1)*dx) x
    [ymin + j*dy, ymin + (j+1)*dy)``; ``i`` is the column, ``j`` the row.
    """

    extent: Rect
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DegenerateExtent(f"frame needs at least one pixel, got {self.width}x{self.height}")
        if not (self.extent.width > 0 and self.extent.height > 0):
            raise DegenerateExtent(f"extent has zero width or height: {self.extent}")

    @property
    def dx(self) -> float:
        return self.extent.width / self.width

    @property
    def dy(self) -> float:
        return self.extent.height / self.height

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return math.hypot(self.extent.width, self.extent.height)

    def center_x(self, i):
        return self.extent.min.x + (np.asarray(i, dtype=np.float64) + 0.5) * self.dx

    def center_y(self, j):
        return self.extent.min.y + (np.asarray(j, dtype=np.float64) + 0.5) * self.dy

    def pixel_center(self, i: int, j: int) -> Point2:
        return Point2(float(self.center_x(i)), float(self.center_y(j)))

    def pixel_box(self, i: int, j: int) -> Rect:
        x0 = self.extent.min.x + i * self.dx
        y0 = self.extent.min.y + j * self.dy
        return Rect.from_bounds(x0, y0, x0 + self.dx, y0 + self.dy)

    def to_pixel_coords(self, x, y):
        """Continuous pixel coordinates (pixel ``i`` spans ``[i, i+1)``)."""
        u = (np.asarray(x, dtype=np.float64) - self.extent.min.x) / self.dx
        v = (np.asarray(y, dtype=np.float64) - self.extent.min.y) / self.dy
        return u, v

    def world_to_pixel(self, x, y):
        """Pixel indices and an in-frame flag for world coordinates."""
        u, v = self.to_pixel_coords(x, y)
        i = np.floor(u)
        j = np.floor(v)
        inside = (i >= 0) & (i < self.width) & (j >= 0) & (j < self.height)
        i = np.where(inside, i, -1).astype(np.int64)
        j = np.where(inside, j, -1).astype(np.int64)
        return i, j, inside

    def pixel_of(self, p: Point2) -> Optional[tuple[int, int]]:
        i, j, ok = self.world_to_pixel(p.x, p.y)
        if not ok:
            return None
        return int(i), int(j)

    def flat(self, i, j):
        return np.asarray(j, dtype=np.int64) * self.width + np.asarray(i, dtype=np.int64)

    def unflat(self, flat):
        flat = np.asarray(flat, dtype=np.int64)
        return flat % self.width, flat // self.width

    def check_pixel(self, i: int, j: int) -> None:
        if not (0 <= i < self.width and 0 <= j < self.height):
            raise PixelOutOfFrame(f"pixel ({i}, {j}) outside {self.width}x{self.height} frame")


def build_frame(extent: Rect, width: int, height: int) -> RasterFrame:
    return RasterFrame(extent, int(width), int(height))


DEFAULT_RESOLUTION = 2048


def union_frame(boxes: Sequence[Rect], resolution: int = DEFAULT_RESOLUTION, margin: float = 0.01) -> RasterFrame:
    """Square-resolution frame over the union of ``boxes`` grown by ``margin``."""
    boxes = [b for b in boxes if b is not None]
    if not boxes:
        raise DegenerateExtent("no bounded participant to derive a frame from")
    ext = boxes[0]
    for b in boxes[1:]:
        ext = ext.union(b)
    w, h = ext.width, ext.height
    if w == 0 or h == 0:
        pad = max(w, h) / 2 or 0.5
        ext = Rect.from_bounds(
            ext.min.x - (pad if w == 0 else 0),
            ext.min.y - (pad if h == 0 else 0),
            ext.max.x + (pad if w == 0 else 0),
            ext.max.y + (pad if h == 0 else 0),
        )
    return RasterFrame(ext.expanded(margin), resolution, resolution)


# ---------------------------------------------------------------------------
# boundary index
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryLayer:
    """Boundary pixels of one record's primitives of one dimension.

    ``pixels`` are sorted flat frame indices; ``filled`` says whether the
    canvas fill covers each of them (pixel center inside the geometry).
    """

    record_id: int
    dim: int
    geometry: object
    pixels: np.ndarray
    filled: np.ndarray

    def lookup(self, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Membership of ``flat`` pixels and their position in ``pixels``."""
        pos = np.searchsorted(self.pixels, flat)
        if not len(self.pixels):
            return np.zeros(np.shape(flat), dtype=bool), pos
        pos_c = np.minimum(pos, len(self.pixels) - 1)
        hit = (pos < len(self.pixels)) & (self.pixels[pos_c] == flat)
        return hit, pos_c

    def shifted(self, frame: RasterFrame, geometry, pixels: np.ndarray, filled: np.ndarray) -> BoundaryLayer:
        return BoundaryLayer(self.record_id, self.dim, geometry, pixels, filled)


@dataclass(frozen=True, eq=False)
class PointEntries:
    """Exact locations of 0-primitives, sorted by flat pixel (stable)."""

    flat: np.ndarray
    ids: np.ndarray
    xy: np.ndarray

    @classmethod
    def build(cls, flat, ids, xy) -> PointEntries:
        order = np.argsort(flat, kind="stable")
        return cls(np.asarray(flat)[order], np.asarray(ids)[order], np.asarray(xy, dtype=float).reshape(-1, 2)[order])

    def __len__(self):
        return len(self.flat)

    def span(self, flat: int) -> slice:
        lo = np.searchsorted(self.flat, flat, side="left")
        hi = np.searchsorted(self.flat, flat, side="right")
        return slice(int(lo), int(hi))

    def in_pixels(self, pixels: np.ndarray) -> np.ndarray:
        """Indices of entries lying in any of the sorted ``pixels``."""
        if len(pixels) == 0 or len(self.flat) == 0:
            return np.zeros(0, dtype=np.int64)
        lo = np.searchsorted(self.flat, pixels, side="left")
        hi = np.searchsorted(self.flat, pixels, side="right")
        n = hi - lo
        keep = n > 0
        lo, n = lo[keep], n[keep]
        if not len(lo):
            return np.zeros(0, dtype=np.int64)
        starts = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
        return starts + np.arange(n.sum())

    @staticmethod
    def merge(parts: Sequence[PointEntries]) -> Optional[PointEntries]:
        parts = [p for p in parts if p is not None and len(p)]
        if not parts:
            return None
        if len(parts) == 1:
            return parts[0]
        return PointEntries.build(
            np.concatenate([p.flat for p in parts]),
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.xy for p in parts]),
        )


# ---------------------------------------------------------------------------
# canvases
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Canvas:
    """A raster frame of information matrices plus a boundary index.

    ``cells`` has shape ``(h, w)`` and covers the window whose lower-left pixel
    is ``origin = (i0, j0)``; rows index ``j`` and columns index ``i``.
    """

    frame: RasterFrame
    cells: Cells
    origin: tuple[int, int] = (0, 0)
    layers: tuple[BoundaryLayer, ...] = ()
    points: Optional[PointEntries] = None

    @classmethod
    def empty(cls, frame: RasterFrame) -> Canvas:
        return cls(frame, Cells.empty((0, 0)))

    @property
    def window(self) -> tuple[int, int, int, int]:
        """``(i0, j0, w, h)`` of the stored window."""
        h, w = self.cells.shape
        return self.origin[0], self.origin[1], w, h

    def is_empty(self) -> bool:
        return not self.cells.nonnull().any()

    def cell(self, i: int, j: int) -> InfoMatrix:
        self.frame.check_pixel(i, j)
        i0, j0, w, h = self.window
        if not (i0 <= i < i0 + w and j0 <= j < j0 + h):
            return EMPTY
        return self.cells.matrix((j - j0, i - i0))

    def cells_at(self, i: np.ndarray, j: np.ndarray) -> Cells:
        """Gather cells at many frame pixels (null outside the window)."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        i0, j0, w, h = self.window
        li = i - i0
        lj = j - j0
        ok = (li >= 0) & (li < w) & (lj >= 0) & (lj < h)
        if w == 0 or h == 0:
            return Cells.empty(i.shape)
        li = np.where(ok, li, 0)
        lj = np.where(ok, lj, 0)
        return self.cells.take((lj, li)).masked(ok)

    def nonnull_mask(self) -> np.ndarray:
        return self.cells.nonnull()

    def nonnull_pixels(self) -> tuple[np.ndarray, np.ndarray]:
        """Frame pixel indices of non-null cells in row-major order."""
        lj, li = np.nonzero(self.cells.nonnull())
        return li + self.origin[0], lj + self.origin[1]

    def count_nonnull(self) -> int:
        return int(self.cells.nonnull().sum())

    def boundary_flat(self) -> np.ndarray:
        """Sorted flat indices of every pixel carrying a boundary entry."""
        parts = [l.pixels for l in self.layers]
        if self.points is not None:
            parts.append(self.points.flat)
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def expanded(self, i0: int, j0: int, w: int, h: int) -> Cells:
        """Cells over a window that contains this canvas's window."""
        ci0, cj0, cw, ch = self.window
        if (ci0, cj0, cw, ch) == (i0, j0, w, h):
            return self.cells
        if cw == 0 or ch == 0:
            return Cells.empty((h, w))
        index = (slice(cj0 - j0, cj0 - j0 + ch), slice(ci0 - i0, ci0 - i0 + cw))
        return self.cells.place((h, w), index)

    def restricted(self, i0: int, j0: int, w: int, h: int) -> Canvas:
        """The same canvas with its cells cut to the window ``(i0, j0, w, h)``."""
        ci0, cj0, cw, ch = self.window
        a0, b0 = max(i0, ci0), max(j0, cj0)
        a1, b1 = min(i0 + w, ci0 + cw), min(j0 + h, cj0 + ch)
        if a1 <= a0 or b1 <= b0:
            return Canvas(self.frame, Cells.empty((h, w)), (i0, j0), self.layers, self.points)
        part = self.cells.take((slice(b0 - cj0, b1 - cj0), slice(a0 - ci0, a1 - ci0)))
        cells = part.place((h, w), (slice(b0 - j0, b1 - j0), slice(a0 - i0, a1 - i0)))
        return Canvas(self.frame, cells, (i0, j0), self.layers, self.points)

    def dense(self) -> Cells:
        return self.expanded(0, 0, self.frame.width, self.frame.height)

    def equals(self, other: Canvas) -> bool:
        """Cell-for-cell equality over the whole frame."""
        if self.frame != other.frame:
            return False
        win = union_window([self, other])
        return self.expanded(*win).equals(other.expanded(*win))

    def with_cells(self, cells: Cells, origin=None) -> Canvas:
        return Canvas(self.frame, cells, self.origin if origin is None else origin, self.layers, self.points)

    def cropped(self) -> Canvas:
        """Shrink the window to the bounding box of non-null cells."""
        nn = self.cells.nonnull()
        if not nn.any():
            return Canvas(self.frame, Cells.empty((0, 0)), (0, 0), self.layers, self.points)
        rows = np.nonzero(nn.any(axis=1))[0]
        cols = np.nonzero(nn.any(axis=0))[0]
        r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        if (r0, c0) == (0, 0) and (r1, c1) == nn.shape:
            return self
        cells = self.cells.take((slice(r0, r1), slice(c0, c1)))
        return Canvas(self.frame, cells, (self.origin[0] + int(c0), self.origin[1] + int(r0)), self.layers, self.points)


def union_window(canvases: Sequence[Canvas]) -> tuple[int, int, int, int]:
    wins = [c.window for c in canvases if c.window[2] > 0 and c.window[3] > 0]
    if not wins:
        return (0, 0, 0, 0)
    i0 = min(w[0] for w in wins)
    j0 = min(w[1] for w in wins)
    i1 = max(w[0] + w[2] for w in wins)
    j1 = max(w[1] + w[3] for w in wins)
    return (i0, j0, i1 - i0, j1 - j0)


@dataclass(frozen=True, eq=False)
class CanvasBatch:
    """A collection of canvases that differ from a shared background at one
    pixel each.

    Member ``k`` equals ``background`` everywhere except pixel
    ``(pix_i[k], pix_j[k])``, which holds ``cells[k]``. Freshly rasterized
    points and dissect output have an empty background. ``xy`` keeps the exact
    location behind each member's 0-primitive, and ``layers`` the boundary
    entries every member inherits from blended canvases.
    """

    frame: RasterFrame
    pix_i: np.ndarray
    pix_j: np.ndarray
    cells: Cells
    xy: Optional[np.ndarray] = None
    background: Optional[Canvas] = None
    layers: tuple[BoundaryLayer, ...] = ()
    points: Optional[PointEntries] = None

    def __len__(self) -> int:
        return len(self.pix_i)

    @property
    def flat(self) -> np.ndarray:
        return self.frame.flat(self.pix_i, self.pix_j)

    def has_background(self) -> bool:
        return self.background is not None and not self.background.is_empty()

    def subset(self, index) -> CanvasBatch:
        return CanvasBatch(
            self.frame,
            self.pix_i[index],
            self.pix_j[index],
            self.cells.take(index),
            None if self.xy is None else self.xy[index],
            self.background,
            self.layers,
            self.points,
        )

    def member(self, k: int) -> Canvas:
        i, j = int(self.pix_i[k]), int(self.pix_j[k])
        flat = int(self.frame.flat(i, j))
        own = self.cells.take(slice(k, k + 1))
        points = None
        if self.xy is not None and own.rows[0] is not None and own.rows[0].present[0]:
            points = PointEntries(np.array([flat]), own.rows[0].id[:1].copy(), self.xy[k : k + 1].copy())
        elif self.xy is None and self.points is not None:
            s = self.points.span(flat)
            if s.stop > s.start:
                points = PointEntries(self.points.flat[s], self.points.ids[s], self.points.xy[s])
        if not self.has_background():
            cells = Cells(tuple(None if r is None else r.take(np.array([[0]])) for r in own.rows), (1, 1))
            layers = []
            for layer in self.layers:
                hit, pos = layer.lookup(np.array([flat]))
                if hit[0]:
                    layers.append(
                        BoundaryLayer(layer.record_id, layer.dim, layer.geometry, layer.pixels[pos], layer.filled[pos])
                    )
            return Canvas(self.frame, cells, (i, j), tuple(layers), points)
        bg = self.background
        win = union_window([bg, Canvas(self.frame, Cells.empty((1, 1)), (i, j))])
        base = bg.expanded(*win)
        li, lj = i - win[0], j - win[1]
        rows = []
        for d in range(3):
            b, o = base.rows[d], own.rows[d]
            if b is None and o is None:
                rows.append(None)
                continue
            if b is None:
                b = InfoRow.from_arrays(np.zeros(base.shape, bool), 0, 0.0, 0.0)
            fields = [np.array(getattr(b, f), copy=True) for f in ("present", "id", "count", "value")]
            if o is None:
                fields[0][lj, li] = False
            else:
                for arr, f in zip(fields, ("present", "id", "count", "value")):
                    arr[lj, li] = getattr(o, f)[0]
            rows.append(InfoRow(*fields))
        merged_points = PointEntries.merge([bg.points, points])
        return Canvas(self.frame, Cells(tuple(rows), base.shape), (win[0], win[1]), bg.layers + self.layers, merged_points)

    def __iter__(self) -> Iterator[Canvas]:
        for k in range(len(self)):
            yield self.member(k)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def _pixel_window(frame: RasterFrame, box: Rect, margin: int = 1):
    """Clipped pixel window ``(i0, j0, w, h)`` around a world box, or None."""
    u0, v0 = frame.to_pixel_coords(box.min.x, box.min.y)
    u1, v1 = frame.to_pixel_coords(box.max.x, box.max.y)
    i0 = max(int(math.floor(u0)) - margin, 0)
    j0 = max(int(math.floor(v0)) - margin, 0)
    i1 = min(int(math.floor(u1)) + margin, frame.width - 1)
    j1 = min(int(math.floor(v1)) + margin, frame.height - 1)
    if i1 < i0 or j1 < j0:
        return None
    return i0, j0, i1 - i0 + 1, j1 - j0 + 1


def segment_pixels(frame: RasterFrame, seg) -> np.ndarray:
    """Sorted flat indices of pixels whose closed box meets a segment.

    The test is widened by a tiny slack so the result is a superset of the
    exact answer; it never misses a touched pixel.
    """
    x0, y0, x1, y1 = (float(s) for s in seg)
    u0, v0 = frame.to_pixel_coords(x0, y0)
    u1, v1 = frame.to_pixel_coords(x1, y1)
    u0, v0, u1, v1 = float(u0), float(v0), float(u1), float(v1)
    eps = _PIXEL_SLACK
    umin, umax = min(u0, u1), max(u0, u1)
    c_lo = max(math.ceil(umin - eps) - 1, 0)
    c_hi = min(math.floor(umax + eps), frame.width - 1)
    if c_hi < c_lo:
        return np.zeros(0, dtype=np.int64)
    cols = np.arange(c_lo, c_hi + 1)
    if u1 == u0:
        vlo = np.full(len(cols), min(v0, v1))
        vhi = np.full(len(cols), max(v0, v1))
    else:
        a = np.clip(cols.astype(float), umin, umax)
        b = np.clip(cols + 1.0, umin, umax)
        slope = (v1 - v0) / (u1 - u0)
        va = v0 + (a - u0) * slope
        vb = v0 + (b - u0) * slope
        vlo = np.minimum(va, vb)
        vhi = np.maximum(va, vb)
    r_lo = np.maximum(np.ceil(vlo - eps).astype(np.int64) - 1, 0)
    r_hi = np.minimum(np.floor(vhi + eps).astype(np.int64), frame.height - 1)
    n = np.maximum(r_hi - r_lo + 1, 0)
    if n.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    ci = np.repeat(cols, n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    rj = np.repeat(r_lo, n) + offs
    return np.unique(frame.flat(ci, rj))


def edges_pixels(frame: RasterFrame, edges: np.ndarray) -> np.ndarray:
    parts = [segment_pixels(frame, e) for e in edges]
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


def _fill_window(frame: RasterFrame, edges: np.ndarray, win) -> np.ndarray:
    """Even-odd pixel-center fill of a set of closed rings over a window.

    Uses the same crossing rule and intersection formula as
    :func:`geometry.classify_points`, so the fill equals per-center
    classification bit for bit (centers exactly on an edge excepted).
    """
    i0, j0, w, h = win
    cy = frame.center_y(np.arange(j0, j0 + h))
    toggles = np.zeros((h, w + 1), dtype=np.uint8)
    xmin, dx = frame.extent.min.x, frame.dx
    for x0, y0, x1, y1 in edges:
        if y0 == y1:
            continue
        rows = np.nonzero((y0 > cy) != (y1 > cy))[0]
        if not len(rows):
            continue
        py = cy[rows]
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        # first column whose center is >= xint
        k = np.ceil((xint - xmin) / dx - 0.5).astype(np.int64)
        for _ in range(2):
            k = np.where(xmin + (k + 0.5) * dx < xint, k + 1, k)
            k = np.where(xmin + (k - 0.5) * dx >= xint, k - 1, k)
        col = np.clip(k - i0, 0, w)
        np.add.at(toggles, (rows, col), 1)
    return (np.cumsum(toggles, axis=1, dtype=np.uint8)[:, :w] & 1).astype(bool)


def _polygon_part(frame: RasterFrame, polys: Sequence[Polygon], seed: InfoSeed, geometry) -> Optional[Canvas]:
    box = polys[0].bounds
    for p in polys[1:]:
        box = box.union(p.bounds)
    if not box.intersects(frame.extent):
        return None
    win = _pixel_window(frame, box)
    if win is None:
        return None
    i0, j0, w, h = win
    fill = np.zeros((h, w), dtype=bool)
    bpix = []
    for poly in polys:
        edges = poly.edges()
        fill |= _fill_window(frame, edges, win)
        bpix.append(edges_pixels(frame, edges))
    bflat = np.unique(np.concatenate(bpix))
    if len(bflat):
        bi, bj = frame.unflat(bflat)
        centers = np.column_stack([frame.center_x(bi), frame.center_y(bj)])
        # closed regions: a center on an edge counts as inside
        inside = np.zeros(len(bflat), dtype=bool)
        for poly in polys:
            inside |= classify_points(centers, poly) != Containment.OUTSIDE
        lj, li = bj - j0, bi - i0
        ok = (li >= 0) & (li < w) & (lj >= 0) & (lj < h)
        fill[lj[ok], li[ok]] = inside[ok]
    if not fill.any() and not len(bflat):
        return None
    layer = BoundaryLayer(seed.id, 2, geometry, bflat, fill[bj - j0, bi - i0] if len(bflat) else np.zeros(0, bool))
    row = InfoRow.constant(fill, seed.id, seed.count, seed.value)
    return Canvas(frame, Cells((None, None, row), (h, w)), (i0, j0), (layer,))


def _points_part(frame: RasterFrame, pts: Sequence[Point2], seed: InfoSeed) -> Optional[Canvas]:
    xy = np.array([(p.x, p.y) for p in pts], dtype=float)
    i, j, ok = frame.world_to_pixel(xy[:, 0], xy[:, 1])
    if not ok.any():
        return None
    i, j, xy = i[ok], j[ok], xy[ok]
    i0, j0 = int(i.min()), int(j.min())
    w, h = int(i.max()) - i0 + 1, int(j.max()) - j0 + 1
    present = np.zeros((h, w), dtype=bool)
    present[j - j0, i - i0] = True
    row = InfoRow.constant(present, seed.id, seed.count, seed.value)
    entries = PointEntries.build(frame.flat(i, j), np.full(len(xy), seed.id, dtype=np.int64), xy)
    return Canvas(frame, Cells((row, None, None), (h, w)), (i0, j0), (), entries)


def _polyline_part(frame: RasterFrame, lines: Sequence[Polyline], seed: InfoSeed, geometry) -> Optional[Canvas]:
    segs = np.vstack([l.segments() for l in lines])
    flat = edges_pixels(frame, segs)
    if not len(flat):
        return None
    i, j = frame.unflat(flat)
    i0, j0 = int(i.min()), int(j.min())
    w, h = int(i.max()) - i0 + 1, int(j.max()) - j0 + 1
    present = np.zeros((h, w), dtype=bool)
    present[j - j0, i - i0] = True
    row = InfoRow.constant(present, seed.id, seed.count, seed.value)
    layer = BoundaryLayer(seed.id, 1, geometry, flat, np.ones(len(flat), dtype=bool))
    return Canvas(frame, Cells((None, row, None), (h, w)), (i0, j0), (layer,))


def _stack_parts(frame: RasterFrame, parts: Sequence[Canvas]) -> Canvas:
    """Combine canvases that populate disjoint dimension rows."""
    parts = [p for p in parts if p is not None]
    if not parts:
        return Canvas.empty(frame)
    if len(parts) == 1:
        return parts[0]
    win = union_window(parts)
    rows: list = [None, None, None]
    for p in parts:
        cells = p.expanded(*win)
        for d in range(3):
            if cells.rows[d] is not None:
                rows[d] = cells.rows[d]
    layers = tuple(l for p in parts for l in p.layers)
    points = PointEntries.merge([p.points for p in parts])
    return Canvas(frame, Cells(tuple(rows), (win[3], win[2])), (win[0], win[1]), layers, points)


def rasterize(obj: GeometricObject, seed: InfoSeed, frame: RasterFrame) -> Canvas:
    """Canvas of one geometric object.

    Row ``d`` of a pixel holds ``seed`` when a ``d``-primitive meets it: the
    pixel containing a point, every pixel a polyline touches, and every pixel
    whose center lies in a polygon (holes excluded). Pixels touched by a
    polygon ring, and pixels holding points or polylines, are recorded in the
    boundary index together with the exact geometry.
    """
    if not isinstance(obj, GeometricObject):
        obj = GeometricObject.of(obj)
    parts = []
    if obj.points:
        parts.append(_points_part(frame, obj.points, seed))
    if obj.polylines:
        geom = obj.polylines[0] if len(obj.polylines) == 1 else tuple(obj.polylines)
        parts.append(_polyline_part(frame, obj.polylines, seed, geom))
    if obj.polygons:
        geom = obj.polygons[0] if len(obj.polygons) == 1 else tuple(obj.polygons)
        parts.append(_polygon_part(frame, obj.polygons, seed, geom))
    return _stack_parts(frame, parts)


def rasterize_points(xy: np.ndarray, ids: np.ndarray, frame: RasterFrame, count=1.0, value=0.0) -> CanvasBatch:
    """One single-pixel canvas per point record, as a batch.

    Points outside the frame yield empty canvases and are pruned.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    ids = np.asarray(ids, dtype=np.int64)
    i, j, ok = frame.world_to_pixel(xy[:, 0], xy[:, 1])
    n = int(ok.sum())
    count = np.broadcast_to(np.asarray(count, dtype=np.float64), ids.shape)
    value = np.broadcast_to(np.asarray(value, dtype=np.float64), ids.shape)
    if not ok.all():
        i, j, xy, ids, count, value = i[ok], j[ok], xy[ok], ids[ok], count[ok], value[ok]
    row = InfoRow(np.ones(n, dtype=bool), ids, count, value)
    return CanvasBatch(frame, i, j, Cells((row, None, None), (n,)), xy)


# ---------------------------------------------------------------------------
# utility canvases
# ---------------------------------------------------------------------------


def _window_centers(frame: RasterFrame, win):
    i0, j0, w, h = win
    cx = frame.center_x(np.arange(i0, i0 + w))[None, :]
    cy = frame.center_y(np.arange(j0, j0 + h))[:, None]
    return cx, cy


def _analytic_canvas(frame, win, fill, straddle, seed, shape) -> Canvas:
    i0, j0, w, h = win
    lj, li = np.nonzero(straddle)
    flat = frame.flat(li + i0, lj + j0)
    order = np.argsort(flat)
    layer = BoundaryLayer(seed.id, 2, shape, flat[order], fill[lj, li][order])
    row = InfoRow.constant(fill, seed.id, seed.count, seed.value)
    return Canvas(frame, Cells((None, None, row), (h, w)), (i0, j0), (layer,))


def circle_canvas(shape: Circle, seed: InfoSeed, frame: RasterFrame) -> Canvas:
    win = _pixel_window(frame, shape.bounds)
    if win is None:
        return Canvas.empty(frame)
    cx, cy = _window_centers(frame, win)
    x, y, r = shape.center.x, shape.center.y, shape.r
    ddx = cx - x
    ddy = cy - y
    fill = np.sqrt(ddx * ddx + ddy * ddy) < r
    hx, hy = frame.dx / 2, frame.dy / 2
    nx = np.maximum(np.abs(ddx) - hx, 0.0)
    ny = np.maximum(np.abs(ddy) - hy, 0.0)
    fx = np.abs(ddx) + hx
    fy = np.abs(ddy) + hy
    eps = _PIXEL_SLACK * max(frame.dx, frame.dy) + 4 * np.finfo(float).eps * r
    dmin = np.sqrt(nx * nx + ny * ny)
    dmax = np.sqrt(fx * fx + fy * fy)
    straddle = (dmin <= r + eps) & (dmax >= r - eps)
    return _analytic_canvas(frame, win, fill, straddle, seed, shape)


def halfspace_canvas(shape: HalfSpace, seed: InfoSeed, frame: RasterFrame) -> Canvas:
    win = (0, 0, frame.width, frame.height)
    cx, cy = _window_centers(frame, win)
    val = shape.a * cx + shape.b * cy + shape.c
    fill = val < 0
    half = (abs(shape.a) * frame.dx + abs(shape.b) * frame.dy) / 2
    scale = abs(shape.a) * max(abs(frame.extent.min.x), abs(frame.extent.max.x)) + abs(shape.b) * max(
        abs(frame.extent.min.y), abs(frame.extent.max.y)
    ) + abs(shape.c)
    eps = _PIXEL_SLACK * 2 * half + 8 * np.finfo(float).eps * scale
    straddle = (val - half - eps <= 0) & (val + half + eps >= 0)
    return _analytic_canvas(frame, win, fill, straddle, seed, shape)


def rect_canvas(shape: Rect, seed: InfoSeed, frame: RasterFrame) -> Canvas:
    if shape.width == 0 or shape.height == 0:
        raise GeometryError("rectangle utility needs a non-degenerate rectangle")
    c = _polygon_part(frame, [shape.to_polygon()], seed, shape)
    if c is None:
        return Canvas.empty(frame)
    layer = c.layers[0]
    return Canvas(c.frame, c.cells, c.origin, (BoundaryLayer(seed.id, 2, shape, layer.pixels, layer.filled),))


UtilityShape = Union[Circle, Rect, HalfSpace]


def utility_canvas(shape: UtilityShape, seed: InfoSeed, frame: RasterFrame) -> Canvas:
    """Row-2 canvas of a circle, rectangle or half space.

    Fill is by pixel-center membership; straddling pixels are indexed with the
    analytic shape, so refinement evaluates the exact formula.
    """
    if isinstance(shape, Circle):
        return circle_canvas(shape, seed, frame)
    if isinstance(shape, HalfSpace):
        return halfspace_canvas(shape, seed, frame)
    if isinstance(shape, Rect):
        return rect_canvas(shape, seed, frame)
    raise TypeError(f"not a utility shape: {type(shape).__name__}")


def region_canvas(region, seed: InfoSeed, frame: RasterFrame) -> Canvas:
    """Canvas for any constraint region (polygon, object, or utility shape)."""
    if isinstance(region, (Circle, HalfSpace, Rect)):
        return utility_canvas(region, seed, frame)
    if isinstance(region, Polygon):
        region = GeometricObject.of(region)
    return rasterize(region, seed, frame)


# ---------------------------------------------------------------------------
# boundary lookup and debug dump
# ---------------------------------------------------------------------------


def boundary_lookup(c: Canvas, pixel: tuple[int, int]) -> list[tuple[int, int, object]]:
    """All boundary entries ``(record id, dimension, geometry)`` at a pixel."""
    i, j = pixel
    c.frame.check_pixel(i, j)
    flat = int(c.frame.flat(i, j))
    out = []
    if c.points is not None:
        s = c.points.span(flat)
        for rid, (x, y) in zip(c.points.ids[s], c.points.xy[s]):
            out.append((int(rid), 0, Point2(float(x), float(y))))
    for layer in c.layers:
        hit, _ = layer.lookup(np.array([flat]))
        if hit[0]:
            out.append((layer.record_id, layer.dim, layer.geometry))
    return out


def _fmt_row(r: Optional[ObjectInfo]) -> str:
    if r is None:
        return "-"
    return f"({r.id},{r.count:g},{r.value:g})"


def dump_canvas(c: Canvas) -> str:
    """Text dump: one line per non-null or boundary pixel, row-major."""
    nn_i, nn_j = c.nonnull_pixels()
    flats = set(c.frame.flat(nn_i, nn_j).tolist()) | set(c.boundary_flat().tolist())
    lines = []
    for flat in sorted(flats):
        i, j = int(flat % c.frame.width), int(flat // c.frame.width)
        m = c.cell(i, j)
        entries = ";".join(f"{rid}:{dim}" for rid, dim, _ in boundary_lookup(c, (i, j)))
        lines.append(f"{i} {j} | {' '.join(_fmt_row(r) for r in m)} | {entries}")
    return "\n".join(lines)
