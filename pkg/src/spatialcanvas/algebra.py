"""Canvas operators and their built-in parameter functions.

Fundamental operators: :func:`geometric_transform`, :func:`value_transform`,
:func:`mask`, :func:`blend` and :func:`dissect`. Derived operators:
:func:`multiway_blend` and :func:`map_op`. Every operator returns a
:class:`~spatialcanvas.canvas.Canvas` or a stream of them.

A stream of canvases is usually a :class:`~spatialcanvas.canvas.CanvasBatch`,
which operators process in one vectorized pass; iterating it yields the
member canvases one at a time.

Parameter functions operate on :class:`~spatialcanvas.canvas.Cells`, i.e. on
whole arrays of information matrices at once, so one definition serves a
single cell, a batch of points and a full pixel grid alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

import numpy as np

from .canvas import (
    BoundaryLayer,
    Canvas,
    CanvasBatch,
    Cells,
    FrameMismatch,
    InfoRow,
    PointEntries,
    RasterFrame,
    edges_pixels,
    union_window,
)
from .geometry import Circle, GeometricObject, HalfSpace, Point2, Polygon, Polyline, Rect, validate_polygon


class TransformCollision(ValueError):
    """Several source cells landed on one target pixel and no resolver was given."""


class UnknownBuiltin(KeyError):
    pass


@dataclass(frozen=True)
class BlendFn:
    name: str
    fn: Callable[[Cells, Cells], Cells]
    commutative: bool = False
    associative: bool = False

    def __call__(self, a: Cells, b: Cells) -> Cells:
        return self.fn(a, b)


@dataclass(frozen=True)
class MaskSet:
    name: str
    fn: Callable[[Cells], np.ndarray]

    def __call__(self, cells: Cells) -> np.ndarray:
        return np.broadcast_to(self.fn(cells), cells.shape)


@dataclass(frozen=True)
class ValueFn:
    """``f(x, y, cells) -> cells``.

    ``total`` marks functions that may create information on empty pixels;
    those are evaluated over the whole frame, the others only where the input
    canvas is stored.
    """

    name: str
    fn: Callable[[np.ndarray, np.ndarray, Cells], Cells]
    total: bool = True

    def __call__(self, x, y, cells: Cells) -> Cells:
        return self.fn(x, y, cells)


@dataclass(frozen=True)
class TransformFn:
    """Positional (world point -> world point) or informational (cells -> world point).

    ``affine`` holds the 2x3 matrix of a positional affine map; boundary
    geometry is carried through such maps exactly.
    """

    name: str
    kind: str
    fn: Callable
    affine: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("positional", "informational"):
            raise ValueError(f"unknown transform kind {self.kind!r}")

    def targets(self, x, y, cells: Cells):
        if self.kind == "positional":
            return self.fn(x, y)
        return self.fn(cells)


Stream = Union[CanvasBatch, Iterable[Canvas]]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _same_frame(a: RasterFrame, b: RasterFrame) -> None:
    if a != b:
        raise FrameMismatch(f"frames differ: {a} vs {b}")


def _null_row(shape) -> InfoRow:
    return InfoRow.from_arrays(np.zeros(shape, dtype=bool), 0, 0.0, 0.0)


def _where_row(cond, a: Optional[InfoRow], b: Optional[InfoRow], shape) -> Optional[InfoRow]:
    """Row-wise select: ``a`` where ``cond`` else ``b``."""
    if a is None and b is None:
        return None
    a = a or _null_row(shape)
    b = b or _null_row(shape)
    return InfoRow(
        np.where(cond, a.present, b.present),
        np.where(cond, a.id, b.id),
        np.where(cond, a.count, b.count),
        np.where(cond, a.value, b.value),
    )


def _transform_geometry(geom, m: np.ndarray):
    """Apply a 2x3 affine matrix to exact geometry, or None if unsupported."""

    def tx(v):
        v = np.asarray(v, dtype=float).reshape(-1, 2)
        return v @ m[:, :2].T + m[:, 2]

    if isinstance(geom, Point2):
        x, y = tx([geom.x, geom.y])[0]
        return Point2(float(x), float(y))
    if isinstance(geom, Polygon):
        return validate_polygon([tx(r) for r in geom.rings])
    if isinstance(geom, Polyline):
        return Polyline(tx(geom.vertices))
    if isinstance(geom, Rect):
        return _transform_geometry(geom.to_polygon(), m)
    if isinstance(geom, tuple):
        parts = [_transform_geometry(g, m) for g in geom]
        return None if any(p is None for p in parts) else tuple(parts)
    if isinstance(geom, HalfSpace):
        # a.x + c < 0 with x = A^-1 (x' - t)
        a_inv = np.linalg.inv(m[:, :2])
        n = np.array([geom.a, geom.b]) @ a_inv
        c = geom.c - float(n @ m[:, 2])
        return HalfSpace(float(n[0]), float(n[1]), c)
    if isinstance(geom, Circle):
        lin = m[:, :2]
        g = lin.T @ lin
        if not (np.isclose(g[0, 1], 0) and np.isclose(g[0, 0], g[1, 1])):
            return None
        c = tx([geom.center.x, geom.center.y])[0]
        return Circle(Point2(float(c[0]), float(c[1])), geom.r * float(np.sqrt(g[0, 0])))
    return None


def _boundary_pixels(frame: RasterFrame, geom) -> Optional[np.ndarray]:
    if isinstance(geom, Polygon):
        return edges_pixels(frame, geom.edges())
    if isinstance(geom, Polyline):
        return edges_pixels(frame, geom.segments())
    if isinstance(geom, tuple):
        return np.unique(np.concatenate([_boundary_pixels(frame, g) for g in geom]))
    return None


def _carry_layers(layers, frame: RasterFrame, out: Canvas, m: Optional[np.ndarray]):
    """Re-anchor boundary layers through an affine map; others are dropped."""
    if m is None:
        return ()
    carried = []
    for layer in layers:
        geom = _transform_geometry(layer.geometry, m)
        if geom is None:
            continue
        pixels = _boundary_pixels(frame, geom)
        if pixels is None:
            # analytic shapes: rebuild the exact straddle set from the utility generator
            from .canvas import InfoSeed, utility_canvas

            pixels = utility_canvas(geom, InfoSeed(layer.record_id), frame).layers[0].pixels
        i, j = frame.unflat(pixels)
        filled = out.cells_at(i, j).present(layer.dim)
        carried.append(BoundaryLayer(layer.record_id, layer.dim, geom, pixels, filled))
    return tuple(carried)


# ---------------------------------------------------------------------------
# fundamental operators
# ---------------------------------------------------------------------------


def _resolve_collisions(flat: np.ndarray, cells: Cells, resolver: Optional[BlendFn]):
    """Group cells by target pixel; fold colliding groups right-nested."""
    order = np.argsort(flat, kind="stable")
    flat_s = flat[order]
    first = np.ones(len(flat_s), dtype=bool)
    first[1:] = flat_s[1:] != flat_s[:-1]
    if first.all():
        return flat, cells
    if resolver is None:
        dup = np.unique(flat_s[~first])
        raise TransformCollision(f"{len(dup)} target pixel(s) receive several cells")
    cells = cells.take(order)
    starts = np.nonzero(first)[0]
    ends = np.append(starts[1:], len(flat_s))
    # fold each group from its last element backwards
    acc = cells.take(ends - 1)
    size = ends - starts
    for back in range(2, int(size.max()) + 1):
        active = size >= back
        if not active.any():
            break
        idx = np.where(active, ends - back, ends - 1)
        combined = resolver(cells.take(idx), acc)
        acc = _where_cells(active, combined, acc)
    return flat_s[starts], acc


def _where_cells(cond, a: Cells, b: Cells) -> Cells:
    return Cells(tuple(_where_row(cond, ra, rb, a.shape) for ra, rb in zip(a.rows, b.rows)), a.shape)


def _cells_to_canvas(frame: RasterFrame, flat: np.ndarray, cells: Cells, layers=(), points=None) -> Canvas:
    if not len(flat):
        return Canvas(frame, Cells.empty((0, 0)), (0, 0), layers, points)
    i, j = frame.unflat(flat)
    i0, j0 = int(i.min()), int(j.min())
    w, h = int(i.max()) - i0 + 1, int(j.max()) - j0 + 1
    grid = cells.place((h, w), (j - j0, i - i0))
    return Canvas(frame, grid, (i0, j0), layers, points)


def geometric_transform(c, gamma: TransformFn, resolver: Optional[BlendFn] = None, frame: Optional[RasterFrame] = None):
    """Move canvas content to the positions given by ``gamma``.

    For a single canvas every non-null cell moves to the pixel containing its
    target; cells mapped outside the output frame are dropped. If several
    cells meet at one pixel they are folded with ``resolver`` in row-major
    source order, and :class:`TransformCollision` is raised when no resolver
    is given. A batch is transformed member by member and stays a batch.

    ``frame`` selects the output frame (defaults to the input frame).
    """
    if isinstance(c, CanvasBatch):
        return _transform_batch(c, gamma, frame)
    if not isinstance(c, Canvas):
        return (geometric_transform(m, gamma, resolver, frame) for m in c)
    out_frame = frame or c.frame
    si, sj = c.nonnull_pixels()
    lj, li = sj - c.origin[1], si - c.origin[0]
    cells = c.cells.take((lj, li))
    tx, ty = gamma.targets(c.frame.center_x(si), c.frame.center_y(sj), cells)
    ti, tj, ok = out_frame.world_to_pixel(tx, ty)
    cells = cells.take(ok)
    flat = out_frame.flat(ti[ok], tj[ok])
    flat, cells = _resolve_collisions(flat, cells, resolver)

    points = None
    if c.points is not None:
        pi, pj = c.frame.unflat(c.points.flat)
        if gamma.kind == "positional":
            nx, ny = gamma.fn(c.points.xy[:, 0], c.points.xy[:, 1])
        else:
            nx, ny = gamma.fn(c.cells_at(pi, pj))
        qi, qj, qok = out_frame.world_to_pixel(nx, ny)
        xy = np.column_stack([np.broadcast_to(nx, qok.shape), np.broadcast_to(ny, qok.shape)])
        if qok.any():
            points = PointEntries.build(out_frame.flat(qi[qok], qj[qok]), c.points.ids[qok], xy[qok])
    out = _cells_to_canvas(out_frame, flat, cells, (), points)
    m = gamma.affine if gamma.kind == "positional" else None
    layers = _carry_layers(c.layers, out_frame, out, m)
    return Canvas(out.frame, out.cells, out.origin, layers, points)


def _transform_batch(b: CanvasBatch, gamma: TransformFn, frame: Optional[RasterFrame]) -> CanvasBatch:
    if b.has_background():
        raise ValueError("geometric_transform of a batch needs an empty background; mask it first")
    out_frame = frame or b.frame
    if gamma.kind == "positional":
        if b.xy is not None:
            tx, ty = gamma.fn(b.xy[:, 0], b.xy[:, 1])
        else:
            tx, ty = gamma.fn(b.frame.center_x(b.pix_i), b.frame.center_y(b.pix_j))
    else:
        tx, ty = gamma.fn(b.cells)
    tx = np.broadcast_to(np.asarray(tx, dtype=float), (len(b),))
    ty = np.broadcast_to(np.asarray(ty, dtype=float), (len(b),))
    ti, tj, ok = out_frame.world_to_pixel(tx, ty)
    xy = np.column_stack([tx, ty])[ok]
    return CanvasBatch(out_frame, ti[ok], tj[ok], b.cells.take(ok), xy)


def value_transform(c, f: ValueFn):
    """Replace every pixel's matrix by ``f(center, matrix)``."""
    if isinstance(c, CanvasBatch) or not isinstance(c, Canvas):
        return (value_transform(m, f) for m in c)
    fr = c.frame
    if f.total:
        win = (0, 0, fr.width, fr.height)
        cells = c.expanded(*win)
    else:
        win = c.window
        cells = c.cells
    i0, j0, w, h = win
    x = np.broadcast_to(fr.center_x(np.arange(i0, i0 + w))[None, :], (h, w))
    y = np.broadcast_to(fr.center_y(np.arange(j0, j0 + h))[:, None], (h, w))
    return Canvas(fr, f(x, y, cells), (i0, j0), c.layers, c.points)


def mask(c, m: MaskSet):
    """Keep cells whose matrix satisfies ``m``; all others become null.

    Boundary entries are kept: masked-out boundary pixels still flag where the
    query layer must refine.
    """
    if isinstance(c, CanvasBatch):
        cells = c.cells.masked(m(c.cells))
        bg = None if c.background is None else mask(c.background, m)
        keep = cells.nonnull()
        if bg is not None and not bg.is_empty():
            keep = np.ones(len(c), dtype=bool)
        else:
            bg = None
        out = CanvasBatch(c.frame, c.pix_i, c.pix_j, cells, c.xy, bg, c.layers, c.points)
        return out if keep.all() else out.subset(keep)
    if not isinstance(c, Canvas):
        return (mask(x, m) for x in c)
    return c.with_cells(c.cells.masked(m(c.cells)))


def blend(c1, c2, fn: BlendFn):
    """Per-pixel merge ``c1(x, y) fn c2(x, y)``; boundary indexes are unioned."""
    if isinstance(c1, CanvasBatch) and isinstance(c2, Canvas):
        _same_frame(c1.frame, c2.frame)
        cells = fn(c1.cells, c2.cells_at(c1.pix_i, c1.pix_j))
        bg = blend(c1.background or Canvas.empty(c1.frame), c2, fn)
        return CanvasBatch(c1.frame, c1.pix_i, c1.pix_j, cells, c1.xy, bg, c1.layers + c2.layers, c1.points)
    if isinstance(c1, Canvas) and isinstance(c2, CanvasBatch):
        _same_frame(c1.frame, c2.frame)
        cells = fn(c1.cells_at(c2.pix_i, c2.pix_j), c2.cells)
        bg = blend(c1, c2.background or Canvas.empty(c2.frame), fn)
        return CanvasBatch(c2.frame, c2.pix_i, c2.pix_j, cells, c2.xy, bg, c1.layers + c2.layers, c2.points)
    if not (isinstance(c1, Canvas) and isinstance(c2, Canvas)):
        raise TypeError("blend takes two canvases, or a batch and a canvas")
    _same_frame(c1.frame, c2.frame)
    win = union_window([c1, c2])
    i0, j0, w, h = win
    cells = fn(c1.expanded(*win), c2.expanded(*win))
    points = PointEntries.merge([c1.points, c2.points])
    return Canvas(c1.frame, cells, (i0, j0), c1.layers + c2.layers, points)


def dissect(c: Canvas) -> CanvasBatch:
    """One single-pixel canvas per non-null pixel, in row-major order."""
    i, j = c.nonnull_pixels()
    cells = c.cells.take((j - c.origin[1], i - c.origin[0]))
    return CanvasBatch(c.frame, i, j, cells, None, None, c.layers, c.points)


# ---------------------------------------------------------------------------
# derived operators
# ---------------------------------------------------------------------------


def map_op(c: Canvas, gamma: TransformFn, frame: Optional[RasterFrame] = None) -> CanvasBatch:
    """Dissect followed by a geometric transform of every piece."""
    return geometric_transform(dissect(c), gamma, frame=frame)


def multiway_blend(cs: Stream, fn: BlendFn, frame: Optional[RasterFrame] = None, grouping: str = "auto") -> Canvas:
    """Right-nested fold ``C1 fn (C2 fn (... fn Cn))``.

    ``grouping`` is ``"sequential"`` (literal fold over canvases), ``"tree"``
    (pairwise reduction, associative functions only) or ``"auto"``, which uses
    a vectorized reduction when ``fn`` provides one.
    """
    if grouping not in ("auto", "sequential", "tree"):
        raise ValueError(f"unknown grouping {grouping!r}")
    if grouping == "tree" and not fn.associative:
        raise ValueError(f"{fn.name} is not associative; tree grouping would change the result")
    reducer = _REDUCERS.get(fn.name) if grouping == "auto" else None
    if isinstance(cs, CanvasBatch):
        if frame is not None:
            _same_frame(frame, cs.frame)
        if reducer is not None and not cs.has_background():
            return reducer.batch(cs)
        frame = cs.frame
    canvases = list(cs)
    for c in canvases:
        if frame is None:
            frame = c.frame
        _same_frame(frame, c.frame)
    if not canvases:
        if frame is None:
            raise ValueError("multiway_blend of an empty stream needs a frame")
        return Canvas.empty(frame)
    if len(canvases) == 1:
        return canvases[0]
    if reducer is not None:
        return reducer.canvases(canvases)
    if grouping == "tree":
        level = canvases
        while len(level) > 1:
            nxt = [blend(level[k], level[k + 1], fn) for k in range(0, len(level) - 1, 2)]
            if len(level) % 2:
                nxt.append(level[-1])
            level = nxt
        return level[0]
    acc = canvases[-1]
    for c in reversed(canvases[:-1]):
        acc = blend(c, acc, fn)
    return acc


# ---------------------------------------------------------------------------
# built-in parameter functions
# ---------------------------------------------------------------------------


def _odot(a: Cells, b: Cells) -> Cells:
    # row 0 from the left operand, row 2 from the right
    return Cells((a.rows[0], None, b.rows[2]), a.shape)


def _sum_rows(ra: Optional[InfoRow], rb: Optional[InfoRow], shape, id_from_left=True, keep_value=True):
    """Add counts of two rows; a null operand contributes zero."""
    if ra is None and rb is None:
        return None
    ra = ra or _null_row(shape)
    rb = rb or _null_row(shape)
    pa, pb = ra.present, rb.present
    count = np.where(pa, ra.count, 0.0) + np.where(pb, rb.count, 0.0)
    if id_from_left:
        ids = np.where(pa, ra.id, rb.id)
        value = np.where(pa, ra.value, rb.value)
    else:
        ids = np.zeros(shape, dtype=np.int64)
        value = np.where(pa, ra.value, 0.0) + np.where(pb, rb.value, 0.0) if keep_value else np.zeros(shape)
    return InfoRow(pa | pb, ids, count, value)


def _oplus(a: Cells, b: Cells) -> Cells:
    return Cells((None, None, _sum_rows(a.rows[2], b.rows[2], a.shape)), a.shape)


def _plus(a: Cells, b: Cells) -> Cells:
    row0 = _sum_rows(a.rows[0], b.rows[0], a.shape, id_from_left=False, keep_value=False)
    return Cells((row0, None, b.rows[2]), a.shape)


def _plus_sum(a: Cells, b: Cells) -> Cells:
    row0 = _sum_rows(a.rows[0], b.rows[0], a.shape, id_from_left=False, keep_value=True)
    return Cells((row0, None, b.rows[2]), a.shape)


def _first(a: Cells, b: Cells) -> Cells:
    rows = []
    for ra, rb in zip(a.rows, b.rows):
        if ra is None:
            rows.append(rb)
        elif rb is None:
            rows.append(ra)
        else:
            rows.append(_where_row(ra.present, ra, rb, a.shape))
    return Cells(tuple(rows), a.shape)


ODOT = BlendFn("odot", _odot)
OPLUS = BlendFn("oplus", _oplus, commutative=False, associative=True)
# commutative on row 0, which is all aggregation reads; row 2 follows the right operand
PLUS = BlendFn("plus", _plus, commutative=True, associative=True)
PLUS_SUM = BlendFn("plus_sum", _plus_sum, commutative=True, associative=True)
FIRST = BlendFn("first", _first, commutative=False, associative=True)


class _PlusReducer:
    """Vectorized right fold for the ``+`` family.

    Row 0 sums counts (and values for the sum variant) with id 0; row 2 is the
    last canvas's row 2. Values are summed in a canonical order (by pixel, then
    by value) so results do not depend on input order.
    """

    def __init__(self, keep_value: bool):
        self.keep_value = keep_value

    def _row0(self, shape, flat, present, count, value):
        counts = np.zeros(shape).reshape(-1)
        values = np.zeros(shape).reshape(-1)
        hit = np.zeros(shape, dtype=bool).reshape(-1)
        f = flat[present]
        c = count[present]
        v = value[present]
        if len(f):
            order = np.lexsort((v, f))
            f, c, v = f[order], c[order], v[order]
            counts += np.bincount(f, weights=c, minlength=counts.size)
            if self.keep_value:
                values += np.bincount(f, weights=v, minlength=values.size)
            hit[f] = True
        return InfoRow(hit.reshape(shape), np.zeros(shape, np.int64), counts.reshape(shape), values.reshape(shape))

    def batch(self, b: CanvasBatch) -> Canvas:
        if len(b) == 0:
            return Canvas.empty(b.frame)
        if len(b) == 1:
            return b.member(0)
        r0 = b.cells.rows[0]
        flat_all = b.flat
        if r0 is None:
            keep = np.zeros(0, dtype=np.int64)
        else:
            keep = np.nonzero(r0.present)[0]
        last = len(b) - 1
        r2 = b.cells.rows[2]
        has_r2 = r2 is not None and bool(r2.present[last])
        touched = flat_all[keep]
        if has_r2:
            touched = np.append(touched, flat_all[last])
        if not len(touched):
            return Canvas.empty(b.frame)
        fi, fj = b.frame.unflat(touched)
        i0, j0 = int(fi.min()), int(fj.min())
        w, h = int(fi.max()) - i0 + 1, int(fj.max()) - j0 + 1
        local = (b.pix_j - j0) * w + (b.pix_i - i0)
        row0 = None
        if len(keep):
            row0 = self._row0((h, w), local[keep], np.ones(len(keep), bool), np.broadcast_to(r0.count, (len(b),))[keep],
                              np.broadcast_to(r0.value, (len(b),))[keep])
        row2 = None
        if has_r2:
            present = np.zeros((h, w), dtype=bool)
            li, lj = int(b.pix_i[last]) - i0, int(b.pix_j[last]) - j0
            present[lj, li] = True
            row2 = InfoRow.from_arrays(present, r2.id[last], r2.count[last], r2.value[last])
        return Canvas(b.frame, Cells((row0, None, row2), (h, w)), (i0, j0))

    def canvases(self, cs: list) -> Canvas:
        frame = cs[0].frame
        win = union_window(cs)
        i0, j0, w, h = win
        flats, counts, values = [], [], []
        for c in cs:
            r0 = c.cells.rows[0]
            if r0 is None:
                continue
            lj, li = np.nonzero(r0.present)
            gi, gj = li + c.origin[0] - i0, lj + c.origin[1] - j0
            flats.append(gj * w + gi)
            counts.append(np.broadcast_to(r0.count, r0.shape)[lj, li])
            values.append(np.broadcast_to(r0.value, r0.shape)[lj, li])
        row0 = None
        if flats:
            f = np.concatenate(flats)
            row0 = self._row0((h, w), f, np.ones(len(f), bool), np.concatenate(counts), np.concatenate(values))
        last = cs[-1]
        row2 = None
        if last.cells.rows[2] is not None and w and h:
            row2 = last.expanded(*win).rows[2]
        return Canvas(frame, Cells((row0, None, row2), (h, w)), (i0, j0))


class _OplusReducer:
    """Vectorized right fold of ``oplus``: first present id/value, summed counts."""

    def batch(self, b: CanvasBatch) -> Canvas:
        return self.canvases(list(b))

    def canvases(self, cs: list) -> Canvas:
        frame = cs[0].frame
        win = union_window(cs)
        i0, j0, w, h = win
        rows = [c.cells.rows[2] for c in cs]
        layers = tuple(l for c in cs for l in c.layers)
        points = PointEntries.merge([c.points for c in cs])
        if all(r is None for r in rows):
            return Canvas(frame, Cells.empty((h, w)), (i0, j0), layers, points)
        present = np.zeros((h, w), dtype=bool)
        counts = np.zeros((h, w))
        # id and value stay broadcast constants when every operand agrees
        ids = _uniform([r.id for r in rows if r is not None])
        values = _uniform([r.value for r in rows if r is not None])
        id_grid = np.zeros((h, w), dtype=np.int64) if ids is None else None
        value_grid = np.zeros((h, w)) if values is None else None
        for c, r in zip(cs, rows):
            if r is None:
                continue
            ci0, cj0, cw, ch = c.window
            sl = (slice(cj0 - j0, cj0 - j0 + ch), slice(ci0 - i0, ci0 - i0 + cw))
            p = r.present
            if id_grid is not None or value_grid is not None:
                new = p & ~present[sl]
                if id_grid is not None:
                    np.copyto(id_grid[sl], r.id, where=new)
                if value_grid is not None:
                    np.copyto(value_grid[sl], r.value, where=new)
            present[sl] |= p
            np.add(counts[sl], r.count, out=counts[sl], where=p)
        row = InfoRow(
            present,
            np.broadcast_to(ids, (h, w)) if id_grid is None else id_grid,
            counts,
            np.broadcast_to(values, (h, w)) if value_grid is None else value_grid,
        )
        return Canvas(frame, Cells((None, None, row), (h, w)), (i0, j0), layers, points)


def _uniform(fields: list):
    """The shared scalar of constant-valued fields, or None."""
    first = None
    for a in fields:
        if not (a.size == 0 or all(st == 0 for st in a.strides)):
            return None
        if a.size == 0:
            continue
        v = a.reshape(-1)[0]
        if first is None:
            first = v
        elif v != first:
            return None
    return first if first is not None else np.zeros((), dtype=fields[0].dtype)[()]


class _Reducer:
    def __init__(self, batch, canvases):
        self.batch = batch
        self.canvases = canvases


_plus_r = _PlusReducer(keep_value=False)
_plus_sum_r = _PlusReducer(keep_value=True)
_oplus_r = _OplusReducer()
_REDUCERS = {
    "plus": _plus_r,
    "plus_sum": _plus_sum_r,
    "oplus": _oplus_r,
}


def _present_or_false(cells: Cells, d: int):
    r = cells.rows[d]
    return np.False_ if r is None else r.present


def mask_p(polygon_id: int = 1) -> MaskSet:
    """Point row present and row-2 id equal to ``polygon_id``."""

    def fn(s: Cells):
        r0, r2 = s.rows[0], s.rows[2]
        if r0 is None or r2 is None:
            return np.False_
        return r0.present & r2.present & (r2.id == polygon_id)

    return MaskSet(f"M_p[{polygon_id}]", fn)


def mask_p_any() -> MaskSet:
    """Point row present and at least one polygon incident (row-2 count >= 1)."""

    def fn(s: Cells):
        r0, r2 = s.rows[0], s.rows[2]
        if r0 is None or r2 is None:
            return np.False_
        return r0.present & r2.present & (r2.count >= 1)

    return MaskSet("M_p_any", fn)


def mask_p_all(n: int) -> MaskSet:
    """Point row present and exactly ``n`` polygons incident."""

    def fn(s: Cells):
        r0, r2 = s.rows[0], s.rows[2]
        if r0 is None or r2 is None:
            return np.False_
        return r0.present & r2.present & (r2.count == n)

    return MaskSet(f"M_p_all[{n}]", fn)


def _mask_y(s: Cells):
    r2 = s.rows[2]
    if r2 is None:
        return np.False_
    return r2.present & (r2.count == 2)


def mask_r(k: int) -> MaskSet:
    def fn(s: Cells):
        r0 = s.rows[0]
        if r0 is None:
            return np.False_
        return r0.present & (r0.count == k)

    return MaskSet(f"M_r[{k}]", fn)


def _nonnull(s: Cells):
    return s.nonnull()


M_Y = MaskSet("M_y", _mask_y)
NONNULL = MaskSet("nonnull", _nonnull)


def _gamma_c(s: Cells):
    r2 = s.rows[2]
    if r2 is None:
        nan = np.full(s.shape, np.nan)
        return nan, nan
    x = np.where(r2.present, r2.id.astype(float), np.nan)
    return x, np.zeros(s.shape)


GAMMA_C = TransformFn("gamma_c", "informational", _gamma_c)
GAMMA_0 = TransformFn("gamma_0", "informational", lambda s: (np.zeros(s.shape), np.zeros(s.shape)))


def gamma_d(ids: np.ndarray, destinations: np.ndarray) -> TransformFn:
    """Relocate a point cell to the destination stored for its record id."""
    ids = np.asarray(ids, dtype=np.int64)
    dest = np.asarray(destinations, dtype=float).reshape(-1, 2)
    order = np.argsort(ids)
    ids_s, dest_s = ids[order], dest[order]

    def fn(s: Cells):
        r0 = s.rows[0]
        if r0 is None:
            nan = np.full(s.shape, np.nan)
            return nan, nan
        rid = np.broadcast_to(r0.id, s.shape)
        pos = np.clip(np.searchsorted(ids_s, rid), 0, max(len(ids_s) - 1, 0))
        known = r0.present & (len(ids_s) > 0) & (ids_s[pos] == rid)
        x = np.where(known, dest_s[pos, 0], np.nan)
        y = np.where(known, dest_s[pos, 1], np.nan)
        return x, y

    return TransformFn("gamma_d", "informational", fn)


def affine(matrix) -> TransformFn:
    m = np.asarray(matrix, dtype=float).reshape(2, 3)

    def fn(x, y):
        return m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2]

    return TransformFn("affine", "positional", fn, m)


def translate(dx: float, dy: float) -> TransformFn:
    return affine([[1, 0, dx], [0, 1, dy]])


IDENTITY = affine([[1, 0, 0], [0, 1, 0]])


def constant(x: float, y: float) -> TransformFn:
    def fn(xs, ys):
        shape = np.shape(xs)
        return np.full(shape, float(x)), np.full(shape, float(y))

    return TransformFn("constant", "positional", fn)


def voronoi_step(seed: Point2, index: int, keep_on_tie: bool = True) -> ValueFn:
    """Value function that adds seed ``index`` to a nearest-seed labelling.

    Row 2 holds ``(label, distance, 0)``. A pixel keeps its current label when
    its stored distance is smaller than the distance to ``seed`` (or equal,
    with ``keep_on_tie``, which makes ties go to the lower index).
    """

    def fn(x, y, s: Cells):
        dx = x - seed.x
        dy = y - seed.y
        d2 = np.sqrt(dx * dx + dy * dy)
        r2 = s.rows[2]
        if r2 is None:
            keep = np.zeros(s.shape, dtype=bool)
            old_id = old_d = 0
        else:
            keep = r2.present & ((r2.count <= d2) if keep_on_tie else (r2.count < d2))
            old_id, old_d = r2.id, r2.count
        row = InfoRow(
            np.ones(s.shape, dtype=bool),
            np.where(keep, old_id, np.int64(index)),
            np.where(keep, old_d, d2),
            np.zeros(s.shape),
        )
        return Cells((None, None, row), s.shape)

    return ValueFn(f"voronoi[{index}]", fn, total=True)


def _empty_value(x, y, s: Cells) -> Cells:
    return Cells.empty(s.shape)


EMPTY_VALUE = ValueFn("empty", _empty_value, total=False)


def set_value(d: int, value: float) -> ValueFn:
    """Rewrite the value field of row ``d`` on non-null rows."""

    def fn(x, y, s: Cells):
        r = s.rows[d]
        if r is None:
            return s
        rows = list(s.rows)
        rows[d] = InfoRow(r.present, r.id, r.count, np.broadcast_to(np.float64(value), r.shape))
        return Cells(tuple(rows), s.shape)

    return ValueFn(f"set_value[{d}]", fn, total=False)


_BUILTINS: dict[str, Callable] = {
    "odot": lambda: ODOT,
    "⊙": lambda: ODOT,
    "oplus": lambda: OPLUS,
    "⊕": lambda: OPLUS,
    "plus": lambda: PLUS,
    "+": lambda: PLUS,
    "plus_sum": lambda: PLUS_SUM,
    "+sum": lambda: PLUS_SUM,
    "first": lambda: FIRST,
    "M_p": mask_p,
    "M_p_any": mask_p_any,
    "M_p'": mask_p_any,
    "M_p_all": mask_p_all,
    "M_y": lambda: M_Y,
    "M_r": mask_r,
    "nonnull": lambda: NONNULL,
    "gamma_c": lambda: GAMMA_C,
    "γ_c": lambda: GAMMA_C,
    "gamma_0": lambda: GAMMA_0,
    "γ_0": lambda: GAMMA_0,
    "gamma_d": gamma_d,
    "γ_d": gamma_d,
    "identity": lambda: IDENTITY,
    "translate": translate,
    "affine": affine,
    "constant": constant,
    "voronoi_step": voronoi_step,
    "empty": lambda: EMPTY_VALUE,
    "set_value": set_value,
}


def builtin(name: str, *args, **kwargs):
    """Look up a built-in parameter function by name.

    >>> builtin("M_r", 4).name
    'M_r[4]'
    """
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownBuiltin(name) from None
    return factory(*args, **kwargs)
