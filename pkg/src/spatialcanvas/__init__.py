"""Spatial queries as compositions of canvas operators.

Datasets and constraints are rasterized into canvases, queries run as plans of
blend, mask, transform and dissect operators, and boundary pixels are refined
with exact geometry so answers match vector semantics.
"""

from .algebra import (
    BlendFn,
    MaskSet,
    TransformCollision,
    TransformFn,
    UnknownBuiltin,
    ValueFn,
    blend,
    builtin,
    dissect,
    geometric_transform,
    map_op,
    mask,
    multiway_blend,
    value_transform,
)
from .canvas import (
    Canvas,
    CanvasBatch,
    DegenerateExtent,
    FrameMismatch,
    InfoMatrix,
    InfoSeed,
    ObjectInfo,
    PixelOutOfFrame,
    RasterFrame,
    boundary_lookup,
    build_frame,
    dump_canvas,
    rasterize,
    utility_canvas,
)
from .geometry import (
    Circle,
    Containment,
    GeometricObject,
    HalfSpace,
    Point2,
    Polygon,
    Polyline,
    Rect,
    distance,
    mbr,
    point_in_polygon,
    polygons_intersect,
    segments_intersect,
    validate_polygon,
)
from .io import load_dataset
from .queries import (
    Count,
    Dataset,
    PolygonSet,
    Sum,
    aggregate_select,
    distance_join,
    groupby_join_aggregate,
    knn,
    multi_polygon_select,
    od_select,
    select_points,
    select_polygons,
    spatial_join,
    voronoi,
)

__version__ = "0.1.0"
