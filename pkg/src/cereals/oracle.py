"""Robot user: reveals ground truth for queried regions and accounts effort.

Interior clicks are unclipped vertex counts inside the region; border clicks
are transversal crossings of polygon edges with the region's boundary
rectangle, computed with exact rational arithmetic. Splitting an image into
regions can therefore only add clicks (superadditivity), with equality when
no polygon edge crosses a region border.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ImageRecord
from .errors import InvariantError
from .geometry import Region, segment_boundary_crossings, vertex_pixel
from .pool import PoolState


@dataclass(frozen=True)
class AnnotationReceipt:
    region: Region
    labels: np.ndarray  # (size, size) gt patch
    clicks_interior: int
    clicks_border: int

    @property
    def clicks_total(self) -> int:
        return self.clicks_interior + self.clicks_border


def _edge_prefilter(record: ImageRecord):
    """Per-polygon edge bounding boxes for cheap rejection before the exact
    crossing test. Cached on the record."""
    cached = getattr(record, "_edge_boxes", None)
    if cached is not None:
        return cached
    boxes = []
    for poly in record.gt_polygons:
        verts = np.asarray(poly.vertices, dtype=np.float64)
        nxt = np.roll(verts, -1, axis=0)
        lo = np.minimum(verts, nxt)
        hi = np.maximum(verts, nxt)
        boxes.append((verts, nxt, lo, hi))
    record._edge_boxes = boxes
    return boxes


def count_interior_clicks(record: ImageRecord, region: Region) -> int:
    h, w = record.height, record.width
    count = 0
    r_lo, r_hi = region.row, region.row + region.size
    c_lo, c_hi = region.col, region.col + region.size
    for poly in record.gt_polygons:
        for vertex in poly.vertices:
            r, c = vertex_pixel(vertex, h, w)
            if r_lo <= r < r_hi and c_lo <= c < c_hi:
                count += 1
    return count


def count_border_clicks(record: ImageRecord, region: Region) -> int:
    total = 0
    r0, c0 = float(region.row), float(region.col)
    r1, c1 = r0 + region.size, c0 + region.size
    for verts, nxt, lo, hi in _edge_prefilter(record):
        # An edge whose bounding box is strictly inside or strictly outside
        # the closed rectangle cannot cross its boundary.
        outside = (hi[:, 0] < r0) | (lo[:, 0] > r1) | (hi[:, 1] < c0) | (lo[:, 1] > c1)
        inside = (lo[:, 0] > r0) & (hi[:, 0] < r1) & (lo[:, 1] > c0) & (hi[:, 1] < c1)
        for idx in np.flatnonzero(~(outside | inside)):
            total += segment_boundary_crossings(
                (verts[idx, 0], verts[idx, 1]),
                (nxt[idx, 0], nxt[idx, 1]),
                region.row,
                region.col,
                region.size,
            )
    return total


def annotate(region: Region, record: ImageRecord, pool: PoolState | None = None) -> AnnotationReceipt:
    """Reveal ground truth for a region; counts are exact integers."""
    if pool is not None:
        for existing in pool.regions_for(region.image_id):
            if region.overlaps(existing):
                raise InvariantError(f"region {region} overlaps labeled area {existing}")
    region.validate(record.height, record.width)
    rs, cs = region.slices()
    return AnnotationReceipt(
        region=region,
        labels=record.gt_labels[rs, cs].copy(),
        clicks_interior=count_interior_clicks(record, region),
        clicks_border=count_border_clicks(record, region),
    )


def region_cost_gt(region: Region, record: ImageRecord) -> int:
    """Click cost of a region without revealing labels."""
    region.validate(record.height, record.width)
    return count_interior_clicks(record, region) + count_border_clicks(record, region)
