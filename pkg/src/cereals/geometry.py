"""Regions, polygons and the exact geometry used for click accounting.

Coordinates are (row, col) with the continuous convention that pixel (i, j)
occupies the half-open square [i, i+1) x [j, j+1). A square region anchored
at (r, c) with side w covers pixels r..r+w-1 / c..c+w-1, i.e. the continuous
rectangle [r, r+w) x [c, c+w).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

UNLABELED = -1


@dataclass(frozen=True, order=True)
class Region:
    """Axis-aligned square window, anchored at its top-left pixel."""

    image_id: str
    row: int
    col: int
    size: int

    @property
    def area(self) -> int:
        return self.size * self.size

    def slices(self) -> tuple[slice, slice]:
        return slice(self.row, self.row + self.size), slice(self.col, self.col + self.size)

    def overlaps(self, other: "Region") -> bool:
        if self.image_id != other.image_id:
            return False
        return (
            self.row < other.row + other.size
            and other.row < self.row + self.size
            and self.col < other.col + other.size
            and other.col < self.col + self.size
        )

    def validate(self, height: int, width: int) -> None:
        if self.size <= 0:
            raise DataError(f"region size must be positive, got {self.size}")
        if self.row < 0 or self.col < 0:
            raise DataError(f"region anchor {(self.row, self.col)} out of bounds")
        if self.row + self.size > height or self.col + self.size > width:
            raise DataError(
                f"region {(self.row, self.col, self.size)} leaves {height}x{width} image"
            )

    def to_json(self) -> list[int]:
        return [self.row, self.col, self.size]


@dataclass(frozen=True)
class Polygon:
    """Closed polygon (implicit edge last -> first) with a single class label."""

    class_id: int
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise DataError(f"polygon needs >= 3 vertices, got {len(self.vertices)}")

    def edges(self) -> Iterable[tuple[tuple[float, float], tuple[float, float]]]:
        verts = self.vertices
        for i in range(len(verts)):
            yield verts[i], verts[(i + 1) % len(verts)]


def vertex_pixel(vertex: Sequence[float], height: int, width: int) -> tuple[int, int]:
    """Pixel containing a vertex: floor of coordinates, with points on the
    bottom/right image border attributed to the last row/column."""
    r, c = vertex
    if not (0 <= r <= height and 0 <= c <= width):
        raise DataError(f"vertex {(r, c)} outside {height}x{width} image bounds")
    return min(int(np.floor(r)), height - 1), min(int(np.floor(c)), width - 1)


def _inside(p: tuple[Fraction, Fraction], r0, r1, c0, c1) -> bool:
    return r0 <= p[0] <= r1 and c0 <= p[1] <= c1


def segment_boundary_crossings(
    a: tuple[float, float],
    b: tuple[float, float],
    region_row: int,
    region_col: int,
    size: int,
) -> int:
    """Number of times segment a->b transversally crosses the boundary of the
    closed rectangle [row, row+size] x [col, col+size].

    Exact rational arithmetic (floats are binary rationals); grazing contacts
    that never enter the open interior count zero.
    """
    r0, r1 = Fraction(region_row), Fraction(region_row + size)
    c0, c1 = Fraction(region_col), Fraction(region_col + size)
    pa = (Fraction(a[0]), Fraction(a[1]))
    pb = (Fraction(b[0]), Fraction(b[1]))

    # Liang-Barsky clip of the parametric segment p(t) = pa + t*(pb-pa).
    dr = pb[0] - pa[0]
    dc = pb[1] - pa[1]
    t_enter = Fraction(0)
    t_exit = Fraction(1)
    for delta, lo, hi, start in ((dr, r0, r1, pa[0]), (dc, c0, c1, pa[1])):
        if delta == 0:
            if start < lo or start > hi:
                return 0
            continue
        t_lo = (lo - start) / delta
        t_hi = (hi - start) / delta
        if t_lo > t_hi:
            t_lo, t_hi = t_hi, t_lo
        t_enter = max(t_enter, t_lo)
        t_exit = min(t_exit, t_hi)
    if t_enter >= t_exit:
        # Missed, or touches the boundary in a single point / along an edge
        # without passing in and out: no re-anchoring needed.
        inside_a = _inside(pa, r0, r1, c0, c1)
        inside_b = _inside(pb, r0, r1, c0, c1)
        if t_enter == t_exit and inside_a != inside_b:
            return 1
        return 0
    crossings = 0
    if t_enter > 0:
        crossings += 1
    if t_exit < 1:
        crossings += 1
    return crossings


def polygon_region_crossings(polygon: Polygon, region: Region) -> int:
    """Total transversal boundary crossings of a polygon's edge chain."""
    total = 0
    for a, b in polygon.edges():
        total += segment_boundary_crossings(a, b, region.row, region.col, region.size)
    return total


def regions_disjoint(regions: Sequence[Region]) -> bool:
    """True when no two regions of the same image overlap (exact test)."""
    by_image: dict[str, list[Region]] = {}
    for reg in regions:
        by_image.setdefault(reg.image_id, []).append(reg)
    for group in by_image.values():
        group.sort(key=lambda g: (g.row, g.col))
        for i, first in enumerate(group):
            for second in group[i + 1 :]:
                if first.overlaps(second):
                    return False
    return True
