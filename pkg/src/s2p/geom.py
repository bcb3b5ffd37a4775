"""Small planar geometry helpers used by the annotator and the simulator."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

Point = tuple[float, float]
Polygon = Sequence[Point]


def point_segment_distance(p: Point, a: Point, b: Point) -> float:
    px, py = p
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    seg_len_sq = dx * dx + dy * dy
    if seg_len_sq == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg_len_sq
    t = max(0.0, min(1.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    """Ray-casting test; boundary points count as inside."""
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if point_segment_distance(p, (x1, y1), (x2, y2)) == 0.0:
            return True
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x_cross > x:
                inside = not inside
    return inside


def point_polygon_distance(p: Point, poly: Polygon) -> float:
    """Distance from a point to a polygon; 0 inside or on the boundary."""
    if point_in_polygon(p, poly):
        return 0.0
    n = len(poly)
    return min(
        point_segment_distance(p, poly[i], poly[(i + 1) % n]) for i in range(n)
    )


def distance_to_obstacles(p: Point, polygons: Iterable[Polygon]) -> float:
    """Minimum distance from a point to any polygon; inf when there are none."""
    best = math.inf
    for poly in polygons:
        best = min(best, point_polygon_distance(p, poly))
    return best


def segments_intersect(a1: Point, a2: Point, b1: Point, b2: Point) -> bool:
    def orient(p: Point, q: Point, r: Point) -> float:
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    def on_seg(p: Point, q: Point, r: Point) -> bool:
        return (min(p[0], r[0]) <= q[0] <= max(p[0], r[0])
                and min(p[1], r[1]) <= q[1] <= max(p[1], r[1]))

    d1 = orient(b1, b2, a1)
    d2 = orient(b1, b2, a2)
    d3 = orient(a1, a2, b1)
    d4 = orient(a1, a2, b2)
    if ((d1 > 0) != (d2 > 0) or (d1 < 0) != (d2 < 0)) and \
       ((d3 > 0) != (d4 > 0) or (d3 < 0) != (d4 < 0)) and \
       d1 * d2 < 0 and d3 * d4 < 0:
        return True
    if d1 == 0 and on_seg(b1, a1, b2):
        return True
    if d2 == 0 and on_seg(b1, a2, b2):
        return True
    if d3 == 0 and on_seg(a1, b1, a2):
        return True
    if d4 == 0 and on_seg(a1, b2, a2):
        return True
    return False


def segment_polygon_distance(a: Point, b: Point, poly: Polygon) -> float:
    """Distance from segment ab to a polygon; 0 when they touch or cross."""
    if point_in_polygon(a, poly) or point_in_polygon(b, poly):
        return 0.0
    n = len(poly)
    best = math.inf
    for i in range(n):
        c, d = poly[i], poly[(i + 1) % n]
        if segments_intersect(a, b, c, d):
            return 0.0
        best = min(best,
                   point_segment_distance(c, a, b),
                   point_segment_distance(d, a, b),
                   point_segment_distance(a, c, d),
                   point_segment_distance(b, c, d))
    return best


def bresenham(u0: int, v0: int, u1: int, v1: int) -> list[tuple[int, int]]:
    """Integer line rasterization, endpoints included."""
    cells = []
    du = abs(u1 - u0)
    dv = abs(v1 - v0)
    su = 1 if u0 < u1 else -1
    sv = 1 if v0 < v1 else -1
    err = du - dv
    u, v = u0, v0
    while True:
        cells.append((u, v))
        if u == u1 and v == v1:
            break
        e2 = 2 * err
        if e2 > -dv:
            err -= dv
            u += su
        if e2 < du:
            err += du
            v += sv
    return cells
