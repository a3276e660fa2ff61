"""Planar convex-polygon primitives.

Polygons are ``(n, 2)`` vertex arrays in counter-clockwise order.
Halfspace polytopes are pairs ``(A, b)`` describing ``{y : A y <= b}``.
"""
from __future__ import annotations

import itertools

import numpy as np

TOL = 1e-9


class GeometryError(ValueError):
    pass


def cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points, tol=1e-12):
    """Andrew's monotone chain; counter-clockwise, collinear points dropped.

    Degenerate inputs return one (point) or two (segment) vertices.
    """
    pts = np.unique(np.round(np.asarray(points, dtype=float).reshape(-1, 2), 12), axis=0)
    if len(pts) <= 2:
        return pts
    pts = sorted(map(tuple, pts))
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= tol:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= tol:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=float)


def polygon_area(poly):
    """Signed shoelace area (positive for counter-clockwise)."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def is_convex_ccw(poly, tol=1e-9):
    p = np.asarray(poly, dtype=float)
    n = len(p)
    if n < 3:
        return True
    for i in range(n):
        if cross(p[i], p[(i + 1) % n], p[(i + 2) % n]) < -tol:
            return False
    return polygon_area(p) > 0


def normalize_rows(A, b):
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).ravel()
    n = np.linalg.norm(A, axis=1)
    if np.any(n == 0):
        raise GeometryError("zero halfspace row")
    return A / n[:, None], b / n


def halfspaces_to_vertices(A, b, tol=TOL):
    """Vertex enumeration of a bounded 2-D polytope by pairwise line intersection."""
    A, b = normalize_rows(A, b)
    pts = []
    for i, j in itertools.combinations(range(len(A)), 2):
        M = A[[i, j]]
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        if abs(det) < 1e-12:
            continue
        y = np.linalg.solve(M, b[[i, j]])
        if np.all(A @ y <= b + tol * (1 + np.abs(b))):
            pts.append(y)
    if not pts:
        raise GeometryError("polytope is empty or unbounded")
    return convex_hull(np.array(pts))


def polygon_to_halfspaces(poly):
    """Unit-normal halfspaces of a counter-clockwise convex polygon."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3 or not is_convex_ccw(p):
        raise GeometryError("need a convex counter-clockwise polygon with at least 3 vertices")
    edges = np.roll(p, -1, axis=0) - p
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return normals, np.einsum("ij,ij->i", normals, p)


def _start_lowest(p):
    i = min(range(len(p)), key=lambda k: (p[k][1], p[k][0]))
    return np.roll(p, -i, axis=0)


def minkowski_sum_convex(P, Q):
    """Minkowski sum of two convex polygons by merging their edge sequences.

    Inputs are counter-clockwise vertex lists; one- and two-vertex inputs
    (points, segments) are accepted.  The result is counter-clockwise with
    collinear vertices removed.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    polys = []
    for name, poly in (("P", P), ("Q", Q)):
        if len(poly) == 0:
            raise GeometryError(f"{name} is empty")
        poly = _dedupe(poly)
        if len(poly) >= 3:
            if abs(polygon_area(poly)) <= 1e-14 * max(1.0, np.abs(poly).max()) ** 2:
                poly = convex_hull(poly)  # collinear: reduce to a segment
            elif not is_convex_ccw(poly):
                raise GeometryError(f"{name} is not a convex counter-clockwise polygon")
        polys.append(poly)
    P, Q = polys
    if len(P) == 1 or len(Q) == 1:
        return convex_hull(P + Q[0]) if len(Q) == 1 else convex_hull(Q + P[0])
    P, Q = _start_lowest(P), _start_lowest(Q)
    n, m = len(P), len(Q)
    P2 = np.vstack([P, P[:2]])
    Q2 = np.vstack([Q, Q[:2]])
    out = []
    i = j = 0
    while i < n or j < m:
        out.append(P2[i] + Q2[j])
        c = cross((0, 0), P2[i + 1] - P2[i], Q2[j + 1] - Q2[j])
        if c >= 0 and i < n:
            i += 1
        if c <= 0 and j < m:
            j += 1
        if i >= n and j >= m:
            break
    return _drop_collinear(np.array(out))


def _dedupe(p):
    keep = [p[0]]
    for v in p[1:]:
        if np.linalg.norm(v - keep[-1]) > 1e-12:
            keep.append(v)
    while len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= 1e-12:
        keep.pop()
    return np.array(keep)


def _drop_collinear(p, tol=1e-12):
    p = _dedupe(p)
    if len(p) < 3:
        return p
    changed = True
    while changed and len(p) >= 3:
        changed = False
        for k in range(len(p)):
            if abs(cross(p[k - 1], p[k], p[(k + 1) % len(p)])) <= tol * max(1.0, np.abs(p).max()):
                p = np.delete(p, k, axis=0)
                changed = True
                break
    return p


def point_segment_distance(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def distance_point_to_polygon(p, polygon):
    """Euclidean distance from a point to a convex polygon (0 inside)."""
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if len(poly) < 3 or abs(polygon_area(poly)) < 1e-14:
        raise GeometryError("degenerate polygon")
    if polygon_area(poly) < 0:
        poly = poly[::-1]
    p = np.asarray(p, dtype=float)
    n = len(poly)
    inside = all(cross(poly[i], poly[(i + 1) % n], p) >= 0 for i in range(n))
    if inside:
        return 0.0
    return min(point_segment_distance(p, poly[i], poly[(i + 1) % n]) for i in range(n))


def distance_point_to_hull(p, points):
    """Distance to the convex hull of arbitrary points, degenerate hulls included."""
    hull = convex_hull(points)
    p = np.asarray(p, dtype=float)
    if len(hull) == 1:
        return float(np.linalg.norm(p - hull[0]))
    if len(hull) == 2:
        return point_segment_distance(p, hull[0], hull[1])
    return distance_point_to_polygon(p, hull)
