"""Degree-2 quadrature rules on segments, triangles and tetrahedra, and the
fan sub-divisions used to integrate over partition cells and facets.

Every rule returns ``(points, weights)`` with ``points`` of shape ``(q, dim)``
and ``weights`` of shape ``(q,)``. Rules are exact for polynomials of total
degree two, which covers products of two affine shape rows.
"""

from typing import Sequence, Tuple

import numpy as np

Rule = Tuple[np.ndarray, np.ndarray]

_GAUSS2 = 0.5 / np.sqrt(3.0)

# Barycentric coordinates of the interior 3-point triangle rule.
_TRI3 = np.array(
    [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]
)

_TET_A = 0.5854101966249685
_TET_B = 0.1381966011250105
_TET4 = np.array(
    [
        [_TET_A, _TET_B, _TET_B, _TET_B],
        [_TET_B, _TET_A, _TET_B, _TET_B],
        [_TET_B, _TET_B, _TET_A, _TET_B],
        [_TET_B, _TET_B, _TET_B, _TET_A],
    ]
)


def _concat(rules: Sequence[Rule], dim: int) -> Rule:
    if not rules:
        return np.zeros((0, dim)), np.zeros(0)
    points = np.vstack([r[0] for r in rules])
    weights = np.concatenate([r[1] for r in rules])
    return points, weights


def segment_rule(a: np.ndarray, b: np.ndarray) -> Rule:
    """2-point Gauss rule on the segment ``[a, b]``; weights sum to its length."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = 0.5 * (a + b)
    half = b - a
    points = np.vstack([mid - _GAUSS2 * half, mid + _GAUSS2 * half])
    length = float(np.linalg.norm(b - a))
    return points, np.full(2, 0.5 * length)


def triangle_area(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Signed area in 2D, unsigned area for triangles embedded in 3D."""
    u = np.asarray(b, dtype=float) - a
    v = np.asarray(c, dtype=float) - a
    if u.shape[0] == 2:
        return 0.5 * float(u[0] * v[1] - u[1] * v[0])
    return 0.5 * float(np.linalg.norm(np.cross(u, v)))


def triangle_rule(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Rule:
    corners = np.vstack([a, b, c]).astype(float)
    points = _TRI3 @ corners
    return points, np.full(3, triangle_area(a, b, c) / 3.0)


def tetrahedron_volume(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray
) -> float:
    """Signed volume, positive when ``(b-a, c-a, d-a)`` is right-handed."""
    return float(np.linalg.det(np.vstack([b - a, c - a, d - a]))) / 6.0


def tetrahedron_rule(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray
) -> Rule:
    corners = np.vstack([a, b, c, d]).astype(float)
    points = _TET4 @ corners
    volume = abs(tetrahedron_volume(*corners))
    return points, np.full(4, volume / 4.0)


def polygon_rule(vertices: np.ndarray) -> Rule:
    """Fan rule over a simple 2D polygon given counter-clockwise.

    The fan apex is the vertex average; signed triangle areas keep the rule
    exact for non-convex (but simple) polygons.
    """
    vertices = np.asarray(vertices, dtype=float)
    apex = vertices.mean(axis=0)
    rules = []
    for i in range(len(vertices)):
        a = vertices[i]
        b = vertices[(i + 1) % len(vertices)]
        rules.append(triangle_rule(apex, a, b))
    return _concat(rules, 2)


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area of a 2D polygon."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def planar_polygon_rule(vertices: np.ndarray) -> Rule:
    """Fan rule over a planar polygon embedded in 3D (one 3-point rule per
    fan triangle)."""
    vertices = np.asarray(vertices, dtype=float)
    apex = vertices.mean(axis=0)
    rules = []
    for i in range(len(vertices)):
        rules.append(triangle_rule(apex, vertices[i], vertices[(i + 1) % len(vertices)]))
    return _concat(rules, 3)


def newell_normal(vertices: np.ndarray) -> np.ndarray:
    """Unit normal of a planar 3D polygon, oriented by its vertex order."""
    v = np.asarray(vertices, dtype=float)
    nxt = np.roll(v, -1, axis=0)
    normal = np.array(
        [
            np.sum((v[:, 1] - nxt[:, 1]) * (v[:, 2] + nxt[:, 2])),
            np.sum((v[:, 2] - nxt[:, 2]) * (v[:, 0] + nxt[:, 0])),
            np.sum((v[:, 0] - nxt[:, 0]) * (v[:, 1] + nxt[:, 1])),
        ]
    )
    return normal / np.linalg.norm(normal)


def polyhedron_rule(vertices: np.ndarray, faces: Sequence[Sequence[int]]) -> Rule:
    """Fan rule over a polyhedron that is star-shaped with respect to its
    vertex average: one tetrahedron per face fan triangle."""
    vertices = np.asarray(vertices, dtype=float)
    apex = vertices.mean(axis=0)
    rules = []
    for face in faces:
        loop = vertices[list(face)]
        face_apex = loop.mean(axis=0)
        for i in range(len(loop)):
            rules.append(
                tetrahedron_rule(apex, face_apex, loop[i], loop[(i + 1) % len(loop)])
            )
    return _concat(rules, 3)


def facet_rule(vertices: np.ndarray) -> Rule:
    """Degree-2 rule on a facet: a segment in 2D or a planar polygon in 3D."""
    vertices = np.asarray(vertices, dtype=float)
    if vertices.shape[1] == 2:
        return segment_rule(vertices[0], vertices[1])
    return planar_polygon_rule(vertices)


def cell_rule(vertices: np.ndarray, faces: Sequence[Sequence[int]] = ()) -> Rule:
    """Degree-2 rule over a cell: polygon in 2D, polyhedron (needs faces) in 3D."""
    vertices = np.asarray(vertices, dtype=float)
    if vertices.shape[1] == 2:
        return polygon_rule(vertices)
    return polyhedron_rule(vertices, faces)
