import logging
from typing import List, Tuple, Union

import numpy as np
import shapely
from scipy.spatial import Voronoi, cKDTree
from shapely.geometry import LineString, Polygon
from shapely.geometry.polygon import orient

from .errors import DegenerateCellError, DomainError
from .geometry import Cell, CellPartition, Facet, FacetKind, PointCloud
from .utils import parallel_process

logger = logging.getLogger("fpm_cardio")

GHOST_COUNT = 16
GHOST_RADIUS_FACTOR = 10.0


def boundary_polygon(boundary: np.ndarray) -> Polygon:
    boundary = np.asarray(boundary, dtype=float)
    if boundary.ndim != 2 or boundary.shape[1] != 2 or len(boundary) < 3:
        raise DomainError("boundary must be a polygon with at least 3 (x, y) vertices")
    polygon = Polygon(boundary)
    if not polygon.is_valid or polygon.area <= 0:
        raise DomainError("boundary polygon is self-intersecting or empty")
    return orient(polygon, sign=1.0)


def _loop(geometry, tol: float) -> np.ndarray:
    """Counter-clockwise vertex loop of a polygon without repeated vertices."""
    coords = np.asarray(orient(geometry, sign=1.0).exterior.coords)[:-1]
    keep = [0]
    for k in range(1, len(coords)):
        if np.linalg.norm(coords[k] - coords[keep[-1]]) > tol:
            keep.append(k)
    if len(keep) > 1 and np.linalg.norm(coords[keep[-1]] - coords[keep[0]]) <= tol:
        keep.pop()
    return coords[keep]


def _segments(geometry) -> List[np.ndarray]:
    """Line pieces of a clipping result, as (2, 2) endpoint arrays."""
    if geometry.is_empty:
        return []
    if isinstance(geometry, LineString):
        coords = np.asarray(geometry.coords)
        return [np.vstack([coords[0], coords[-1]])]
    pieces = []
    for part in getattr(geometry, "geoms", []):
        pieces.extend(_segments(part))
    return pieces


def build_voronoi_partition_2d(
    points: Union[PointCloud, np.ndarray],
    boundary: np.ndarray,
    threads: int = 1,
) -> CellPartition:
    """Voronoi cells of ``points`` clipped to a simple ``boundary`` polygon.

    Internal facets are the clipped Voronoi ridges, oriented outward from
    the lower point index. Ridges of (near) zero length, produced by four or
    more cocircular points, are collapsed and counted.
    """
    if not isinstance(points, PointCloud):
        points = PointCloud(np.asarray(points, dtype=float))
    if points.dim != 2:
        raise DomainError(f"Voronoi partitions are built in 2D only, got dim {points.dim}")
    domain = boundary_polygon(boundary)
    positions = points.positions
    n = points.n

    minx, miny, maxx, maxy = domain.bounds
    diameter = float(np.hypot(maxx - minx, maxy - miny))
    tol = 1e-9 * diameter
    inside = shapely.covers(domain.buffer(tol), shapely.points(positions))
    if not np.all(inside):
        outside = np.flatnonzero(~inside)
        raise DomainError(
            f"{len(outside)} points lie outside the boundary polygon, first is point {outside[0]}"
        )

    if n > 1:
        distances, _ = cKDTree(positions).query(positions, k=2)
        spacing = float(np.mean(distances[:, 1]))
    else:
        spacing = diameter
    ridge_tol = 1e-10 * spacing

    center = np.array([0.5 * (minx + maxx), 0.5 * (miny + maxy)])
    angles = np.linspace(0.0, 2.0 * np.pi, GHOST_COUNT, endpoint=False)
    ghosts = center + GHOST_RADIUS_FACTOR * diameter * np.column_stack(
        [np.cos(angles), np.sin(angles)]
    )
    voronoi = Voronoi(np.vstack([positions, ghosts]))

    def clip_cell(i: int) -> Cell:
        region = voronoi.regions[voronoi.point_region[i]]
        if -1 in region or not region:
            raise DegenerateCellError(f"Voronoi region of point {i} is unbounded")
        clipped = Polygon(voronoi.vertices[region]).intersection(domain)
        if clipped.is_empty or clipped.geom_type != "Polygon":
            raise DegenerateCellError(
                f"clipped cell of point {i} is {clipped.geom_type}, not a single polygon"
            )
        return Cell.from_vertices(i, _loop(clipped, tol))

    cells = parallel_process(range(n), clip_cell, max_workers=threads)

    facets: List[Facet] = []
    collapsed = 0
    for (p, q), ridge in zip(voronoi.ridge_points, voronoi.ridge_vertices):
        if p >= n or q >= n:
            continue
        a, b = (int(p), int(q)) if p < q else (int(q), int(p))
        if -1 in ridge:
            raise DegenerateCellError(f"ridge between points {a} and {b} is unbounded")
        ends = voronoi.vertices[ridge]
        if np.linalg.norm(ends[1] - ends[0]) <= ridge_tol:
            if domain.buffer(tol).covers(shapely.points(ends[0])):
                collapsed += 1
            continue
        for piece in _segments(LineString(ends).intersection(domain)):
            if np.linalg.norm(piece[1] - piece[0]) <= ridge_tol:
                continue
            facets.append(
                Facet.from_vertices(
                    FacetKind.INTERNAL,
                    (a, b),
                    piece,
                    cells[a].centroid,
                    owner_positions=positions[[a, b]],
                )
            )

    exterior = domain.exterior
    for cell in cells:
        loop = cell.vertices
        for k in range(len(loop)):
            edge = np.vstack([loop[k], loop[(k + 1) % len(loop)]])
            if np.linalg.norm(edge[1] - edge[0]) <= ridge_tol:
                continue
            if exterior.distance(shapely.points(edge.mean(axis=0))) <= tol:
                facets.append(
                    Facet.from_vertices(
                        FacetKind.EXTERNAL, (cell.owner,), edge, cell.centroid
                    )
                )

    if collapsed:
        logger.warning(
            f"Collapsed {collapsed} zero-length Voronoi ridges from cocircular points"
        )
    partition = CellPartition.build(points, cells, facets, collapsed_ridges=collapsed)
    logger.info(
        f"Voronoi partition: {n} cells, {len(partition.internal_facets)} internal "
        f"and {len(partition.external_facets)} external facets"
    )
    return partition


def domain_area(boundary: np.ndarray) -> float:
    return float(boundary_polygon(boundary).area)


def rectangle(lower: Tuple[float, float], upper: Tuple[float, float]) -> np.ndarray:
    """Counter-clockwise vertices of an axis-aligned rectangle."""
    (x0, y0), (x1, y1) = lower, upper
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
