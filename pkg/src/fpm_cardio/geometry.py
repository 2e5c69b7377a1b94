import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .config import COINCIDENCE_TOL, MAX_RING_DEPTH, SUPPORT_CONDITION_LIMIT
from .errors import DegenerateCellError, DegenerateGeometryError, DomainError
from .quadrature import cell_rule, facet_rule, newell_normal, polygon_area
from .utils import parallel_process

logger = logging.getLogger("fpm_cardio")


@dataclass(frozen=True)
class PointCloud:
    """Point positions in cm, one row per point."""

    positions: np.ndarray

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] not in (2, 3):
            raise DomainError(
                f"positions must be an (n, 2) or (n, 3) array, got shape {positions.shape}"
            )
        if not np.all(np.isfinite(positions)):
            raise DomainError("positions contain non-finite coordinates")
        if len(positions) > 1:
            pairs = cKDTree(positions).query_pairs(COINCIDENCE_TOL)
            if pairs:
                i, j = sorted(pairs)[0]
                raise DegenerateCellError(
                    f"points {i} and {j} coincide ({len(pairs)} coincident pairs)"
                )
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.n


class FacetKind(Enum):
    INTERNAL = "internal"
    EXTERNAL = "external"


@dataclass
class Cell:
    owner: int
    measure: float
    centroid: np.ndarray
    vertices: np.ndarray
    faces: Tuple[Tuple[int, ...], ...] = ()
    facets: List[int] = field(default_factory=list)

    @classmethod
    def from_vertices(
        cls,
        owner: int,
        vertices: np.ndarray,
        faces: Sequence[Sequence[int]] = (),
    ) -> "Cell":
        """Build a cell from a polygon (2D, any orientation) or a polyhedron
        given by vertices and face loops (3D)."""
        vertices = np.asarray(vertices, dtype=float)
        if vertices.shape[1] == 2 and polygon_area(vertices) < 0:
            vertices = vertices[::-1].copy()
        faces = tuple(tuple(int(i) for i in face) for face in faces)
        points, weights = cell_rule(vertices, faces)
        measure = float(weights.sum())
        if not measure > 0:
            raise DegenerateCellError(f"cell of point {owner} has measure {measure}")
        centroid = weights @ points / measure
        return cls(
            owner=owner,
            measure=measure,
            centroid=centroid,
            vertices=vertices,
            faces=faces,
        )

    def quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        return cell_rule(self.vertices, self.faces)


@dataclass
class Facet:
    kind: FacetKind
    cells: Tuple[int, ...]
    measure: float
    centroid: np.ndarray
    normal: np.ndarray
    quad_points: np.ndarray
    quad_weights: np.ndarray
    vertices: np.ndarray
    h_e: float = 0.0

    @property
    def is_internal(self) -> bool:
        return self.kind is FacetKind.INTERNAL

    @classmethod
    def from_vertices(
        cls,
        kind: FacetKind,
        cells: Tuple[int, ...],
        vertices: np.ndarray,
        cell_centroid: np.ndarray,
        owner_positions: Optional[np.ndarray] = None,
    ) -> "Facet":
        """Build a facet from its segment (2D) or planar polygon (3D).

        The normal points outward from ``cells[0]``; for internal facets
        ``owner_positions`` holds both owner points and sets ``h_e``.
        """
        vertices = np.asarray(vertices, dtype=float)
        points, weights = facet_rule(vertices)
        measure = float(weights.sum())
        if not measure > 0:
            raise DegenerateCellError(f"facet between cells {cells} has zero measure")
        centroid = weights @ points / measure
        if vertices.shape[1] == 2:
            tangent = vertices[1] - vertices[0]
            normal = np.array([tangent[1], -tangent[0]]) / np.linalg.norm(tangent)
        else:
            normal = newell_normal(vertices)
        if np.dot(normal, centroid - cell_centroid) < 0:
            normal = -normal

        h_e = 0.0
        if kind is FacetKind.INTERNAL:
            if owner_positions is None or len(cells) != 2:
                raise DegenerateCellError("internal facets need two cells and owners")
            h_e = float(np.linalg.norm(owner_positions[1] - owner_positions[0]))
        return cls(
            kind=kind,
            cells=tuple(cells),
            measure=measure,
            centroid=centroid,
            normal=normal,
            quad_points=points,
            quad_weights=weights,
            vertices=vertices,
            h_e=h_e,
        )


@dataclass(frozen=True)
class SupportDomain:
    center: int
    neighbors: Tuple[int, ...]
    ring_depth: int = 1

    @property
    def m(self) -> int:
        return len(self.neighbors)

    @property
    def indices(self) -> Tuple[int, ...]:
        """Local-to-global map: the center first, then the neighbors."""
        return (self.center,) + self.neighbors


@dataclass
class CellPartition:
    points: PointCloud
    cells: List[Cell]
    facets: List[Facet]
    collapsed_ridges: int = 0

    @classmethod
    def build(
        cls,
        points: PointCloud,
        cells: List[Cell],
        facets: List[Facet],
        collapsed_ridges: int = 0,
    ) -> "CellPartition":
        """Attach facet indices to their cells and return the partition."""
        if len(cells) != points.n:
            raise DegenerateCellError(
                f"{len(cells)} cells for {points.n} points; one cell per point expected"
            )
        for cell in cells:
            cell.facets = []
        for index, facet in enumerate(facets):
            for c in facet.cells:
                cells[c].facets.append(index)
        return cls(
            points=points,
            cells=cells,
            facets=facets,
            collapsed_ridges=collapsed_ridges,
        )

    @property
    def dim(self) -> int:
        return self.points.dim

    @property
    def n(self) -> int:
        return self.points.n

    @cached_property
    def internal_facets(self) -> List[int]:
        return [i for i, f in enumerate(self.facets) if f.is_internal]

    @cached_property
    def external_facets(self) -> List[int]:
        return [i for i, f in enumerate(self.facets) if not f.is_internal]

    @cached_property
    def adjacency(self) -> List[Tuple[int, ...]]:
        """Owners of the cells sharing an internal facet with each cell."""
        neighbors: List[set] = [set() for _ in range(self.n)]
        for index in self.internal_facets:
            a, b = self.facets[index].cells
            neighbors[a].add(b)
            neighbors[b].add(a)
        return [tuple(sorted(s)) for s in neighbors]

    @cached_property
    def cell_measures(self) -> np.ndarray:
        return np.array([cell.measure for cell in self.cells])

    @property
    def total_measure(self) -> float:
        return float(self.cell_measures.sum())

    def validate(self, domain_measure: Optional[float] = None, rtol: float = 1e-9):
        """Check conformity, owners, normals, h_e and (optionally) measure closure."""
        counts: Dict[int, int] = {}
        for c, cell in enumerate(self.cells):
            if cell.owner != c:
                raise DegenerateCellError(f"cell {c} is owned by point {cell.owner}")
            for f in cell.facets:
                counts[f] = counts.get(f, 0) + 1
        for index, facet in enumerate(self.facets):
            expected = 2 if facet.is_internal else 1
            if counts.get(index, 0) != expected:
                raise DegenerateCellError(
                    f"facet {index} appears in {counts.get(index, 0)} cells, expected {expected}"
                )
            if abs(np.linalg.norm(facet.normal) - 1.0) > 1e-12:
                raise DegenerateCellError(f"facet {index} normal is not unit length")
            if facet.is_internal and not facet.h_e > 0:
                raise DegenerateCellError(f"facet {index} has h_e = {facet.h_e}")
        if domain_measure is not None:
            total = self.total_measure
            if abs(total - domain_measure) > rtol * abs(domain_measure):
                raise DomainError(
                    f"cell measures sum to {total!r}, domain measure is {domain_measure!r}"
                )


def _full_rank(offsets: np.ndarray, dim: int) -> bool:
    if len(offsets) < dim:
        return False
    with np.errstate(all="ignore"):
        condition = np.linalg.cond(offsets.T @ offsets)
    return bool(np.isfinite(condition) and condition <= SUPPORT_CONDITION_LIMIT)


def first_ring_support(partition: CellPartition, center: int) -> SupportDomain:
    """Support of a point: the owners of the cells adjacent to its cell,
    widened ring by ring (up to the maximum depth) until the GFD normal
    matrix has full rank."""
    positions = partition.points.positions
    adjacency = partition.adjacency
    x0 = positions[center]

    ring = set(adjacency[center])
    frontier = set(ring)
    depth = 1
    while True:
        ring.discard(center)
        neighbors = sorted(ring)
        offsets = positions[np.array(neighbors, dtype=int)] - x0
        if _full_rank(offsets, partition.dim):
            return SupportDomain(
                center=center, neighbors=tuple(neighbors), ring_depth=depth
            )
        if depth >= MAX_RING_DEPTH:
            raise DegenerateGeometryError(
                center,
                f"support of {len(neighbors)} neighbors is rank deficient at ring depth {depth}",
            )
        grown = set()
        for j in frontier:
            grown.update(adjacency[j])
        frontier = grown - ring - {center}
        ring |= frontier
        depth += 1


def build_supports(partition: CellPartition, threads: int = 1) -> List[SupportDomain]:
    supports = parallel_process(
        range(partition.n),
        lambda i: first_ring_support(partition, i),
        max_workers=threads,
    )
    escalated = sum(1 for s in supports if s.ring_depth > 1)
    if escalated:
        logger.warning(f"{escalated} supports needed more than one ring of cells")
    return supports
