import itertools
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError
from .geometry import Cell, CellPartition, Facet, FacetKind, PointCloud
from .quadrature import facet_rule

logger = logging.getLogger("fpm_cardio")

# Face loops of a unit box whose vertex k has corner bits (k & 1, k & 2, k & 4).
BOX_FACES: Tuple[Tuple[int, ...], ...] = (
    (0, 4, 6, 2),
    (1, 3, 7, 5),
    (0, 1, 5, 4),
    (2, 6, 7, 3),
    (0, 2, 3, 1),
    (4, 5, 7, 6),
)


def _reference_facet(axis: int, spacing: np.ndarray) -> np.ndarray:
    """Vertices of the voxel face normal to ``axis``, centred at the origin."""
    dim = len(spacing)
    others = [a for a in range(dim) if a != axis]
    half = 0.5 * spacing
    if dim == 2:
        b = others[0]
        vertices = np.zeros((2, 2))
        vertices[0, b] = -half[b]
        vertices[1, b] = half[b]
        return vertices
    b, c = others
    vertices = np.zeros((4, 3))
    for k, (sb, sc) in enumerate([(-1, -1), (1, -1), (1, 1), (-1, 1)]):
        vertices[k, b] = sb * half[b]
        vertices[k, c] = sc * half[c]
    return vertices


def _box_vertices(lower: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    if len(lower) == 2:
        offsets = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    else:
        offsets = np.array(
            [[(k >> 0) & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=float
        )
    return lower + offsets * spacing


def build_voxel_partition(
    counts: Sequence[int],
    spacing: Union[float, Sequence[float]],
    origin: Optional[Sequence[float]] = None,
) -> Tuple[PointCloud, CellPartition]:
    """Regular grid of voxels (pixels in 2D) with one point at each voxel centre.

    Points are numbered with the first axis varying fastest, so the lower
    cell of every internal facet is the one on the negative side.
    """
    counts = tuple(int(c) for c in counts)
    dim = len(counts)
    if dim not in (2, 3):
        raise ConfigError(f"voxel grids are 2D or 3D, got {dim} counts", key="counts")
    if any(c < 2 for c in counts):
        raise ConfigError(f"every count must be >= 2, got {counts}", key="counts")
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (dim,)).copy()
    if not np.all(spacing > 0):
        raise ConfigError(f"spacing must be positive, got {spacing.tolist()}", key="spacing")
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)

    grid = np.array(list(itertools.product(*[range(c) for c in reversed(counts)])))
    index_grid = grid[:, ::-1]
    positions = origin + (index_grid + 0.5) * spacing
    points = PointCloud(positions)

    faces = BOX_FACES if dim == 3 else ()
    measure = float(np.prod(spacing))
    cells = [
        Cell(
            owner=i,
            measure=measure,
            centroid=positions[i].copy(),
            vertices=_box_vertices(positions[i] - 0.5 * spacing, spacing),
            faces=faces,
        )
        for i in range(points.n)
    ]

    strides = np.cumprod((1,) + counts[:-1])
    facets = []
    for axis in range(dim):
        reference = _reference_facet(axis, spacing)
        ref_points, ref_weights = facet_rule(reference)
        facet_measure = float(ref_weights.sum())
        unit = np.zeros(dim)
        unit[axis] = 1.0
        half = 0.5 * spacing[axis] * unit

        def make(kind, cells_pair, centroid, normal, h_e=0.0):
            return Facet(
                kind=kind,
                cells=cells_pair,
                measure=facet_measure,
                centroid=centroid,
                normal=normal,
                quad_points=ref_points + centroid,
                quad_weights=ref_weights.copy(),
                vertices=reference + centroid,
                h_e=h_e,
            )

        for i in range(points.n):
            position = index_grid[i, axis]
            centroid = positions[i] + half
            if position < counts[axis] - 1:
                j = i + int(strides[axis])
                facets.append(
                    make(FacetKind.INTERNAL, (i, j), centroid, unit.copy(), float(spacing[axis]))
                )
            else:
                facets.append(make(FacetKind.EXTERNAL, (i,), centroid, unit.copy()))
            if position == 0:
                facets.append(make(FacetKind.EXTERNAL, (i,), positions[i] - half, -unit))

    partition = CellPartition.build(points, cells, facets)
    logger.info(
        f"Voxel partition: {points.n} points, {len(partition.internal_facets)} internal "
        f"and {len(partition.external_facets)} external facets"
    )
    return points, partition
