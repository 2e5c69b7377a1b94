"""Point-based affine trial functions built by generalised finite differences.

For a point ``x0`` with support neighbors ``x1..xm`` the gradient of the
trial function is the weighted least-squares fit ``B @ V_E`` with
``V_E = [V0, V1, ..., Vm]`` and

    B = (A^T W A)^-1 A^T W [-1 | I],   A = [x_i - x0]

so that ``V_h(x) = N(x) @ V_E`` with ``N(x) = (x - x0)^T B + [1, 0, ..., 0]``.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import SUPPORT_CONDITION_LIMIT
from .errors import ContractError, DegenerateSupportError
from .geometry import CellPartition, SupportDomain
from .utils import parallel_process

logger = logging.getLogger("fpm_cardio")


@dataclass(frozen=True)
class ShapeFunction:
    center: int
    neighbors: Tuple[int, ...]
    B: np.ndarray
    x0: np.ndarray

    @property
    def support(self) -> Tuple[int, ...]:
        """Global indices matching the columns of ``B``."""
        return (self.center,) + self.neighbors

    @property
    def size(self) -> int:
        return self.B.shape[1]

    @property
    def dim(self) -> int:
        return self.B.shape[0]


def build_gfd_matrix(
    x0: np.ndarray,
    neighbor_coords: np.ndarray,
    weights: Optional[np.ndarray] = None,
    center: int = -1,
    neighbors: Sequence[int] = (),
) -> ShapeFunction:
    """GFD gradient matrix of one support.

    ``weights`` is the hook for distance-based weight functions; the
    default is the constant weight 1 for every neighbor.
    """
    x0 = np.asarray(x0, dtype=float)
    A = np.asarray(neighbor_coords, dtype=float) - x0
    m, dim = A.shape
    if m < dim:
        raise DegenerateSupportError(f"support of point {center} has {m} < {dim} neighbors")
    root_w = np.ones(m) if weights is None else np.sqrt(np.asarray(weights, dtype=float))

    # SVD of W^1/2 A: pinv(W^1/2 A) W^1/2 = (A^T W A)^-1 A^T W
    u, s, vt = np.linalg.svd(root_w[:, None] * A, full_matrices=False)
    condition = float((s[0] / s[-1]) ** 2) if s[-1] > 0 else float("inf")
    if condition > SUPPORT_CONDITION_LIMIT:
        raise DegenerateSupportError(
            f"GFD normal matrix of point {center} has condition number {condition:.3g}",
            condition=condition,
        )
    G = (vt.T / s) @ u.T * root_w[None, :]

    B = np.empty((dim, m + 1))
    B[:, 0] = -G.sum(axis=1)
    B[:, 1:] = G
    B.setflags(write=False)
    x0 = x0.copy()
    x0.setflags(write=False)
    if not neighbors:
        neighbors = tuple(range(m))
    return ShapeFunction(center=center, neighbors=tuple(neighbors), B=B, x0=x0)


def eval_shape(sf: ShapeFunction, x: np.ndarray) -> np.ndarray:
    """Shape row ``N(x)``; ``x`` may be one point or an array of points
    (one row of N per point)."""
    x = np.asarray(x, dtype=float)
    N = (x - sf.x0) @ sf.B
    N[..., 0] += 1.0
    return N


def eval_gradient(sf: ShapeFunction, V_E: np.ndarray) -> np.ndarray:
    V_E = np.asarray(V_E, dtype=float)
    if V_E.shape[0] != sf.size:
        raise ContractError(
            f"point {sf.center}: expected {sf.size} support values, got {V_E.shape[0]}"
        )
    return sf.B @ V_E


def build_shape_functions(
    partition: CellPartition,
    supports: Sequence[SupportDomain],
    threads: int = 1,
) -> List[ShapeFunction]:
    positions = partition.points.positions

    def build(support: SupportDomain) -> ShapeFunction:
        return build_gfd_matrix(
            positions[support.center],
            positions[list(support.neighbors)],
            center=support.center,
            neighbors=support.neighbors,
        )

    shapes = parallel_process(supports, build, max_workers=threads)
    logger.debug(f"Built {len(shapes)} shape functions")
    return shapes
