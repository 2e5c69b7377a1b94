import logging
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .config import DENSE_EIGEN_LIMIT
from .errors import AssemblyError, ConfigError, ContractError
from .geometry import Cell, CellPartition, Facet, SupportDomain
from .shape import ShapeFunction, eval_shape
from .utils import parallel_process

logger = logging.getLogger("fpm_cardio")


def build_diffusion_tensor(f: np.ndarray, d0: float, rho: float) -> np.ndarray:
    """D = d0 [(1 - rho) f (x) f + rho I] for a fiber direction ``f``."""
    if not d0 > 0:
        raise ConfigError(f"d0 must be positive, got {d0}", key="d0")
    if not 0 < rho <= 1:
        raise ConfigError(f"rho must lie in (0, 1], got {rho}", key="rho")
    f = np.asarray(f, dtype=float)
    length = float(np.linalg.norm(f))
    if abs(length - 1.0) > 1e-8:
        if abs(length - 1.0) > 1e-3:
            raise ConfigError(f"fiber direction {f.tolist()} is not a unit vector", key="fiber")
        logger.warning(f"Normalizing fiber direction {f.tolist()} (length {length:.6g})")
        f = f / length
    return d0 * ((1.0 - rho) * np.outer(f, f) + rho * np.eye(len(f)))


@dataclass
class DiffusionTensorField:
    """One constant tensor per cell, evaluated at the owner point."""

    tensors: np.ndarray
    fibers: np.ndarray
    d0: float
    rho: float

    @classmethod
    def from_fibers(
        cls,
        fibers: np.ndarray,
        d0: float,
        rho: float,
        n: Optional[int] = None,
        scale: Optional[np.ndarray] = None,
    ) -> "DiffusionTensorField":
        """Tensors from one fiber per point (or one fiber for all ``n`` points).

        ``scale`` multiplies each point's tensor; 0 marks non-conducting
        tissue such as scar.
        """
        fibers = np.asarray(fibers, dtype=float)
        if fibers.ndim == 1:
            if n is None:
                raise ConfigError("a constant fiber needs the number of points")
            fibers = np.tile(fibers, (n, 1))
        if len({tuple(f) for f in fibers}) == 1:
            tensor = build_diffusion_tensor(fibers[0], d0, rho)
            tensors = np.broadcast_to(tensor, (len(fibers),) + tensor.shape).copy()
        else:
            tensors = np.array([build_diffusion_tensor(f, d0, rho) for f in fibers])
        if scale is not None:
            scale = np.asarray(scale, dtype=float)
            if np.any(scale < 0):
                raise ConfigError("conduction scale factors must be >= 0")
            tensors = tensors * scale[:, None, None]
        return cls(tensors=tensors, fibers=fibers, d0=d0, rho=rho)

    @property
    def mean_diagonal(self) -> np.ndarray:
        return np.trace(self.tensors, axis1=1, axis2=2) / self.tensors.shape[1]


@dataclass
class PenaltyField:
    p: float
    facets: np.ndarray
    eta: np.ndarray


def compute_eta(
    p: float,
    support: SupportDomain,
    cell_measures: np.ndarray,
    tensors: np.ndarray,
) -> float:
    """Penalty parameter of a support: p times the measure-weighted mean of
    the tensor diagonals over its neighbor cells."""
    if not p > 0:
        raise ConfigError(f"penalty coefficient must be positive, got {p}", key="penalty")
    neighbors = list(support.neighbors)
    measures = np.asarray(cell_measures, dtype=float)[neighbors]
    d_bar = np.trace(np.asarray(tensors)[neighbors], axis1=1, axis2=2) / tensors.shape[-1]
    return float(p * np.dot(measures, d_bar) / measures.sum())


def _symmetric(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def point_capacity_matrix(cell: Cell, sf: ShapeFunction) -> np.ndarray:
    """C_E, the integral of N^T N over the cell."""
    if cell.owner != sf.center:
        raise ContractError(f"cell of point {cell.owner} paired with shape of point {sf.center}")
    points, weights = cell.quadrature()
    N = eval_shape(sf, points)
    return _symmetric(N.T @ (weights[:, None] * N))


def point_diffusion_matrix(cell: Cell, sf: ShapeFunction, D: np.ndarray) -> np.ndarray:
    """K_E = |E| B^T D B; exact because B is constant over the cell."""
    if cell.owner != sf.center:
        raise ContractError(f"cell of point {cell.owner} paired with shape of point {sf.center}")
    return _symmetric(cell.measure * sf.B.T @ D @ sf.B)


def internal_boundary_matrix(
    facet: Facet,
    sf1: ShapeFunction,
    sf2: ShapeFunction,
    D1: np.ndarray,
    D2: np.ndarray,
    eta: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Interior-penalty block of one internal facet.

    Returns the global indices (support of E1, then the new indices of the
    support of E2) and the symmetric block over them. Consistency terms use
    the facet centroid (affine integrands), penalty terms the facet's
    degree-2 rule.
    """
    if not facet.is_internal:
        raise ContractError("external facets carry no interior-penalty terms")
    if (sf1.center, sf2.center) != tuple(facet.cells):
        raise ContractError(
            f"facet cells {facet.cells} do not match shapes ({sf1.center}, {sf2.center})"
        )

    union = list(sf1.support)
    position = {g: k for k, g in enumerate(union)}
    for g in sf2.support:
        if g not in position:
            position[g] = len(union)
            union.append(g)
    size = len(union)
    P1 = np.zeros((sf1.size, size))
    P1[np.arange(sf1.size), [position[g] for g in sf1.support]] = 1.0
    P2 = np.zeros((sf2.size, size))
    P2[np.arange(sf2.size), [position[g] for g in sf2.support]] = 1.0

    n1 = facet.normal
    n2 = -n1
    B1 = sf1.B @ P1
    B2 = sf2.B @ P2

    # Shape rows at the centroid (1-point rule) and fluxes n^T D B.
    N1 = eval_shape(sf1, facet.centroid) @ P1
    N2 = eval_shape(sf2, facet.centroid) @ P2
    q1_n1 = n1 @ D1 @ B1
    q2_n2 = n2 @ D2 @ B2
    q2_n1 = n1 @ D2 @ B2
    q1_n2 = n2 @ D1 @ B1

    consistency = (
        np.outer(N1, q1_n1) + np.outer(q1_n1, N1)
        + np.outer(N2, q2_n2) + np.outer(q2_n2, N2)
        + np.outer(N1, q2_n1) + np.outer(q1_n2, N2)
        + np.outer(N2, q1_n2) + np.outer(q2_n1, N1)
    )
    block = -0.5 * facet.measure * consistency

    Q1 = eval_shape(sf1, facet.quad_points) @ P1
    Q2 = eval_shape(sf2, facet.quad_points) @ P2
    w = facet.quad_weights[:, None]
    penalty = Q1.T @ (w * Q1) + Q2.T @ (w * Q2) - Q1.T @ (w * Q2) - Q2.T @ (w * Q1)
    block += (eta / facet.h_e) * penalty
    return np.asarray(union), _symmetric(block)


@dataclass
class GlobalOperators:
    C: sp.csr_matrix
    K: sp.csr_matrix
    n: int
    lumped: bool = False
    penalty: Optional[PenaltyField] = None

    @cached_property
    def lumped_capacity(self) -> np.ndarray:
        """Row sums of C (the diagonal itself when C is already lumped)."""
        return np.asarray(self.C.sum(axis=1)).ravel()

    def norm_inf(self) -> float:
        return float(abs(self.K).sum(axis=1).max())

    def symmetry_error(self) -> float:
        return float(abs(self.K - self.K.T).sum(axis=1).max())

    def nullspace_error(self) -> float:
        return float(np.abs(self.K @ np.ones(self.n)).max())

    def min_eigenvalue(self) -> float:
        if self.n <= DENSE_EIGEN_LIMIT:
            return float(np.linalg.eigvalsh(self.K.toarray()).min())
        return float(eigsh(self.K, k=1, which="SA", return_eigenvectors=False)[0])


def _scatter(
    blocks: Sequence[Tuple[np.ndarray, np.ndarray]], n: int, deterministic: bool
) -> sp.csr_matrix:
    if not blocks:
        return sp.csr_matrix((n, n))
    rows = np.concatenate([np.repeat(idx, len(idx)) for idx, _ in blocks])
    cols = np.concatenate([np.tile(idx, len(idx)) for idx, _ in blocks])
    vals = np.concatenate([block.ravel() for _, block in blocks])
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        raise AssemblyError(f"global index out of range [0, {n}) during assembly")
    if deterministic:
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    return matrix


def assemble_global(
    partition: CellPartition,
    shapes: Sequence[ShapeFunction],
    tensors: DiffusionTensorField,
    p: float,
    lumped: bool = False,
    deterministic: bool = False,
    threads: int = 1,
) -> GlobalOperators:
    """Global capacity C and diffusion K from all point and facet matrices.

    With ``deterministic`` the per-item blocks are gathered in input order
    and merged after a lexicographic sort, so repeated runs are
    bit-identical whatever the thread count.
    """
    started = time.perf_counter()
    n = partition.n
    if len(shapes) != n:
        raise AssemblyError(f"{len(shapes)} shape functions for {n} points")
    D = tensors.tensors
    measures = partition.cell_measures

    point_eta = np.array(
        [
            compute_eta(p, SupportDomain(sf.center, sf.neighbors), measures, D)
            for sf in shapes
        ]
    )

    def cell_blocks(i: int):
        cell = partition.cells[i]
        sf = shapes[i]
        idx = np.asarray(sf.support)
        return (
            (idx, point_capacity_matrix(cell, sf)),
            (idx, point_diffusion_matrix(cell, sf, D[i])),
        )

    internal = partition.internal_facets
    facet_eta = np.array([point_eta[partition.facets[k].cells[0]] for k in internal])

    def facet_block(k: int):
        facet = partition.facets[internal[k]]
        a, b = facet.cells
        return internal_boundary_matrix(
            facet, shapes[a], shapes[b], D[a], D[b], facet_eta[k]
        )

    per_cell = parallel_process(range(n), cell_blocks, max_workers=threads, ordered=deterministic)
    per_facet = parallel_process(
        range(len(internal)), facet_block, max_workers=threads, ordered=deterministic
    )

    C = _scatter([c for c, _ in per_cell], n, deterministic)
    K = _scatter([k for _, k in per_cell] + list(per_facet), n, deterministic)

    if lumped:
        diagonal = np.asarray(C.sum(axis=1)).ravel()
        if np.any(diagonal <= 0):
            bad = int(np.flatnonzero(diagonal <= 0)[0])
            raise AssemblyError(f"row-sum lumped capacity of point {bad} is {diagonal[bad]}")
        C = sp.diags(diagonal, format="csr")

    logger.info(
        f"Assembled operators for {n} points: nnz(K) = {K.nnz}, "
        f"{time.perf_counter() - started:.2f} s"
    )
    return GlobalOperators(
        C=C,
        K=K,
        n=n,
        lumped=lumped,
        penalty=PenaltyField(p=p, facets=np.asarray(internal), eta=facet_eta),
    )
