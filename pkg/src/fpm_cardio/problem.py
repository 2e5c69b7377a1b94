import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .assembly import DiffusionTensorField, GlobalOperators, assemble_global
from .config import SimulationConfig, mm_to_cm
from .errors import ConfigError
from .files import read_partition, read_points
from .geometry import CellPartition, build_supports
from .ionic import (
    IonicModel,
    StimulusProtocol,
    diastolic_threshold,
    get_ionic_model,
    region_from_config,
)
from .shape import ShapeFunction, build_shape_functions
from .stepper import TimeIntegrationPlan
from .voronoi import boundary_polygon, build_voronoi_partition_2d, domain_area, rectangle
from .voxel import build_voxel_partition

logger = logging.getLogger("fpm_cardio")


@dataclass
class Probe:
    name: str
    node: int
    position: np.ndarray


@dataclass
class Discretization:
    partition: CellPartition
    shapes: List[ShapeFunction]
    tensors: DiffusionTensorField
    operators: GlobalOperators


@dataclass
class Problem:
    """Everything a run needs, in solver units (cm, ms, mV)."""

    config: SimulationConfig
    discretization: Discretization
    model: IonicModel
    stimuli: List[StimulusProtocol]
    probes: List[Probe]
    plan: TimeIntegrationPlan
    lat_threshold: float

    @property
    def partition(self) -> CellPartition:
        return self.discretization.partition

    @property
    def operators(self) -> GlobalOperators:
        return self.discretization.operators

    @property
    def positions(self) -> np.ndarray:
        return self.partition.points.positions


def random_points(boundary: np.ndarray, n: int, seed: int) -> np.ndarray:
    """``n`` uniformly distributed points inside a polygon."""
    polygon = boundary_polygon(boundary)
    minx, miny, maxx, maxy = polygon.bounds
    rng = np.random.default_rng(seed)
    points = np.empty((0, 2))
    while len(points) < n:
        candidates = rng.uniform((minx, miny), (maxx, maxy), size=(2 * n, 2))
        inside = shapely.contains_xy(polygon, candidates[:, 0], candidates[:, 1])
        points = np.vstack([points, candidates[inside]])
    return points[:n]


def build_partition(
    config: SimulationConfig, threads: int = 1
) -> Tuple[CellPartition, Optional[float]]:
    """The cell partition of the configured geometry and, when known, the
    domain measure it must cover."""
    geometry = config.geometry
    if geometry.kind == "file":
        partition = read_partition(config.resolve(geometry.partition_file))
        return partition, None

    size = np.array(mm_to_cm(geometry.size_mm))
    origin = (
        np.array(mm_to_cm(geometry.origin_mm))
        if geometry.origin_mm is not None
        else np.zeros(len(size))
    )
    if geometry.kind == "grid":
        _, partition = build_voxel_partition(
            geometry.counts, mm_to_cm(geometry.spacing_mm), origin
        )
        return partition, float(np.prod(size))

    if geometry.boundary_mm is not None:
        boundary = np.array(mm_to_cm(geometry.boundary_mm))
    else:
        boundary = rectangle(tuple(origin), tuple(origin + size))
    if geometry.points_file is not None:
        points = read_points(config.resolve(geometry.points_file))
    else:
        points = random_points(boundary, geometry.n_points, geometry.seed)
    partition = build_voronoi_partition_2d(points, boundary, threads=threads)
    return partition, domain_area(boundary)


def build_tensors(config: SimulationConfig, partition: CellPartition) -> DiffusionTensorField:
    physics = config.physics
    positions = partition.points.positions
    n, dim = positions.shape
    if physics.fiber_file is not None:
        fibers = read_points(config.resolve(physics.fiber_file))
        if fibers.shape != (n, dim):
            raise ConfigError(
                f"fiber file has shape {fibers.shape}, expected ({n}, {dim})",
                key="physics.fiber_file",
            )
    elif physics.fiber is not None:
        fibers = np.array(physics.fiber)
        if len(fibers) != dim:
            raise ConfigError(f"fiber must have {dim} components", key="physics.fiber")
    else:
        fibers = np.eye(dim)[0]

    scale = np.ones(n)
    for region in physics.regions:
        scale[region_from_config(region).contains(positions)] = region.diffusion_scale
    if np.any(scale != 1.0):
        logger.info(f"{int(np.sum(scale != 1.0))} points have scaled conduction")
    return DiffusionTensorField.from_fibers(fibers, physics.d0, physics.rho, n=n, scale=scale)


def discretize(
    config: SimulationConfig,
    threads: Optional[int] = None,
    deterministic: Optional[bool] = None,
) -> Discretization:
    """Partition, supports, shape functions and global operators."""
    threads = config.threads if threads is None else threads
    deterministic = config.deterministic if deterministic is None else deterministic
    partition, measure = build_partition(config, threads)
    partition.validate(domain_measure=measure)
    supports = build_supports(partition, threads=threads)
    shapes = build_shape_functions(partition, supports, threads=threads)
    tensors = build_tensors(config, partition)
    operators = assemble_global(
        partition,
        shapes,
        tensors,
        config.fpm.penalty,
        lumped=config.fpm.lumped_mass,
        deterministic=deterministic,
        threads=threads,
    )
    return Discretization(partition=partition, shapes=shapes, tensors=tensors, operators=operators)


def locate_probes(config: SimulationConfig, positions: np.ndarray) -> List[Probe]:
    probes = []
    tree = cKDTree(positions)
    for k, probe in enumerate(config.probes):
        if probe.node is not None:
            if probe.node >= len(positions):
                raise ConfigError(
                    f"node {probe.node} does not exist ({len(positions)} nodes)",
                    key=f"probes.{k}.node",
                )
            node = probe.node
        else:
            target = np.array(mm_to_cm(probe.position_mm))
            if len(target) != positions.shape[1]:
                raise ConfigError("probe position has the wrong dimension", key=f"probes.{k}")
            node = int(tree.query(target)[1])
        probes.append(Probe(name=probe.name, node=node, position=positions[node].copy()))
    return probes


def build_problem(
    config: SimulationConfig,
    threads: Optional[int] = None,
    deterministic: Optional[bool] = None,
) -> Problem:
    discretization = discretize(config, threads, deterministic)
    positions = discretization.partition.points.positions

    model = get_ionic_model(config.ionic.model, **config.ionic.parameters)
    stimuli = []
    for k, stimulus in enumerate(config.stimulus):
        amplitude = None
        if stimulus.threshold_multiple is not None:
            amplitude = stimulus.threshold_multiple * diastolic_threshold(model, stimulus.duration)
            logger.info(f"Stimulus {k}: amplitude {amplitude:.4g} mV/ms")
        protocol = StimulusProtocol.from_config(stimulus, amplitude=amplitude)
        if not np.any(protocol.region.contains(positions)):
            logger.warning(f"Stimulus {k} region contains no points")
        stimuli.append(protocol)

    plan = TimeIntegrationPlan.from_config(config.time, config.output.record_interval)
    if plan.dt > model.max_dt:
        logger.warning(
            f"dt = {plan.dt} ms exceeds the documented maximum {model.max_dt} ms of {model.name}"
        )
    threshold = config.output.lat_threshold
    if threshold is None:
        threshold = 0.5 * (model.v_rest + model.v_peak)

    return Problem(
        config=config,
        discretization=discretization,
        model=model,
        stimuli=stimuli,
        probes=locate_probes(config, positions),
        plan=plan,
        lat_threshold=threshold,
    )
