import textwrap
from pathlib import Path

import numpy as np
import pytest
from fpm_cardio.assembly import DiffusionTensorField, assemble_global
from fpm_cardio.geometry import build_supports
from fpm_cardio.shape import build_shape_functions
from fpm_cardio.voronoi import build_voronoi_partition_2d, rectangle
from fpm_cardio.voxel import build_voxel_partition


def assemble_operators(
    partition,
    d0=0.0013,
    rho=1.0,
    fiber=None,
    p=1.0,
    lumped=False,
    deterministic=True,
    threads=1,
):
    """Supports, shape functions and global operators of a partition."""
    supports = build_supports(partition, threads=threads)
    shapes = build_shape_functions(partition, supports, threads=threads)
    if fiber is None:
        fiber = np.eye(partition.dim)[0]
    tensors = DiffusionTensorField.from_fibers(np.asarray(fiber), d0, rho, n=partition.n)
    return assemble_global(
        partition,
        shapes,
        tensors,
        p,
        lumped=lumped,
        deterministic=deterministic,
        threads=threads,
    )


@pytest.fixture
def grid_partition():
    """4 x 4 pixels of 1 mm."""
    _, partition = build_voxel_partition((4, 4), 0.1)
    return partition


@pytest.fixture
def cube_partition():
    _, partition = build_voxel_partition((3, 3, 3), 0.1)
    return partition


@pytest.fixture
def random_partition():
    rng = np.random.default_rng(7)
    points = rng.uniform(0.02, 0.98, size=(50, 2))
    return build_voronoi_partition_2d(points, rectangle((0.0, 0.0), (1.0, 1.0)))


@pytest.fixture
def assemble():
    return assemble_operators


@pytest.fixture
def grid_operators(grid_partition):
    return assemble_operators(grid_partition)


@pytest.fixture
def write_config(tmp_path):
    """Writes a TOML run configuration into the test directory."""

    def _write(text: str, name: str = "run.toml") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text))
        return path

    return _write


# A 4 x 1 mm strip that activates end to end within 20 ms.
STRIP_CONFIG = """
deterministic = true

[geometry]
kind = "grid"
size_mm = [4.0, 1.0]
spacing_mm = 0.25

[physics]
d0 = 0.0013
rho = 0.15
fiber = [1.0, 0.0]

[time]
dt = 0.1
total = 20.0

[ionic]
model = "mitchell_schaeffer"

[[stimulus]]
amplitude = 50.0
duration = 2.0
period = 1000.0

[stimulus.region]
shape = "box"
upper_mm = [0.5]

[[probes]]
name = "left"
position_mm = [1.125, 0.375]

[[probes]]
name = "right"
position_mm = [3.125, 0.375]

[output]
directory = "out"
snapshot_interval = 10.0
formats = ["vtk", "csv"]
"""


@pytest.fixture
def strip_config(write_config):
    return write_config(STRIP_CONFIG)
