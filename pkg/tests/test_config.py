from pathlib import Path

import pytest
from fpm_cardio.config import (
    GeometryConfig,
    PhysicsConfig,
    ProbeConfig,
    RegionConfig,
    SimulationConfig,
    StimulusConfig,
    dump_config,
    mm_to_cm,
    parse_config,
    with_absolute_paths,
)
from fpm_cardio.errors import ConfigError

# Square tissue of 40 x 40 mm paced from its left edge.
TISSUE_CONFIG = """
threads = 2

[geometry]
kind = "grid"
size_mm = [40.0, 40.0]
spacing_mm = 0.5

[physics]
d0 = 0.0013
rho = 0.15
fiber = [1.0, 0.0]

[fpm]
penalty = 2.0

[time]
dt = 0.05
total = 500.0
splitting = "strang"
reaction_scheme = "heun"
theta = 0.5

[ionic]
model = "ms"
parameters = { tau_close = 150.0 }

[[stimulus]]
threshold_multiple = 2.0
duration = 1.0
period = 500.0

[stimulus.region]
upper_mm = [1.0]

[[probes]]
name = "P1"
position_mm = [10.0, 20.0]

[output]
directory = "results"
formats = ["vtk", "csv"]
"""


def test_defaults():
    config = SimulationConfig()
    assert config.geometry.size_mm == [40.0, 40.0]
    assert config.geometry.spacing_mm == 0.5
    assert config.physics.d0 == 0.0013
    assert config.physics.rho == 0.15
    assert config.time.dt == 0.1
    assert config.time.splitting == "godunov"
    assert config.ionic.model == "mitchell_schaeffer"
    assert config.output.formats == ["vtk"]
    assert not config.deterministic


def test_parse_tissue_config(write_config):
    config = parse_config(write_config(TISSUE_CONFIG))
    assert config.threads == 2
    assert config.geometry.counts == [80, 80]
    assert config.fpm.penalty == 2.0
    assert config.time.splitting == "strang"
    assert config.ionic.parameters == {"tau_close": 150.0}
    (stimulus,) = config.stimulus
    assert stimulus.amplitude is None
    assert stimulus.threshold_multiple == 2.0
    assert stimulus.region.upper_mm == [1.0]
    assert config.probes[0].position_mm == [10.0, 20.0]


def test_round_trip(write_config, tmp_path):
    config = parse_config(write_config(TISSUE_CONFIG))
    path = dump_config(config, tmp_path / "copy" / "run.toml")
    assert parse_config(path) == config


class TestErrors:
    def test_rho_reports_key_and_line(self, write_config):
        path = write_config(TISSUE_CONFIG.replace("rho = 0.15", "rho = 1.5"))
        with pytest.raises(ConfigError) as error:
            parse_config(path)
        assert error.value.key == "physics.rho"
        assert error.value.line == 11
        assert "[physics.rho] (line 11)" in str(error.value)

    def test_unknown_key(self, write_config):
        path = write_config(TISSUE_CONFIG.replace("penalty = 2.0", "penalty = 2.0\nalpha = 1"))
        with pytest.raises(ConfigError, match="unknown key") as error:
            parse_config(path)
        assert error.value.key == "fpm.alpha"

    def test_invalid_toml(self, write_config):
        with pytest.raises(ConfigError, match="invalid TOML") as error:
            parse_config(write_config("[geometry\nkind = 1\n"))
        assert error.value.line == 1

    def test_missing_referenced_file(self, write_config):
        path = write_config(
            """
            [geometry]
            kind = "voronoi"
            size_mm = [10.0, 10.0]
            points_file = "points.txt"
            """
        )
        with pytest.raises(ConfigError, match="not found") as error:
            parse_config(path)
        assert error.value.key == "geometry.points_file"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_config(tmp_path / "missing.toml")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"size_mm": [10.0, 10.0], "spacing_mm": 0.3},
            {"size_mm": [0.5, 10.0], "spacing_mm": 0.5},
            {"size_mm": [10.0], "spacing_mm": 0.5},
            {"size_mm": [10.0, 10.0], "spacing_mm": -0.5},
            {"kind": "mesh"},
        ],
    )
    def test_invalid_grid(self, kwargs):
        with pytest.raises(ConfigError):
            GeometryConfig(**kwargs)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "voronoi"},
            {"kind": "voronoi", "n_points": 100, "points_file": "p.txt"},
            {"kind": "voronoi", "n_points": 100, "size_mm": [1.0, 1.0, 1.0]},
            {"kind": "voronoi", "n_points": 2},
            {"kind": "file"},
        ],
    )
    def test_invalid_point_sources(self, kwargs):
        with pytest.raises(ConfigError):
            GeometryConfig(**kwargs)

    def test_stimulus_amplitude_sources(self):
        region = RegionConfig(upper_mm=[1.0])
        with pytest.raises(ConfigError):
            StimulusConfig(region=region, amplitude=50.0, threshold_multiple=2.0)
        with pytest.raises(ConfigError):
            StimulusConfig(region=region, duration=5.0, period=5.0)
        assert StimulusConfig(region=region).amplitude == 50.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"shape": "box"},
            {"shape": "box", "upper_mm": [1.0, 2.0, 3.0, 4.0]},
            {"shape": "sphere", "center_mm": [1.0, 1.0]},
            {"shape": "sphere", "center_mm": [1.0, 1.0], "radius_mm": 0.0},
            {"shape": "cylinder", "upper_mm": [1.0]},
            {"upper_mm": [1.0], "diffusion_scale": -1.0},
        ],
    )
    def test_invalid_region(self, kwargs):
        with pytest.raises(ConfigError):
            RegionConfig(**kwargs)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"name": "left probe", "node": 1},
            {"name": "a"},
            {"name": "a", "node": 1, "position_mm": [1.0, 1.0]},
            {"name": "a", "node": -1},
        ],
    )
    def test_invalid_probe(self, kwargs):
        with pytest.raises(ConfigError):
            ProbeConfig(**kwargs)

    def test_duplicate_probe_names(self):
        probes = [ProbeConfig(name="a", node=0), ProbeConfig(name="a", node=1)]
        with pytest.raises(ConfigError, match="unique"):
            SimulationConfig(probes=probes)

    def test_fiber_dimension(self):
        with pytest.raises(ConfigError, match="3 components"):
            SimulationConfig(
                geometry=GeometryConfig(size_mm=[5.0, 5.0, 5.0]),
                physics=PhysicsConfig(fiber=[1.0, 0.0]),
            )


def test_mm_to_cm():
    assert mm_to_cm(5.0) == 0.5
    assert mm_to_cm([10.0, [20.0, 30.0]]) == [1.0, [2.0, 3.0]]


def test_absolute_paths(write_config, tmp_path):
    (tmp_path / "points.txt").write_text("0.1 0.1\n0.5 0.5\n0.9 0.2\n")
    path = write_config(
        """
        [geometry]
        kind = "voronoi"
        size_mm = [10.0, 10.0]
        points_file = "points.txt"
        """
    )
    config = parse_config(path)
    assert config.resolve(config.geometry.points_file) == tmp_path / "points.txt"
    moved = with_absolute_paths(config)
    assert Path(moved.geometry.points_file).is_absolute()
    assert Path(moved.geometry.points_file).is_file()
