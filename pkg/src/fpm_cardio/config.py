import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import tomli_w

from .errors import ConfigError, OutputError

# Geometry and GFD tolerances (lengths in cm)
COINCIDENCE_TOL: float = 1e-12
SUPPORT_CONDITION_LIMIT: float = 1e12
MAX_RING_DEPTH: int = 3

# Operators up to this size get a dense eigenvalue check
DENSE_EIGEN_LIMIT: int = 2000

GEOMETRY_KINDS = ["grid", "voronoi", "file"]
SPLITTING_METHODS = ["godunov", "strang"]
DIFFUSION_SCHEMES = ["explicit", "theta"]
REACTION_SCHEMES = ["euler", "heun"]
SNAPSHOT_FORMATS = ["vtk", "csv"]
REGION_SHAPES = ["box", "sphere"]

DEFAULT_SIZE_MM: List[float] = [40.0, 40.0]
DEFAULT_SPACING_MM: float = 0.5
DEFAULT_D0: float = 0.0013  # cm^2/ms
DEFAULT_RHO: float = 0.15
DEFAULT_PENALTY: float = 1.0
DEFAULT_DT: float = 0.1  # ms
DEFAULT_TOTAL: float = 100.0  # ms
DEFAULT_THETA: float = 1.0
DEFAULT_TOLERANCE: float = 1e-10
DEFAULT_MAX_ITERATIONS: int = 1000
DEFAULT_IONIC_MODEL: str = "mitchell_schaeffer"
DEFAULT_STIMULUS_AMPLITUDE: float = 50.0  # mV/ms
DEFAULT_OUTPUT_DIRECTORY: str = "output"
DEFAULT_RECORD_INTERVAL: float = 0.1  # ms
DEFAULT_FORMATS: List[str] = ["vtk"]

RUN_CONFIG_NAME = "run.toml"

Number = Union[int, float]


def mm_to_cm(value: Union[Number, Sequence]) -> Any:
    """Convert a length (or nested list of lengths) from mm to cm."""
    if isinstance(value, (list, tuple)):
        return [mm_to_cm(v) for v in value]
    return float(value) / 10.0


def _number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key=key)
    return float(value)


def _integer(value: Any, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", key=key)
    return value


def _vector(value: Any, key: str, sizes: Sequence[int] = (2, 3)) -> List[float]:
    if not isinstance(value, (list, tuple)) or len(value) not in sizes:
        raise ConfigError(f"expected a list of {' or '.join(map(str, sizes))} numbers", key=key)
    return [_number(v, key) for v in value]


def _choice(value: Any, choices: Sequence[str], key: str) -> str:
    if value not in choices:
        raise ConfigError(f"{value!r} is not one of {', '.join(choices)}", key=key)
    return value


def _positive(value: Any, key: str) -> float:
    number = _number(value, key)
    if not number > 0:
        raise ConfigError(f"must be positive, got {number}", key=key)
    return number


@dataclass
class RegionConfig:
    """Box (``lower_mm``/``upper_mm``, open sides allowed) or sphere region."""

    shape: str = "box"
    lower_mm: Optional[List[float]] = None
    upper_mm: Optional[List[float]] = None
    center_mm: Optional[List[float]] = None
    radius_mm: Optional[float] = None
    diffusion_scale: Optional[float] = None

    def __post_init__(self):
        self.shape = _choice(self.shape, REGION_SHAPES, "shape")
        if self.shape == "box":
            if self.lower_mm is None and self.upper_mm is None:
                raise ConfigError("a box region needs lower_mm or upper_mm", key="lower_mm")
            if self.lower_mm is not None:
                self.lower_mm = _vector(self.lower_mm, "lower_mm", (1, 2, 3))
            if self.upper_mm is not None:
                self.upper_mm = _vector(self.upper_mm, "upper_mm", (1, 2, 3))
        else:
            if self.center_mm is None or self.radius_mm is None:
                raise ConfigError("a sphere region needs center_mm and radius_mm", key="center_mm")
            self.center_mm = _vector(self.center_mm, "center_mm")
            self.radius_mm = _positive(self.radius_mm, "radius_mm")
        if self.diffusion_scale is not None:
            self.diffusion_scale = _number(self.diffusion_scale, "diffusion_scale")
            if self.diffusion_scale < 0:
                raise ConfigError("must be >= 0", key="diffusion_scale")


@dataclass
class GeometryConfig:
    kind: str = "grid"
    size_mm: List[float] = field(default_factory=lambda: DEFAULT_SIZE_MM.copy())
    spacing_mm: float = DEFAULT_SPACING_MM
    origin_mm: Optional[List[float]] = None
    # Voronoi geometries: explicit points file (cm) or random points
    points_file: Optional[str] = None
    n_points: Optional[int] = None
    seed: int = 0
    boundary_mm: Optional[List[List[float]]] = None
    partition_file: Optional[str] = None

    def __post_init__(self):
        self.kind = _choice(self.kind, GEOMETRY_KINDS, "kind")
        self.size_mm = [_positive(v, "size_mm") for v in _vector(self.size_mm, "size_mm")]
        self.spacing_mm = _positive(self.spacing_mm, "spacing_mm")
        self.seed = _integer(self.seed, "seed")
        if self.origin_mm is not None:
            self.origin_mm = _vector(self.origin_mm, "origin_mm", (len(self.size_mm),))
        if self.boundary_mm is not None:
            if not isinstance(self.boundary_mm, list) or len(self.boundary_mm) < 3:
                raise ConfigError("expected at least 3 [x, y] vertices", key="boundary_mm")
            self.boundary_mm = [_vector(v, "boundary_mm", (2,)) for v in self.boundary_mm]

        if self.kind == "grid":
            for extent in self.size_mm:
                cells = extent / self.spacing_mm
                if abs(cells - round(cells)) > 1e-9 * max(cells, 1.0) or round(cells) < 2:
                    raise ConfigError(
                        f"size {extent} mm is not a multiple (>= 2) of "
                        f"spacing {self.spacing_mm} mm",
                        key="size_mm",
                    )
        elif self.kind == "voronoi":
            if len(self.size_mm) != 2:
                raise ConfigError("Voronoi geometries are 2D", key="size_mm")
            if (self.points_file is None) == (self.n_points is None):
                raise ConfigError("give exactly one of points_file or n_points", key="points_file")
            if self.n_points is not None and _integer(self.n_points, "n_points") < 3:
                raise ConfigError("at least 3 points are needed", key="n_points")
        elif self.partition_file is None:
            raise ConfigError("a file geometry needs partition_file", key="partition_file")

    @property
    def dim(self) -> Optional[int]:
        """Spatial dimension; imported partitions only know it once read."""
        return None if self.kind == "file" else len(self.size_mm)

    @property
    def counts(self) -> List[int]:
        return [int(round(extent / self.spacing_mm)) for extent in self.size_mm]


@dataclass
class PhysicsConfig:
    d0: float = DEFAULT_D0
    rho: float = DEFAULT_RHO
    fiber: Optional[List[float]] = None
    fiber_file: Optional[str] = None
    regions: List[RegionConfig] = field(default_factory=list)

    def __post_init__(self):
        self.d0 = _positive(self.d0, "d0")
        self.rho = _number(self.rho, "rho")
        if not 0 < self.rho <= 1:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}", key="rho")
        if self.fiber is not None and self.fiber_file is not None:
            raise ConfigError("give fiber or fiber_file, not both", key="fiber")
        if self.fiber is not None:
            self.fiber = _vector(self.fiber, "fiber")
        for k, region in enumerate(self.regions):
            if region.diffusion_scale is None:
                raise ConfigError("conduction regions need diffusion_scale", key=f"regions.{k}")


@dataclass
class FpmConfig:
    penalty: float = DEFAULT_PENALTY
    lumped_mass: bool = False

    def __post_init__(self):
        self.penalty = _positive(self.penalty, "penalty")
        if not isinstance(self.lumped_mass, bool):
            raise ConfigError("expected true or false", key="lumped_mass")


@dataclass
class TimeConfig:
    dt: float = DEFAULT_DT
    total: float = DEFAULT_TOTAL
    splitting: str = "godunov"
    scheme: str = "theta"
    theta: float = DEFAULT_THETA
    reaction_scheme: str = "euler"
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        self.dt = _positive(self.dt, "dt")
        self.total = _number(self.total, "total")
        if self.total < 0:
            raise ConfigError("must be >= 0", key="total")
        self.splitting = _choice(self.splitting, SPLITTING_METHODS, "splitting")
        self.scheme = _choice(self.scheme, DIFFUSION_SCHEMES, "scheme")
        self.reaction_scheme = _choice(self.reaction_scheme, REACTION_SCHEMES, "reaction_scheme")
        self.theta = _number(self.theta, "theta")
        if not 0 < self.theta <= 1:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}", key="theta")
        self.tolerance = _number(self.tolerance, "tolerance")
        if not 0 < self.tolerance <= 1e-2:
            raise ConfigError(
                f"tolerance must lie in (0, 1e-2], got {self.tolerance}", key="tolerance"
            )
        if _integer(self.max_iterations, "max_iterations") < 1:
            raise ConfigError("must be >= 1", key="max_iterations")


@dataclass
class IonicConfig:
    model: str = DEFAULT_IONIC_MODEL
    parameters: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.parameters, dict):
            raise ConfigError("expected a table of numbers", key="parameters")
        self.parameters = {
            name: _number(value, f"parameters.{name}") for name, value in self.parameters.items()
        }


@dataclass
class StimulusConfig:
    region: RegionConfig
    amplitude: Optional[float] = None  # mV/ms
    # Amplitude as a multiple of the single-cell diastolic threshold
    threshold_multiple: Optional[float] = None
    duration: float = 1.0
    period: float = 1000.0
    start: float = 0.0
    beats: Optional[int] = None

    def __post_init__(self):
        if self.amplitude is not None and self.threshold_multiple is not None:
            raise ConfigError("give amplitude or threshold_multiple, not both", key="amplitude")
        if self.threshold_multiple is not None:
            self.threshold_multiple = _positive(self.threshold_multiple, "threshold_multiple")
        elif self.amplitude is None:
            self.amplitude = DEFAULT_STIMULUS_AMPLITUDE
        if self.amplitude is not None:
            self.amplitude = _number(self.amplitude, "amplitude")
        self.duration = _positive(self.duration, "duration")
        self.period = _positive(self.period, "period")
        self.start = _number(self.start, "start")
        if self.start < 0:
            raise ConfigError("must be >= 0", key="start")
        if self.duration >= self.period:
            raise ConfigError("duration must be shorter than period", key="duration")
        if self.beats is not None and _integer(self.beats, "beats") < 1:
            raise ConfigError("must be >= 1", key="beats")


@dataclass
class ProbeConfig:
    name: str
    position_mm: Optional[List[float]] = None
    node: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", self.name):
            raise ConfigError(
                f"probe names are file-name safe words, got {self.name!r}", key="name"
            )
        if (self.position_mm is None) == (self.node is None):
            raise ConfigError("give exactly one of position_mm or node", key="position_mm")
        if self.position_mm is not None:
            self.position_mm = _vector(self.position_mm, "position_mm")
        if self.node is not None and _integer(self.node, "node") < 0:
            raise ConfigError("must be >= 0", key="node")


@dataclass
class OutputConfig:
    directory: str = DEFAULT_OUTPUT_DIRECTORY
    snapshot_interval: Optional[float] = None
    record_interval: float = DEFAULT_RECORD_INTERVAL
    formats: List[str] = field(default_factory=lambda: DEFAULT_FORMATS.copy())
    lat_threshold: Optional[float] = None
    cv_axis: int = 0
    checkpoint_interval: Optional[float] = None

    def __post_init__(self):
        if self.snapshot_interval is not None:
            self.snapshot_interval = _positive(self.snapshot_interval, "snapshot_interval")
        if self.checkpoint_interval is not None:
            self.checkpoint_interval = _positive(self.checkpoint_interval, "checkpoint_interval")
        self.record_interval = _positive(self.record_interval, "record_interval")
        if not isinstance(self.formats, list):
            raise ConfigError("expected a list", key="formats")
        self.formats = [_choice(f, SNAPSHOT_FORMATS, "formats") for f in self.formats]
        if self.lat_threshold is not None:
            self.lat_threshold = _number(self.lat_threshold, "lat_threshold")
        if _integer(self.cv_axis, "cv_axis") not in (0, 1, 2):
            raise ConfigError("must be 0, 1 or 2", key="cv_axis")


@dataclass
class SimulationConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    fpm: FpmConfig = field(default_factory=FpmConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    ionic: IonicConfig = field(default_factory=IonicConfig)
    stimulus: List[StimulusConfig] = field(default_factory=list)
    probes: List[ProbeConfig] = field(default_factory=list)
    output: OutputConfig = field(default_factory=OutputConfig)
    deterministic: bool = False
    threads: int = 1
    # Directory relative file names are resolved against; not serialized
    base_dir: Path = field(default_factory=lambda: Path("."), compare=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.deterministic, bool):
            raise ConfigError("expected true or false", key="deterministic")
        self.threads = _integer(self.threads, "threads")
        dim = self.geometry.dim
        if dim is not None:
            if self.physics.fiber is not None and len(self.physics.fiber) != dim:
                raise ConfigError(f"fiber must have {dim} components", key="physics.fiber")
            if self.output.cv_axis >= dim:
                raise ConfigError(
                    f"axis {self.output.cv_axis} does not exist in {dim}D", key="output.cv_axis"
                )
        names = [probe.name for probe in self.probes]
        if len(set(names)) != len(names):
            raise ConfigError("probe names must be unique", key="probes")
        if isinstance(self.base_dir, str):
            self.base_dir = Path(self.base_dir)

    def resolve(self, name: str) -> Path:
        """Path of a file named in the config, relative to the config file."""
        path = Path(name)
        return path if path.is_absolute() else self.base_dir / path


# Nested blocks of each config table
_NESTED = {
    SimulationConfig: {
        "geometry": GeometryConfig,
        "physics": PhysicsConfig,
        "fpm": FpmConfig,
        "time": TimeConfig,
        "ionic": IonicConfig,
        "output": OutputConfig,
    },
    StimulusConfig: {"region": RegionConfig},
}
_NESTED_LISTS = {
    SimulationConfig: {"stimulus": StimulusConfig, "probes": ProbeConfig},
    PhysicsConfig: {"regions": RegionConfig},
}


def _from_dict(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError("expected a table", key=prefix)
    known = {f.name for f in fields(cls) if f.name != "base_dir"}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", key=f"{prefix}.{key}" if prefix else key)

    def join(key: str) -> str:
        return f"{prefix}.{key}" if prefix else key

    values = {}
    for key, value in data.items():
        if key in _NESTED.get(cls, {}):
            values[key] = _from_dict(_NESTED[cls][key], value, join(key))
        elif key in _NESTED_LISTS.get(cls, {}):
            if not isinstance(value, list):
                raise ConfigError("expected an array of tables", key=join(key))
            values[key] = [
                _from_dict(_NESTED_LISTS[cls][key], item, f"{join(key)}.{k}")
                for k, item in enumerate(value)
            ]
        else:
            values[key] = value
    try:
        return cls(**values)
    except ConfigError as e:
        raise ConfigError(e.message, key=join(e.key) if e.key else prefix) from None
    except TypeError as e:
        raise ConfigError(f"missing required key ({e})", key=prefix) from None


def _line_of(text: str, key: str) -> Optional[int]:
    """Line of the first assignment to the last component of a dotted key."""
    names = [part for part in key.split(".") if not part.isdigit()]
    if not names:
        return None
    pattern = re.compile(rf"^\s*{re.escape(names[-1])}\s*=")
    for number, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return number
    return None


def config_from_dict(data: Dict[str, Any], base_dir: Path = Path(".")) -> SimulationConfig:
    config = _from_dict(SimulationConfig, data, "")
    config.base_dir = Path(base_dir)
    return config


def parse_config(path: Union[str, Path]) -> SimulationConfig:
    """Read and validate a TOML run configuration.

    Defaults are filled in, unknown keys are rejected with their dotted
    path, and every referenced file must exist.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ConfigError(
            f"invalid TOML: {e}", line=int(match.group(1)) if match else None
        ) from None

    try:
        config = config_from_dict(data, base_dir=path.parent)
    except ConfigError as e:
        raise ConfigError(e.message, key=e.key, line=_line_of(text, e.key)) from None

    referenced = {
        "geometry.points_file": config.geometry.points_file,
        "geometry.partition_file": config.geometry.partition_file,
        "physics.fiber_file": config.physics.fiber_file,
    }
    for key, name in referenced.items():
        if name is not None and not config.resolve(name).is_file():
            raise ConfigError(f"file {name} not found", key=key, line=_line_of(text, key))
    return config


def _drop_none(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _drop_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, list):
        return [_drop_none(v) for v in value]
    return value


def config_to_dict(config: SimulationConfig) -> Dict[str, Any]:
    """Plain TOML-ready tables; unset optional values are left out."""
    if not is_dataclass(config):
        raise ConfigError("not a SimulationConfig")
    data = asdict(config)
    data.pop("base_dir", None)
    return _drop_none(data)


def with_absolute_paths(config: SimulationConfig) -> SimulationConfig:
    """Copy whose file references no longer depend on the config location."""

    def absolute(name: Optional[str]) -> Optional[str]:
        return None if name is None else str(config.resolve(name).resolve())

    geometry = replace(
        config.geometry,
        points_file=absolute(config.geometry.points_file),
        partition_file=absolute(config.geometry.partition_file),
    )
    physics = replace(config.physics, fiber_file=absolute(config.physics.fiber_file))
    return replace(config, geometry=geometry, physics=physics)


def dump_config(config: SimulationConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            tomli_w.dump(config_to_dict(config), f)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path
