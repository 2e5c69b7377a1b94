import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .config import RUN_CONFIG_NAME, parse_config
from .errors import PostProcessingError
from .files import LAT_FILE_NAME, PROBE_INDEX_NAME, read_lat, read_probe_index, read_trace
from .ionic import get_ionic_model
from .templates import TRACE_NAME

logger = logging.getLogger("fpm_cardio")

APD_FRACTION = 0.9
CV_PROBE_FRACTIONS = (0.25, 0.75)


@dataclass
class ProbeTrace:
    name: str
    node: int
    times: np.ndarray
    values: np.ndarray
    position: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise PostProcessingError(
                f"probe {self.name}: {len(self.times)} times for {len(self.values)} values"
            )
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0):
                raise PostProcessingError(f"probe {self.name}: times are not increasing")
            if np.ptp(steps) > 1e-6 * steps.mean():
                raise PostProcessingError(f"probe {self.name}: sampling is not uniform")

    @property
    def interval(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def lat(self, threshold: float) -> float:
        return float(compute_lat(self.times, self.values, threshold))

    def apd90(self) -> float:
        return compute_apd90(self.times, self.values)


@dataclass
class ActivationMap:
    """Local activation time per node (ms, NaN where never activated)."""

    lat: np.ndarray
    threshold: float
    positions: Optional[np.ndarray] = None

    @property
    def activated(self) -> np.ndarray:
        return np.isfinite(self.lat)


@dataclass
class ActivationTracker:
    """Online LAT: records the first upward threshold crossing of each
    node from consecutive fields of a running simulation."""

    threshold: float
    t: float
    V: np.ndarray
    lat: np.ndarray = field(init=False)

    def __post_init__(self):
        self.V = np.array(self.V, dtype=float)
        self.lat = np.full(len(self.V), np.nan)

    def update(self, t: float, V: np.ndarray):
        V = np.asarray(V, dtype=float)
        crossing = np.isnan(self.lat) & (self.V < self.threshold) & (V >= self.threshold)
        if np.any(crossing):
            fraction = (self.threshold - self.V[crossing]) / (V[crossing] - self.V[crossing])
            self.lat[crossing] = self.t + fraction * (t - self.t)
        self.t = t
        self.V = V.copy()

    def result(self, positions: Optional[np.ndarray] = None) -> ActivationMap:
        return ActivationMap(lat=self.lat.copy(), threshold=self.threshold, positions=positions)


def compute_lat(
    times: np.ndarray, values: np.ndarray, threshold: float
) -> Union[float, np.ndarray]:
    """First upward crossing of ``threshold``, linearly interpolated.

    ``values`` is one trace (n_t,) or a field history (n_t, n); NaN marks
    nodes that never cross. A node that starts above the threshold needs
    to fall below it before it can activate.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    single = values.ndim == 1
    if single:
        values = values[:, None]
    if len(times) != len(values):
        raise PostProcessingError(f"{len(times)} times for {len(values)} samples")
    lat = np.full(values.shape[1], np.nan)
    if len(times) >= 2:
        before, after = values[:-1], values[1:]
        crossing = (before < threshold) & (after >= threshold)
        hit = crossing.any(axis=0)
        k = np.argmax(crossing, axis=0)[hit]
        nodes = np.flatnonzero(hit)
        v0 = values[k, nodes]
        v1 = values[k + 1, nodes]
        lat[nodes] = times[k] + (threshold - v0) / (v1 - v0) * (times[k + 1] - times[k])
    return float(lat[0]) if single else lat


def apd_threshold(peak: float, rest: float, fraction: float = APD_FRACTION) -> float:
    return peak - fraction * (peak - rest)


def compute_apd90(times: np.ndarray, values: np.ndarray) -> float:
    """Action potential duration at 90% repolarisation.

    Activation is the midpoint of the sample interval with the largest
    upstroke slope; the rest level is the lowest sample before it. NaN
    for flat traces and traces that do not repolarise.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) < 3:
        return float("nan")
    slopes = np.diff(values) / np.diff(times)
    k = int(np.argmax(slopes))
    if not slopes[k] > 0:
        return float("nan")
    activation = 0.5 * (times[k] + times[k + 1])
    rest = float(values[: k + 1].min())
    p = k + 1 + int(np.argmax(values[k + 1 :]))
    peak = float(values[p])
    level = apd_threshold(peak, rest)

    tail = values[p:]
    down = np.flatnonzero((tail[:-1] >= level) & (tail[1:] < level))
    if down.size == 0:
        return float("nan")
    j = p + int(down[0])
    t_cross = times[j] + (values[j] - level) / (values[j] - values[j + 1]) * (
        times[j + 1] - times[j]
    )
    return float(t_cross - activation)


def compute_cv(
    activation: ActivationMap,
    probe_a: int,
    probe_b: int,
    positions: Optional[np.ndarray] = None,
) -> float:
    """Conduction velocity (cm/ms) between two probe nodes."""
    positions = activation.positions if positions is None else positions
    if positions is None:
        raise PostProcessingError("conduction velocity needs node positions")
    lat_a, lat_b = activation.lat[probe_a], activation.lat[probe_b]
    if not (np.isfinite(lat_a) and np.isfinite(lat_b)):
        raise PostProcessingError(
            f"probe nodes {probe_a} and {probe_b} were not both activated "
            f"(LAT {lat_a} and {lat_b} ms)"
        )
    if lat_a == lat_b:
        raise PostProcessingError(f"probe nodes {probe_a} and {probe_b} activate together")
    distance = float(np.linalg.norm(positions[probe_b] - positions[probe_a]))
    return distance / abs(float(lat_b - lat_a))


def cv_probe_pair(positions: np.ndarray, axis: int = 0) -> Tuple[int, int]:
    """Nodes nearest to 25% and 75% of ``axis`` on the domain mid-line."""
    positions = np.asarray(positions, dtype=float)
    lower, upper = positions.min(axis=0), positions.max(axis=0)
    middle = 0.5 * (lower + upper)
    targets = np.tile(middle, (2, 1))
    for row, fraction in enumerate(CV_PROBE_FRACTIONS):
        targets[row, axis] = lower[axis] + fraction * (upper[axis] - lower[axis])
    _, nodes = cKDTree(positions).query(targets)
    return int(nodes[0]), int(nodes[1])


def relative_error(measured: float, reference: float) -> float:
    if reference == 0:
        raise PostProcessingError("relative error against a zero reference")
    return (measured - reference) / reference


@dataclass
class RunSummary:
    metrics: List[Dict[str, object]]
    cv: List[Dict[str, object]]


def summarize_run(run_dir: Union[str, Path]) -> RunSummary:
    """Metric rows (LAT and APD90 per probe) and the CV between the axis
    probe pair, from the files a run wrote."""
    run_dir = Path(run_dir)
    config_path = run_dir / RUN_CONFIG_NAME
    if not config_path.is_file():
        raise PostProcessingError(f"{run_dir} holds no {RUN_CONFIG_NAME}; is it a run directory?")
    config = parse_config(config_path)
    threshold = config.output.lat_threshold
    if threshold is None:
        model = get_ionic_model(config.ionic.model, **config.ionic.parameters)
        threshold = 0.5 * (model.v_rest + model.v_peak)

    metrics = []
    index_path = run_dir / PROBE_INDEX_NAME
    for name, node, position in read_probe_index(index_path) if index_path.is_file() else []:
        times, values = read_trace(run_dir / TRACE_NAME.format(name=name))
        trace = ProbeTrace(name=name, node=node, times=times, values=values, position=position)
        metrics.append(
            {"probe": name, "node": node, "lat_ms": trace.lat(threshold), "apd90_ms": trace.apd90()}
        )

    cv_rows = []
    lat_path = run_dir / LAT_FILE_NAME
    if lat_path.is_file():
        positions, lat = read_lat(lat_path)
        activation = ActivationMap(lat=lat, threshold=threshold, positions=positions)
        a, b = cv_probe_pair(positions, config.output.cv_axis)
        cv_rows.append(
            {
                "probe_a": a,
                "probe_b": b,
                "distance_cm": float(np.linalg.norm(positions[b] - positions[a])),
                "cv_cm_per_ms": compute_cv(activation, a, b),
            }
        )
    logger.info(f"Summarized {len(metrics)} probes from {run_dir}")
    return RunSummary(metrics=metrics, cv=cv_rows)
