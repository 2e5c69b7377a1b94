"""Ionic cell models and the stimulus protocol.

Currents are normalised by the membrane capacitance, so ``I_ion`` and the
stimulus are voltage rates in mV/ms and ``dV/dt = -I_ion + I_stim``.
Phenomenological models work on a dimensionless voltage that is mapped
to mV by ``V = -80 + 100 * u``.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import ClassVar, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .config import mm_to_cm
from .errors import ConfigError, ContractError, NumericError

logger = logging.getLogger("fpm_cardio")

REGION_TOL = 1e-12


class IonicModel(ABC):
    name: ClassVar[str] = ""
    state_names: ClassVar[Tuple[str, ...]] = ()
    # Bounds asserted by check_state, per state variable
    state_bounds: ClassVar[Dict[str, Tuple[float, float]]] = {}
    default_parameters: ClassVar[Dict[str, float]] = {}
    v_rest: float = -80.0
    v_peak: float = 20.0
    max_dt: float = 0.1

    def __init__(self, **parameters: float):
        unknown = set(parameters) - set(self.default_parameters)
        if unknown:
            raise ConfigError(
                f"unknown parameters {sorted(unknown)} for model {self.name}",
                key="ionic.parameters",
            )
        self.params = {**self.default_parameters, **parameters}

    def __str__(self):
        return self.name

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @abstractmethod
    def initial_state(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Resting ``V`` (n,) and state (n, n_states)."""

    @abstractmethod
    def current(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def state_rates(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        pass

    def gate_form(
        self, V: np.ndarray, state: np.ndarray
    ) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Steady state and time constant of every state variable, for
        models whose states are all gates. None means forward Euler."""
        return None

    def advance_state(self, V: np.ndarray, state: np.ndarray, dt: float) -> np.ndarray:
        form = self.gate_form(V, state)
        if form is None:
            return state + dt * self.state_rates(V, state)
        steady, tau = form
        return steady + (state - steady) * np.exp(-dt / tau)

    def check_state(self, state: np.ndarray, t: Optional[float] = None):
        for k, name in enumerate(self.state_names):
            low, high = self.state_bounds.get(name, (-np.inf, np.inf))
            column = state[:, k]
            bad = np.flatnonzero(~np.isfinite(column) | (column < low) | (column > high))
            if bad.size:
                raise NumericError(
                    f"state {name} = {column[bad[0]]} outside [{low}, {high}]",
                    node=int(bad[0]),
                    time=t,
                )


class MitchellSchaeffer(IonicModel):
    """Two-variable model with an inward current gated by ``h``."""

    name = "mitchell_schaeffer"
    state_names = ("h",)
    state_bounds = {"h": (0.0, 1.0)}
    default_parameters = {
        "tau_in": 0.3,
        "tau_out": 6.0,
        "tau_open": 120.0,
        "tau_close": 150.0,
        "v_gate": 0.13,
    }
    max_dt = 0.25

    def initial_state(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        return np.full(n, self.v_rest), np.ones((n, 1))

    def current(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        v = (V - self.v_rest) / 100.0
        h = state[:, 0]
        p = self.params
        return -100.0 * (h * v**2 * (1.0 - v) / p["tau_in"] - v / p["tau_out"])

    def gate_form(self, V: np.ndarray, state: np.ndarray):
        v = (V - self.v_rest) / 100.0
        p = self.params
        opening = v < p["v_gate"]
        steady = np.where(opening, 1.0, 0.0)
        tau = np.where(opening, p["tau_open"], p["tau_close"])
        return steady[:, None], tau[:, None]

    def state_rates(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        steady, tau = self.gate_form(V, state)
        return (steady - state) / tau


class AlievPanfilov(IonicModel):
    """Two-variable excitable model; one model time unit is 12.9 ms."""

    name = "aliev_panfilov"
    state_names = ("v",)
    default_parameters = {
        "k": 8.0,
        "a": 0.15,
        "epsilon": 0.002,
        "mu1": 0.2,
        "mu2": 0.3,
        "time_scale": 12.9,
    }
    max_dt = 0.5

    def initial_state(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        return np.full(n, self.v_rest), np.zeros((n, 1))

    def current(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        u = (V - self.v_rest) / 100.0
        v = state[:, 0]
        p = self.params
        return 100.0 / p["time_scale"] * (p["k"] * u * (u - p["a"]) * (u - 1.0) + u * v)

    def state_rates(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        u = (V - self.v_rest) / 100.0
        v = state[:, 0]
        p = self.params
        eps = p["epsilon"] + p["mu1"] * v / (u + p["mu2"])
        rate = eps * (-v - p["k"] * u * (u - p["a"] - 1.0)) / p["time_scale"]
        return rate[:, None]


class PassiveMembrane(IonicModel):
    """Linear leak ``I = g (V - V_rest)``; no state."""

    name = "passive"
    default_parameters = {"g": 0.01, "v_rest": -80.0}
    max_dt = 10.0

    def __init__(self, **parameters: float):
        super().__init__(**parameters)
        self.v_rest = self.params["v_rest"]
        self.v_peak = self.v_rest + 100.0

    def initial_state(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        return np.full(n, self.v_rest), np.zeros((n, 0))

    def current(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        return self.params["g"] * (V - self.v_rest)

    def state_rates(self, V: np.ndarray, state: np.ndarray) -> np.ndarray:
        return np.zeros_like(state)


AVAILABLE_MODELS: Dict[str, type] = {
    "mitchell_schaeffer": MitchellSchaeffer,
    "mitchell-schaeffer": MitchellSchaeffer,
    "ms": MitchellSchaeffer,
    "aliev_panfilov": AlievPanfilov,
    "aliev-panfilov": AlievPanfilov,
    "ap": AlievPanfilov,
    "passive": PassiveMembrane,
}


def get_ionic_model(name: str, **parameters: float) -> IonicModel:
    model_cls = AVAILABLE_MODELS.get(name.lower())
    if model_cls is None:
        raise ConfigError(
            f"unknown ionic model {name!r}; available: {', '.join(sorted(AVAILABLE_MODELS))}",
            key="ionic.model",
        )
    return model_cls(**parameters)


def _first_non_finite(*arrays: np.ndarray) -> int:
    for array in arrays:
        array = np.asarray(array)
        bad = ~np.isfinite(array)
        if bad.ndim > 1:
            bad = bad.any(axis=tuple(range(1, bad.ndim)))
        if bad.any():
            return int(np.flatnonzero(bad)[0])
    return -1


def ionic_rate(
    model: IonicModel,
    V: np.ndarray,
    state: np.ndarray,
    t: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Capacitance-normalised ionic current and state derivatives per node."""
    V = np.asarray(V, dtype=float)
    state = np.asarray(state, dtype=float)
    if state.shape != (len(V), model.n_states):
        raise ContractError(
            f"state of shape {state.shape} for {len(V)} nodes and {model.n_states} states"
        )
    node = _first_non_finite(V, state)
    if node >= 0:
        raise NumericError("non-finite ionic model input", node=node, time=t)
    return model.current(V, state), model.state_rates(V, state)


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box in cm; missing bounds are open."""

    lower: Tuple[float, ...] = ()
    upper: Tuple[float, ...] = ()

    def contains(self, positions: np.ndarray) -> np.ndarray:
        positions = np.asarray(positions, dtype=float)
        dim = positions.shape[1]
        lower = np.full(dim, -np.inf)
        upper = np.full(dim, np.inf)
        lower[: len(self.lower)] = self.lower
        upper[: len(self.upper)] = self.upper
        return np.all(
            (positions >= lower - REGION_TOL) & (positions <= upper + REGION_TOL), axis=1
        )


@dataclass(frozen=True)
class SphereRegion:
    center: Tuple[float, ...]
    radius: float

    def contains(self, positions: np.ndarray) -> np.ndarray:
        offsets = np.asarray(positions, dtype=float) - np.asarray(self.center)
        return np.linalg.norm(offsets, axis=1) <= self.radius + REGION_TOL


Region = Union[BoxRegion, SphereRegion]


@dataclass(frozen=True)
class StimulusProtocol:
    region: Region
    amplitude: float
    duration: float
    period: float
    start: float = 0.0
    beats: Optional[int] = None

    def __post_init__(self):
        if not np.isfinite(self.amplitude):
            raise ConfigError("stimulus amplitude must be finite", key="amplitude")
        if not 0 < self.duration < self.period:
            raise ConfigError(
                f"stimulus duration {self.duration} must lie in (0, period {self.period})",
                key="duration",
            )

    def is_active(self, t: float) -> bool:
        if t < self.start:
            return False
        elapsed = t - self.start
        if self.beats is not None and elapsed // self.period >= self.beats:
            return False
        return bool(np.mod(elapsed, self.period) < self.duration)

    @classmethod
    def from_config(cls, config, amplitude: Optional[float] = None) -> "StimulusProtocol":
        """Protocol from a ``StimulusConfig`` (region lengths in mm).

        ``amplitude`` overrides the configured one, for protocols given as a
        multiple of the diastolic threshold.
        """
        return cls(
            region=region_from_config(config.region),
            amplitude=config.amplitude if amplitude is None else amplitude,
            duration=config.duration,
            period=config.period,
            start=config.start,
            beats=config.beats,
        )


def region_from_config(region) -> Region:
    """Region in cm from a ``RegionConfig``; open box sides are unbounded."""
    if region.shape == "sphere":
        return SphereRegion(
            center=tuple(mm_to_cm(region.center_mm)), radius=mm_to_cm(region.radius_mm)
        )
    return BoxRegion(
        lower=tuple(mm_to_cm(region.lower_mm)) if region.lower_mm is not None else (),
        upper=tuple(mm_to_cm(region.upper_mm)) if region.upper_mm is not None else (),
    )


def apply_stimulus(
    protocols: Union[StimulusProtocol, Sequence[StimulusProtocol]],
    t: float,
    positions: np.ndarray,
) -> np.ndarray:
    """Stimulus rate (mV/ms) added to every node at time ``t``."""
    if t < 0:
        raise ContractError(f"stimulus requested at negative time {t}")
    if isinstance(protocols, StimulusProtocol):
        protocols = [protocols]
    current = np.zeros(len(positions))
    for protocol in protocols:
        if protocol.is_active(t):
            current[protocol.region.contains(positions)] += protocol.amplitude
    return current


def diastolic_threshold(
    model: IonicModel,
    duration: float = 1.0,
    dt: float = 0.01,
    window: float = 50.0,
    tolerance: float = 0.01,
) -> float:
    """Smallest stimulus amplitude (mV/ms) that fires a resting single cell,
    found by bisection; pacing protocols use a multiple of it."""

    def fires(amplitude: float) -> bool:
        V, state = model.initial_state(1)
        threshold = 0.5 * (model.v_rest + model.v_peak)
        for step in range(int(round(window / dt))):
            t = step * dt
            I_ion, _ = ionic_rate(model, V, state, t)
            stimulus = amplitude if t < duration else 0.0
            state = model.advance_state(V, state, dt)
            V = V + dt * (-I_ion + stimulus)
            if V[0] >= threshold:
                return True
        return False

    low, high = 0.0, 1.0
    while not fires(high):
        low, high = high, 2.0 * high
        if high > 1e6:
            raise NumericError(f"model {model.name} does not fire for any stimulus", node=0)
    while high - low > tolerance * high:
        middle = 0.5 * (low + high)
        if fires(middle):
            high = middle
        else:
            low = middle
    logger.debug(f"Diastolic threshold of {model.name}: {high:.4g} mV/ms for {duration} ms")
    return high
