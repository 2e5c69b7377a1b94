"""Operator-splitting time integration of the monodomain equation.

Each step advances the reaction ``dV/dt = -I_ion + I_stim`` node by node
and the diffusion ``C dV/dt + K V = 0`` with the assembled operators,
either once each (Godunov) or as half reaction, full diffusion, half
reaction (Strang).
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from rich.console import Console
from rich.progress import BarColumn, Progress, TextColumn, TimeRemainingColumn
from scipy.sparse.linalg import LinearOperator, cg

from .assembly import GlobalOperators
from .config import (
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_THETA,
    DEFAULT_TOLERANCE,
    DIFFUSION_SCHEMES,
    REACTION_SCHEMES,
    RUN_CONFIG_NAME,
    SPLITTING_METHODS,
    SimulationConfig,
    TimeConfig,
    dump_config,
    with_absolute_paths,
)
from .errors import AssemblyError, ConfigError, ContractError, NumericError, SolverError
from .files import (
    LAT_FILE_NAME,
    PROBE_INDEX_NAME,
    Checkpoint,
    write_checkpoint,
    write_lat,
    write_probe_index,
    write_snapshot,
    write_trace,
)
from .ionic import IonicModel, StimulusProtocol, apply_stimulus, ionic_rate
from .post import ActivationMap, ActivationTracker, ProbeTrace
from .templates import CHECKPOINT_NAME, TRACE_NAME

if TYPE_CHECKING:
    from .problem import Problem

logger = logging.getLogger("fpm_cardio")

# Explicit steps must stay below 2 / (margin * estimated largest eigenvalue)
STABILITY_MARGIN = 1.05
POWER_ITERATIONS = 500


@dataclass
class TimeIntegrationPlan:
    dt: float
    total: float
    splitting: str = "godunov"
    scheme: str = "theta"
    theta: float = DEFAULT_THETA
    reaction_scheme: str = "euler"
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    record_interval: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}", key="time.dt")
        if self.total < 0:
            raise ConfigError(f"total must be >= 0, got {self.total}", key="time.total")
        if self.splitting not in SPLITTING_METHODS:
            raise ConfigError(f"unknown splitting {self.splitting!r}", key="time.splitting")
        if self.scheme not in DIFFUSION_SCHEMES:
            raise ConfigError(f"unknown diffusion scheme {self.scheme!r}", key="time.scheme")
        if self.reaction_scheme not in REACTION_SCHEMES:
            raise ConfigError(
                f"unknown reaction scheme {self.reaction_scheme!r}", key="time.reaction_scheme"
            )
        if not 0 < self.theta <= 1:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}", key="time.theta")
        if not 0 < self.tolerance <= 1e-2:
            raise ConfigError(
                f"tolerance must lie in (0, 1e-2], got {self.tolerance}", key="time.tolerance"
            )
        steps = self.total / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ConfigError(
                f"total {self.total} ms is not a multiple of dt {self.dt} ms", key="time.total"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.total / self.dt))

    @property
    def record_every(self) -> int:
        """Steps between recorded probe samples."""
        if self.record_interval is None:
            return 1
        return max(1, int(round(self.record_interval / self.dt)))

    @classmethod
    def from_config(
        cls, time_config: TimeConfig, record_interval: Optional[float] = None
    ) -> "TimeIntegrationPlan":
        return cls(
            dt=time_config.dt,
            total=time_config.total,
            splitting=time_config.splitting,
            scheme=time_config.scheme,
            theta=time_config.theta,
            reaction_scheme=time_config.reaction_scheme,
            tolerance=time_config.tolerance,
            max_iterations=time_config.max_iterations,
            record_interval=record_interval,
        )


def _check_finite(V: np.ndarray, t: float, what: str):
    bad = np.flatnonzero(~np.isfinite(V))
    if bad.size:
        raise NumericError(f"non-finite V after the {what} step", node=int(bad[0]), time=t)


def reaction_step(
    model: IonicModel,
    V: np.ndarray,
    state: np.ndarray,
    dt_r: float,
    t: float,
    stimuli: Sequence[StimulusProtocol] = (),
    positions: Optional[np.ndarray] = None,
    scheme: str = "euler",
) -> Tuple[np.ndarray, np.ndarray]:
    """Advance every node's V and state by ``dt_r`` without diffusion.

    ``euler`` is forward Euler for V (the state uses the model's own
    update, exponential for gates); ``heun`` is the explicit trapezoid
    rule, second order in ``dt_r``.
    """
    if not dt_r > 0:
        raise ContractError(f"reaction step needs dt > 0, got {dt_r}")
    if stimuli and positions is None:
        raise ContractError("stimulated reaction steps need node positions")

    def stimulus(at: float) -> Union[np.ndarray, float]:
        return apply_stimulus(stimuli, at, positions) if stimuli else 0.0

    I_ion, rates = ionic_rate(model, V, state, t)
    slope = -I_ion + stimulus(t)
    if scheme == "euler":
        V_next = V + dt_r * slope
        state_next = model.advance_state(V, state, dt_r)
    elif scheme == "heun":
        V_pred = V + dt_r * slope
        state_pred = model.advance_state(V, state, dt_r)
        _check_finite(V_pred, t, "reaction predictor")
        I_pred, rates_pred = ionic_rate(model, V_pred, state_pred, t + dt_r)
        V_next = V + 0.5 * dt_r * (slope - I_pred + stimulus(t + dt_r))
        if model.gate_form(V, state) is not None:
            state_next = model.advance_state(0.5 * (V + V_pred), state, dt_r)
        else:
            state_next = state + 0.5 * dt_r * (rates + rates_pred)
    else:
        raise ContractError(f"unknown reaction scheme {scheme!r}")

    _check_finite(V_next, t + dt_r, "reaction")
    model.check_state(state_next, t + dt_r)
    return V_next, state_next


def estimate_max_eigenvalue(
    K: sp.spmatrix,
    capacity: np.ndarray,
    iterations: int = POWER_ITERATIONS,
    rtol: float = 1e-6,
) -> float:
    """Largest eigenvalue of C_L^-1/2 K C_L^-1/2 by power iteration."""
    scale = 1.0 / np.sqrt(capacity)
    x = np.random.default_rng(0).standard_normal(len(capacity))
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        y = scale * (K @ (scale * x))
        previous, estimate = estimate, float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
        if abs(estimate - previous) <= rtol * abs(estimate):
            break
    return estimate


class DiffusionSolver:
    """Diffusion sub-step for a fixed dt.

    The theta scheme solves ``(C + theta dt K) V+ = (C - (1 - theta) dt K) V``
    with Jacobi-preconditioned conjugate gradients; the explicit scheme
    uses the row-sum lumped capacity and checks the stability bound once.
    """

    def __init__(
        self,
        operators: GlobalOperators,
        dt: float,
        scheme: str = "theta",
        theta: float = DEFAULT_THETA,
        tolerance: float = DEFAULT_TOLERANCE,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
    ):
        if not dt > 0:
            raise ContractError(f"diffusion step needs dt > 0, got {dt}")
        self.operators = operators
        self.dt = dt
        self.scheme = scheme
        self.theta = theta
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.iterations: List[int] = []

        C, K = operators.C, operators.K
        if scheme == "theta":
            self.A = (C + theta * dt * K).tocsr()
            self.B = (C - (1.0 - theta) * dt * K).tocsr() if theta < 1 else C
            diagonal = self.A.diagonal()
            if np.any(diagonal <= 0):
                raise AssemblyError("system matrix has a non-positive diagonal entry")
            inverse = 1.0 / diagonal
            n = operators.n
            self.preconditioner = LinearOperator((n, n), matvec=lambda x: inverse * x)
        elif scheme == "explicit":
            capacity = operators.lumped_capacity
            if np.any(capacity <= 0):
                bad = int(np.flatnonzero(capacity <= 0)[0])
                raise AssemblyError(f"lumped capacity of point {bad} is {capacity[bad]}")
            self.inverse_capacity = 1.0 / capacity
            self.max_eigenvalue = estimate_max_eigenvalue(K, capacity)
            limit = self.stable_dt
            if dt > limit:
                raise SolverError(
                    f"explicit diffusion step {dt} ms exceeds the stability bound {limit:.4g} ms"
                )
            logger.debug(f"Explicit diffusion: dt = {dt} ms, bound {limit:.4g} ms")
        else:
            raise ContractError(f"unknown diffusion scheme {scheme!r}")

    @property
    def stable_dt(self) -> float:
        if self.max_eigenvalue <= 0:
            return float("inf")
        return 2.0 / (STABILITY_MARGIN * self.max_eigenvalue)

    def step(self, V: np.ndarray, t: Optional[float] = None) -> np.ndarray:
        if self.scheme == "explicit":
            V_next = V - self.dt * self.inverse_capacity * (self.operators.K @ V)
            _check_finite(V_next, t if t is not None else float("nan"), "diffusion")
            return V_next

        b = self.B @ V
        count = 0

        def callback(_):
            nonlocal count
            count += 1

        V_next, info = cg(
            self.A,
            b,
            x0=V,
            rtol=self.tolerance,
            atol=0.0,
            maxiter=self.max_iterations,
            M=self.preconditioner,
            callback=callback,
        )
        if info != 0:
            norm_b = np.linalg.norm(b)
            residual = float(np.linalg.norm(b - self.A @ V_next) / (norm_b if norm_b else 1.0))
            raise SolverError(
                f"conjugate gradients did not converge in {self.max_iterations} iterations "
                f"(relative residual {residual:.3e})",
                residual=residual,
            )
        self.iterations.append(count)
        logger.debug(f"CG converged in {count} iterations")
        return V_next


def diffusion_step(
    V: np.ndarray,
    operators: GlobalOperators,
    dt_d: float,
    scheme: str = "theta",
    theta: float = DEFAULT_THETA,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> np.ndarray:
    """One diffusion sub-step; drivers reuse a ``DiffusionSolver`` instead."""
    solver = DiffusionSolver(operators, dt_d, scheme, theta, tolerance, max_iterations)
    return solver.step(np.asarray(V, dtype=float))


@dataclass
class SimulationResult:
    times: np.ndarray
    traces: List[ProbeTrace]
    activation: ActivationMap
    V: np.ndarray
    state: np.ndarray
    t: float
    snapshots: List[Path] = field(default_factory=list)
    files: Dict[str, Path] = field(default_factory=dict)
    cg_iterations: List[int] = field(default_factory=list)


def _progress(quiet: bool) -> Progress:
    return Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total} steps"),
        TimeRemainingColumn(),
        console=Console(stderr=True),
        disable=quiet,
        transient=True,
    )


def run_simulation(
    problem: Union["Problem", SimulationConfig],
    output_dir: Optional[Union[str, Path]] = None,
    checkpoint: Optional[Checkpoint] = None,
    quiet: bool = True,
) -> SimulationResult:
    """Advance the problem to its final time.

    Probe traces are sampled every ``record_interval``; snapshots and
    checkpoints are written when ``output_dir`` is given and the output
    block asks for them.
    """
    if isinstance(problem, SimulationConfig):
        from .problem import build_problem

        problem = build_problem(problem)

    plan = problem.plan
    model = problem.model
    positions = problem.positions
    output = problem.config.output
    n = len(positions)

    if checkpoint is not None:
        if len(checkpoint.V) != n or checkpoint.state.shape != (n, model.n_states):
            raise ContractError(f"checkpoint does not match {n} nodes of model {model.name}")
        V, state, t0 = checkpoint.V.copy(), checkpoint.state.copy(), checkpoint.t
    else:
        V, state = model.initial_state(n)
        t0 = 0.0

    solver = DiffusionSolver(
        problem.operators,
        plan.dt,
        plan.scheme,
        plan.theta,
        plan.tolerance,
        plan.max_iterations,
    )
    directory = Path(output_dir) if output_dir is not None else None
    snapshot_every = (
        max(1, int(round(output.snapshot_interval / plan.dt)))
        if output.snapshot_interval is not None
        else None
    )
    checkpoint_every = (
        max(1, int(round(output.checkpoint_interval / plan.dt)))
        if output.checkpoint_interval is not None
        else None
    )

    probe_nodes = np.array([probe.node for probe in problem.probes], dtype=int)
    times = [t0]
    samples = [V[probe_nodes].copy()]
    tracker = ActivationTracker(threshold=problem.lat_threshold, t=t0, V=V)
    snapshots: List[Path] = []

    # Steps, samples and files are counted from t = 0 so a resumed run
    # continues the sequence of the run that wrote the checkpoint.
    offset = int(round(t0 / plan.dt))
    if abs(t0 - offset * plan.dt) > 1e-9 * max(t0, 1.0):
        raise ContractError(f"checkpoint time {t0} ms is not a multiple of dt {plan.dt} ms")
    if offset > plan.n_steps:
        raise ContractError(f"checkpoint time {t0} ms lies beyond the final time {plan.total} ms")
    n_steps = plan.n_steps - offset

    def write_outputs(step: int, t: float):
        if directory is None:
            return
        index = offset + step
        if snapshot_every is not None and index % snapshot_every == 0:
            for fmt in output.formats:
                snapshots.append(
                    write_snapshot(positions, V, t, fmt, directory, index // snapshot_every)
                )
        if checkpoint_every is not None and index > 0 and index % checkpoint_every == 0:
            write_checkpoint(
                directory / CHECKPOINT_NAME.format(index=index // checkpoint_every),
                t,
                V,
                state,
                model.state_names,
            )

    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        dump_config(with_absolute_paths(problem.config), directory / RUN_CONFIG_NAME)
    write_outputs(0, t0)
    started = time.perf_counter()
    with _progress(quiet) as progress:
        task = progress.add_task("Simulating", total=n_steps)
        for step in range(n_steps):
            t = (offset + step) * plan.dt
            if plan.splitting == "godunov":
                V, state = reaction_step(
                    model, V, state, plan.dt, t, problem.stimuli, positions, plan.reaction_scheme
                )
                V = solver.step(V, t)
            else:
                half = 0.5 * plan.dt
                V, state = reaction_step(
                    model, V, state, half, t, problem.stimuli, positions, plan.reaction_scheme
                )
                V = solver.step(V, t)
                V, state = reaction_step(
                    model,
                    V,
                    state,
                    half,
                    t + half,
                    problem.stimuli,
                    positions,
                    plan.reaction_scheme,
                )
            t_next = (offset + step + 1) * plan.dt
            tracker.update(t_next, V)
            if (offset + step + 1) % plan.record_every == 0:
                times.append(t_next)
                samples.append(V[probe_nodes].copy())
            write_outputs(step + 1, t_next)
            progress.advance(task)

    t_final = plan.n_steps * plan.dt if n_steps else t0
    if solver.iterations:
        logger.info(
            f"{n_steps} steps in {time.perf_counter() - started:.2f} s, "
            f"mean CG iterations {np.mean(solver.iterations):.1f}"
        )

    times_array = np.array(times)
    history = np.array(samples).reshape(len(times), len(probe_nodes))
    traces = [
        ProbeTrace(
            name=probe.name,
            node=probe.node,
            times=times_array,
            values=history[:, k],
            position=positions[probe.node],
        )
        for k, probe in enumerate(problem.probes)
    ]
    result = SimulationResult(
        times=times_array,
        traces=traces,
        activation=tracker.result(positions),
        V=V,
        state=state,
        t=t_final,
        snapshots=snapshots,
        cg_iterations=solver.iterations,
    )
    if directory is not None:
        for trace in traces:
            result.files[trace.name] = write_trace(
                directory / TRACE_NAME.format(name=trace.name), trace.times, trace.values
            )
        result.files["probes"] = write_probe_index(
            directory / PROBE_INDEX_NAME,
            [(p.name, p.node, positions[p.node]) for p in problem.probes],
        )
        result.files["lat"] = write_lat(
            directory / LAT_FILE_NAME, positions, result.activation.lat
        )
        logger.info(
            f"Wrote {len(snapshots)} snapshots and {len(traces)} probe traces to {directory}"
        )
    return result
