from dataclasses import replace

import numpy as np
import pytest
from fpm_cardio.config import parse_config
from fpm_cardio.errors import ConfigError, ContractError, SolverError
from fpm_cardio.files import Checkpoint, read_checkpoint
from fpm_cardio.ionic import BoxRegion, PassiveMembrane, StimulusProtocol
from fpm_cardio.problem import build_problem
from fpm_cardio.stepper import (
    DiffusionSolver,
    TimeIntegrationPlan,
    diffusion_step,
    estimate_max_eigenvalue,
    reaction_step,
    run_simulation,
)
from fpm_cardio.templates import CHECKPOINT_NAME


def passive_error(scheme, dt, total=2.0):
    """Error of the reaction step against the exact passive decay."""
    model = PassiveMembrane(g=0.5)
    V = np.array([-70.0])
    state = np.zeros((1, 0))
    for step in range(int(round(total / dt))):
        V, state = reaction_step(model, V, state, dt, step * dt, scheme=scheme)
    exact = -80.0 + 10.0 * np.exp(-0.5 * total)
    return abs(V[0] - exact)


def mirror(n_side):
    """Index map of a square grid reflected about its vertical mid-line."""
    i, j = np.meshgrid(np.arange(n_side), np.arange(n_side), indexing="ij")
    return ((n_side - 1 - i) + n_side * j).T.ravel()


class TestTimeIntegrationPlan:
    def test_steps(self):
        plan = TimeIntegrationPlan(dt=0.1, total=20.0, record_interval=0.5)
        assert plan.n_steps == 200
        assert plan.record_every == 5
        assert TimeIntegrationPlan(dt=0.1, total=1.0).record_every == 1

    @pytest.mark.parametrize(
        "changes",
        [
            {"dt": 0.0},
            {"total": -1.0},
            {"dt": 0.3, "total": 1.0},
            {"theta": 0.0},
            {"splitting": "lie"},
            {"scheme": "rk4"},
            {"reaction_scheme": "rush_larsen"},
            {"tolerance": 0.5},
        ],
    )
    def test_invalid_plan(self, changes):
        with pytest.raises(ConfigError):
            TimeIntegrationPlan(**{"dt": 0.1, "total": 1.0, **changes})


class TestReactionStep:
    def test_euler_update(self):
        model = PassiveMembrane(g=0.5)
        V, state = reaction_step(model, np.array([-70.0]), np.zeros((1, 0)), 0.1, 0.0)
        np.testing.assert_allclose(V, [-70.5])
        assert state.shape == (1, 0)

    def test_stimulus_adds_to_the_slope(self):
        model = PassiveMembrane(g=0.5)
        positions = np.array([[0.0, 0.0], [1.0, 0.0]])
        protocol = StimulusProtocol(BoxRegion(upper=(0.5,)), amplitude=20.0, duration=1.0, period=10.0)
        V, _ = reaction_step(
            model, np.full(2, -80.0), np.zeros((2, 0)), 0.1, 0.0, [protocol], positions
        )
        np.testing.assert_allclose(V, [-78.0, -80.0])

    def test_convergence_orders(self):
        euler = passive_error("euler", 0.2) / passive_error("euler", 0.1)
        heun = passive_error("heun", 0.2) / passive_error("heun", 0.1)
        assert euler == pytest.approx(2.0, rel=0.1)
        assert heun > 3.5

    def test_contract_errors(self):
        model = PassiveMembrane()
        V, state = model.initial_state(2)
        protocol = StimulusProtocol(BoxRegion(upper=(0.5,)), amplitude=20.0, duration=1.0, period=10.0)
        with pytest.raises(ContractError):
            reaction_step(model, V, state, 0.0, 0.0)
        with pytest.raises(ContractError):
            reaction_step(model, V, state, 0.1, 0.0, [protocol])
        with pytest.raises(ContractError):
            reaction_step(model, V, state, 0.1, 0.0, scheme="rk4")


class TestDiffusion:
    def test_constant_field_is_preserved(self, grid_operators):
        V = np.full(grid_operators.n, -80.0)
        np.testing.assert_allclose(diffusion_step(V, grid_operators, 0.1), V, atol=1e-12)

    def test_conservation(self, grid_operators):
        solver = DiffusionSolver(grid_operators, 0.1, tolerance=1e-12)
        V = np.random.default_rng(2).uniform(-80.0, 20.0, grid_operators.n)
        charge = np.sum(grid_operators.C @ V)
        for _ in range(100):
            V = solver.step(V)
        assert np.sum(grid_operators.C @ V) == pytest.approx(charge, rel=1e-8)
        assert len(solver.iterations) == 100

    def test_mirror_symmetry(self, grid_partition, grid_operators):
        x = grid_partition.points.positions[:, 0]
        y = grid_partition.points.positions[:, 1]
        V = -80.0 + 100.0 * np.exp(-((np.abs(x - 0.2) - 0.1) ** 2 + y**2) / 0.01)
        solver = DiffusionSolver(grid_operators, 0.5, theta=0.5, tolerance=1e-12)
        for _ in range(20):
            V = solver.step(V)
        np.testing.assert_allclose(V[mirror(4)], V, atol=1e-8)

    def test_explicit_scheme_conserves_lumped_charge(self, grid_operators):
        solver = DiffusionSolver(grid_operators, 0.01, scheme="explicit")
        V = np.random.default_rng(4).uniform(-80.0, 20.0, grid_operators.n)
        capacity = grid_operators.lumped_capacity
        charge = capacity @ V
        for _ in range(50):
            V = solver.step(V, 0.0)
        assert capacity @ V == pytest.approx(charge, rel=1e-12)

    def test_explicit_scheme_above_the_bound(self, grid_operators):
        with pytest.raises(SolverError, match="stability bound"):
            DiffusionSolver(grid_operators, 100.0, scheme="explicit")

    def test_power_iteration(self, grid_operators):
        capacity = grid_operators.lumped_capacity
        scale = 1.0 / np.sqrt(capacity)
        dense = scale[:, None] * grid_operators.K.toarray() * scale[None, :]
        largest = np.linalg.eigvalsh(dense).max()
        estimate = estimate_max_eigenvalue(grid_operators.K, capacity)
        assert estimate <= largest * (1 + 1e-9)
        assert estimate >= 0.95 * largest

    def test_conjugate_gradient_failure(self, grid_operators):
        V = np.random.default_rng(3).uniform(-80.0, 20.0, grid_operators.n)
        with pytest.raises(SolverError) as error:
            diffusion_step(V, grid_operators, 10.0, tolerance=1e-12, max_iterations=1)
        assert error.value.residual > 0

    def test_unknown_scheme(self, grid_operators):
        with pytest.raises(ContractError):
            DiffusionSolver(grid_operators, 0.1, scheme="adi")


class TestRunSimulation:
    @pytest.fixture
    def strip_problem(self, strip_config):
        return build_problem(parse_config(strip_config))

    def test_zero_total(self, strip_config):
        config = parse_config(strip_config)
        config = replace(config, time=replace(config.time, total=0.0))
        result = run_simulation(config)
        np.testing.assert_array_equal(result.times, [0.0])
        assert all(len(trace.values) == 1 for trace in result.traces)
        assert result.t == 0.0
        np.testing.assert_array_equal(result.V, -80.0)

    def test_writes_run_files(self, strip_problem, tmp_path):
        directory = tmp_path / "out"
        result = run_simulation(strip_problem, output_dir=directory)
        assert result.t == pytest.approx(20.0)
        assert len(result.times) == 201
        for name in ["run.toml", "probes.csv", "lat.csv", "probe_left.csv", "probe_right.csv"]:
            assert (directory / name).is_file()
        assert len(result.snapshots) == 6
        assert (directory / "snapshot_000002.vtk").is_file()
        assert (directory / "snapshot_000002.csv").is_file()

        left, right = result.traces
        assert left.name == "left"
        lat_left = left.lat(strip_problem.lat_threshold)
        lat_right = right.lat(strip_problem.lat_threshold)
        assert np.isfinite(lat_left) and np.isfinite(lat_right)
        assert lat_left < lat_right
        assert result.activation.activated.all()

    def test_checkpoint_resume_is_bit_identical(self, strip_config, tmp_path):
        config = parse_config(strip_config)
        config = replace(config, output=replace(config.output, checkpoint_interval=10.0))
        problem = build_problem(config)
        full = run_simulation(problem, output_dir=tmp_path / "full")

        checkpoint = read_checkpoint(tmp_path / "full" / CHECKPOINT_NAME.format(index=1))
        assert checkpoint.t == pytest.approx(10.0)
        assert checkpoint.state_names == ("h",)
        resumed = run_simulation(problem, checkpoint=checkpoint)
        np.testing.assert_array_equal(resumed.V, full.V)
        np.testing.assert_array_equal(resumed.state, full.state)
        assert resumed.t == full.t
        assert len(resumed.times) == 101

    def test_checkpoint_beyond_the_final_time(self, strip_problem):
        n = len(strip_problem.positions)
        checkpoint = Checkpoint(t=30.0, V=np.full(n, -80.0), state=np.ones((n, 1)), state_names=("h",))
        with pytest.raises(ContractError, match="beyond"):
            run_simulation(strip_problem, checkpoint=checkpoint)

    def test_checkpoint_of_another_problem(self, strip_problem):
        checkpoint = Checkpoint(t=0.0, V=np.zeros(3), state=np.ones((3, 1)), state_names=("h",))
        with pytest.raises(ContractError):
            run_simulation(strip_problem, checkpoint=checkpoint)
