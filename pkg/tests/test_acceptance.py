"""End-to-end accuracy studies: diffusion against a closed-form solution,
splitting orders, penalty and mesh convergence of propagation."""

from dataclasses import replace

import numpy as np
import pytest
from fpm_cardio.config import config_from_dict, parse_config
from fpm_cardio.post import compute_cv, cv_probe_pair, relative_error
from fpm_cardio.problem import build_problem
from fpm_cardio.stepper import DiffusionSolver, TimeIntegrationPlan, run_simulation
from fpm_cardio.voxel import build_voxel_partition

HEAT_D = 0.0013
HEAT_SIGMA = 0.15
HEAT_TIME = 50.0
HEAT_SIDE = 4.0  # cm
HEAT_RADIUS = 0.8  # error is measured within this distance of the center

# Benchmark slab corners (mm), stimulated at the first one.
CUBOID_CORNERS = {
    "P1": (0.0, 0.0, 0.0),
    "P2": (0.0, 1.0, 0.0),
    "P3": (1.0, 0.0, 0.0),
    "P4": (1.0, 1.0, 0.0),
    "P5": (0.0, 0.0, 1.0),
    "P6": (0.0, 1.0, 1.0),
    "P7": (1.0, 0.0, 1.0),
    "P8": (1.0, 1.0, 1.0),
}


def heat_kernel_error(assemble, h):
    """Relative L2 error of a spreading Gaussian after HEAT_TIME ms, taken
    over the nodes within HEAT_RADIUS of the center."""
    n = int(round(HEAT_SIDE / h))
    _, partition = build_voxel_partition((n, n), h)
    operators = assemble(partition, d0=HEAT_D, rho=1.0)
    r2 = np.sum((partition.points.positions - HEAT_SIDE / 2) ** 2, axis=1)
    V = np.exp(-r2 / (2 * HEAT_SIGMA**2))
    solver = DiffusionSolver(operators, 0.05, theta=0.5, tolerance=1e-12)
    for _ in range(int(round(HEAT_TIME / 0.05))):
        V = solver.step(V)
    spread = HEAT_SIGMA**2 + 2 * HEAT_D * HEAT_TIME
    exact = HEAT_SIGMA**2 / spread * np.exp(-r2 / (2 * spread))
    interior = r2 < HEAT_RADIUS**2
    return float(np.linalg.norm((V - exact)[interior]) / np.linalg.norm(exact[interior]))


def propagation_config(size_mm, spacing_mm, fiber, rho=0.15, penalty=1.0, total=60.0, dt=0.1):
    return config_from_dict(
        {
            "deterministic": True,
            "geometry": {"size_mm": size_mm, "spacing_mm": spacing_mm},
            "physics": {"d0": 0.0013, "rho": rho, "fiber": fiber},
            "fpm": {"penalty": penalty},
            "time": {"dt": dt, "total": total},
            "stimulus": [
                {"amplitude": 50.0, "duration": 2.0, "region": {"upper_mm": [size_mm[0] / 10]}}
            ],
        }
    )


def thin_strip(fiber):
    return propagation_config([5.0, 0.1], 0.025, fiber, rho=0.12, total=50.0, dt=0.05)


def strip_cv(config):
    """Conduction velocity (cm/ms) between the 25% and 75% points of x."""
    result = run_simulation(build_problem(config))
    positions = result.activation.positions
    a, b = cv_probe_pair(positions, axis=0)
    return compute_cv(result.activation, a, b)


def cuboid_config(size_mm, spacing_mm, stimulus_mm, total):
    probes = [
        {"name": name, "position_mm": [c * s for c, s in zip(corner, size_mm)]}
        for name, corner in CUBOID_CORNERS.items()
    ]
    probes.append({"name": "C", "position_mm": [s / 2 for s in size_mm]})
    return config_from_dict(
        {
            "deterministic": True,
            "geometry": {"size_mm": size_mm, "spacing_mm": spacing_mm},
            "physics": {"d0": 0.00115, "rho": 0.12, "fiber": [0.0, 0.0, 1.0]},
            "time": {"dt": 0.1, "total": total},
            "stimulus": [
                {"amplitude": 50.0, "duration": 2.0, "region": {"upper_mm": [stimulus_mm] * 3}}
            ],
            "probes": probes,
        }
    )


def probe_lats(config):
    problem = build_problem(config)
    result = run_simulation(problem)
    return {trace.name: trace.lat(problem.lat_threshold) for trace in result.traces}


@pytest.mark.slow
def test_heat_kernel_convergence(assemble):
    errors = [heat_kernel_error(assemble, h) for h in (0.1, 0.05, 0.025)]
    assert errors[2] < 0.02
    for coarse, fine in zip(errors, errors[1:]):
        assert coarse / fine >= 2.8


@pytest.mark.slow
def test_splitting_orders():
    config = config_from_dict(
        {
            "deterministic": True,
            "geometry": {"size_mm": [10.0, 10.0], "spacing_mm": 1.0},
            "physics": {"rho": 1.0},
            "time": {"total": 2.0, "tolerance": 1e-12},
            "ionic": {"model": "passive", "parameters": {"g": 0.5}},
            "stimulus": [
                {
                    "amplitude": 20.0,
                    "duration": 5.0,
                    "period": 10.0,
                    "region": {"upper_mm": [5.0, 10.0]},
                }
            ],
        }
    )
    problem = build_problem(config)

    def final_V(dt, splitting, scheme, theta):
        plan = TimeIntegrationPlan(
            dt=dt,
            total=2.0,
            splitting=splitting,
            reaction_scheme=scheme,
            theta=theta,
            tolerance=1e-12,
        )
        return run_simulation(replace(problem, plan=plan)).V

    reference = final_V(0.0005, "strang", "heun", 0.5)

    def order(splitting, scheme, theta):
        coarse = np.max(np.abs(final_V(0.1, splitting, scheme, theta) - reference))
        fine = np.max(np.abs(final_V(0.05, splitting, scheme, theta) - reference))
        return np.log2(coarse / fine)

    assert 0.8 <= order("godunov", "euler", 1.0) <= 1.2
    assert order("strang", "heun", 0.5) >= 1.7


@pytest.mark.slow
def test_penalty_convergence():
    spacings = (2.0, 1.0, 0.5, 0.25)
    cv = {
        (spacing, p): strip_cv(propagation_config([20.0, 4.0], spacing, [1.0, 0.0], penalty=p))
        for spacing in spacings
        for p in (1.0, 2.0)
    }
    for p in (1.0, 2.0):
        errors = [abs(relative_error(cv[(s, p)], cv[(0.25, p)])) for s in spacings[:-1]]
        assert errors[0] > errors[1] > errors[2]
    assert abs(relative_error(cv[(0.25, 2.0)], cv[(0.25, 1.0)])) < 0.02


def test_thread_count_does_not_change_results(strip_config):
    config = parse_config(strip_config)
    serial = run_simulation(build_problem(config, threads=1, deterministic=True))
    threaded = run_simulation(build_problem(config, threads=4, deterministic=True))
    for a, b in zip(serial.traces, threaded.traces):
        np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(serial.V, threaded.V)


@pytest.mark.slow
def test_anisotropy_ratio():
    """Along- and across-fiber speeds on two thin strips, each with a planar
    front along x. The slab cases only check activation order, since a
    corner stimulus gives no planar front to time."""
    along = strip_cv(thin_strip([1.0, 0.0]))
    across = strip_cv(thin_strip([0.0, 1.0]))
    assert along / across == pytest.approx(np.sqrt(1 / 0.12), rel=0.15)


@pytest.mark.slow
def test_cuboid_activation_order():
    lats = probe_lats(cuboid_config([3.0, 7.0, 20.0], 0.5, 1.5, total=120.0))
    assert all(np.isfinite(lat) for lat in lats.values())
    assert lats["P1"] < lats["P3"] < lats["P8"]
    assert lats["C"] < lats["P8"]


@pytest.mark.slow
def test_cuboid_refinement():
    size = [1.6, 3.6, 5.0]
    coarse = probe_lats(cuboid_config(size, 0.2, 0.6, total=40.0))
    fine = probe_lats(cuboid_config(size, 0.1, 0.6, total=40.0))
    for name in fine:
        if name == "P1":
            continue
        assert np.isfinite(fine[name])
        assert coarse[name] == pytest.approx(fine[name], rel=0.15, abs=1.0)
