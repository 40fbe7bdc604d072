"""Shared problem builders and cached long runs for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

import dampedwave as dw
from dampedwave.eigs import smallest_generalized_eigenvalue
from dampedwave.roots import bisect_increasing


def unit_operator(n: int, dim: int = 1):
    if dim == 1:
        grid = dw.build_grid(1, 1.0, n)
    else:
        grid = dw.build_grid(2, (1.0, 1.0), (n, n))
    return grid, dw.assemble(grid, dw.CoefficientField.identity())


def eigenmode_problem(
    n=64,
    feedback=None,
    schedule=None,
    p=3.0,
    e0_target=0.1,
    source_scale=1.0,
    dim=1,
):
    """Problem with u0 = first eigenmode scaled so E(0) hits e0_target, u1 = 0."""
    grid, op = unit_operator(n, dim)
    feedback = feedback or dw.linear_feedback(1.0)
    schedule = schedule or dw.constant_schedule(1.0)
    _, mode, _ = smallest_generalized_eigenvalue(op.stiffness, op.lumped_mass)
    mode = mode / np.abs(mode).max()
    a_mode = float(mode @ (op.stiffness @ mode))
    src_mode = float(np.sum(op.lumped_mass * np.abs(mode) ** (p + 1.0)))

    def energy_of(alpha):
        return 0.5 * alpha**2 * a_mode - source_scale * alpha ** (p + 1.0) * src_mode / (
            p + 1.0
        )

    if source_scale > 0 and p > 1:
        alpha_peak = (a_mode / (source_scale * src_mode)) ** (1.0 / (p - 1.0))
    else:
        alpha_peak = 1e6
    alpha = bisect_increasing(energy_of, 0.0, alpha_peak, target=e0_target, xtol=1e-15)
    return dw.Problem(
        grid=grid,
        operator=op,
        feedback=feedback,
        schedule=schedule,
        p=p,
        u0=dw.GridFunction(grid, alpha * mode),
        u1=dw.GridFunction(grid, np.zeros(grid.n_nodes)),
        source_scale=source_scale,
    )


@pytest.fixture(scope="session")
def linear_problem_n64():
    return eigenmode_problem(n=64, feedback=dw.linear_feedback(1.0), e0_target=0.1)


@pytest.fixture(scope="session")
def power3_problem_n64():
    return eigenmode_problem(n=64, feedback=dw.power_feedback(3.0), e0_target=0.1)


@pytest.fixture(scope="session")
def run_linear_T10(linear_problem_n64):
    """Criterion-1 configuration: linear g, gamma=1, p=3, dt=1e-3, T=10."""
    return dw.simulate(
        linear_problem_n64, dw.StepperConfig(dt=1e-3, t_end=10.0, record_every=1)
    )


@pytest.fixture(scope="session")
def run_linear_T10_half(linear_problem_n64):
    return dw.simulate(
        linear_problem_n64, dw.StepperConfig(dt=5e-4, t_end=10.0, record_every=1)
    )


@pytest.fixture(scope="session")
def run_power3_T10(power3_problem_n64):
    return dw.simulate(
        power3_problem_n64, dw.StepperConfig(dt=1e-3, t_end=10.0, record_every=1)
    )


@pytest.fixture(scope="session")
def run_linear_T50(linear_problem_n64):
    """Criterion-4 configuration; also feeds the integral-inequality checker."""
    return dw.simulate(
        linear_problem_n64, dw.StepperConfig(dt=5e-3, t_end=50.0, record_every=1)
    )


@pytest.fixture(scope="session")
def run_power3_T200(power3_problem_n64):
    """Criterion-5 configuration: m=3 power damping out to T=200."""
    return dw.simulate(
        power3_problem_n64, dw.StepperConfig(dt=5e-3, t_end=200.0, record_every=1)
    )


@pytest.fixture(scope="session")
def well_calibrated_run():
    """Criterion-3 configuration: E(0) = 0.75 F1 with the grid-estimated M."""
    grid, op = unit_operator(64)
    embedding = dw.estimate_embedding(grid, op, 3.0)
    _, f1 = dw.thresholds(1.0, embedding.M, 3.0)
    problem = eigenmode_problem(n=64, e0_target=0.75 * f1)
    record = dw.simulate(problem, dw.StepperConfig(dt=5e-3, t_end=50.0, record_every=1))
    analysis = dw.analyze_problem(problem, embedding)
    return problem, embedding, analysis, record
