"""Time integration of lumped_mass * u'' + K u + gamma(t) lumped_mass * g(u') = lumped_mass * f(u).

Leapfrog (Stormer-Verlet) with the damping taken implicitly at the velocity
midpoint: each node update solves the scalar, strictly monotone equation
v + dt*gamma*g((v + v_old)/2) = rhs, so the step inherits a discrete energy
identity whose residual is second order in dt.  Stiffness and source stay
explicit; a CFL guard bounds dt against the largest generalized eigenvalue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from dampedwave.eigs import largest_generalized_eigenvalue
from dampedwave.field import GridFunction
from dampedwave.model import Problem, eval_source

BLOWUP_THRESHOLD = 1e10


class SolverError(RuntimeError):
    pass


class BlowUpError(RuntimeError):
    """Trajectory left the representable range; carries the last finite state."""

    def __init__(self, time: float, state: "State", record: "EnergyRecord | None" = None):
        super().__init__(f"solution blew up at t = {time:.6g}")
        self.time = time
        self.state = state
        self.record = record


@dataclass(frozen=True)
class State:
    """Trajectory state; v is the staggered velocity at t - dt/2 inside the
    stepper and the time-centered velocity in recorded/terminal states."""

    t: float
    u: GridFunction
    v: GridFunction


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    t_end: float
    record_every: int = 1
    newton_tol: float = 1e-12
    newton_max_iter: int = 60

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class EnergyRecord:
    """Sampled energy time series with the discrete balance residual.

    total = quadratic - source_scale * source_norm / (p+1) by construction;
    identity_residual[i] = |total[i] + dissipation_cumulative[i] - total[0]|.
    """

    times: np.ndarray
    quadratic: np.ndarray
    total: np.ndarray
    dissipation_cumulative: np.ndarray
    bilinear: np.ndarray
    source_norm: np.ndarray
    identity_residual: np.ndarray
    final_state: State | None = None
    blew_up: bool = False

    def __post_init__(self):
        for name in (
            "times",
            "quadratic",
            "total",
            "dissipation_cumulative",
            "bilinear",
            "source_norm",
            "identity_residual",
        ):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def synthetic(cls, times, total) -> "EnergyRecord":
        """Record with a prescribed total-energy trace (for fitting tests)."""
        times = np.asarray(times, dtype=float)
        total = np.asarray(total, dtype=float)
        zeros = np.zeros_like(total)
        return cls(
            times=times,
            quadratic=total.copy(),
            total=total,
            dissipation_cumulative=total[0] - total,
            bilinear=zeros.copy(),
            source_norm=zeros.copy(),
            identity_residual=zeros.copy(),
        )


def _solve_velocity_nodes(
    v_old: np.ndarray,
    rhs: np.ndarray,
    c: float,
    feedback,
    tol: float,
    max_iter: int,
) -> np.ndarray:
    """Solve v + c*g((v + v_old)/2) = rhs per node (c >= 0).

    The residual has slope >= 1 in v, so the root lies within |residual| of
    any iterate; Newton steps are clipped to that shrinking bracket with a
    bisection fallback, which also covers the origin-degenerate feedback
    where g' vanishes.
    """
    if c == 0.0:
        return rhs.copy()

    def residual(v):
        return v + c * feedback(0.5 * (v + v_old)) - rhs

    v = rhs.copy()
    r = residual(v)
    lo = v - np.maximum(r, 0.0)
    hi = v - np.minimum(r, 0.0)
    # Tolerance follows the local velocity scale so damping stays resolved
    # long after the trajectory has decayed to tiny amplitudes.
    scale = max(float(np.max(np.abs(rhs))), float(np.max(np.abs(v_old))), 1e-300)
    for _ in range(max_iter):
        err = np.abs(r)
        if float(err.max()) <= tol * scale:
            return v
        slope = 1.0 + 0.5 * c * feedback.derivative(0.5 * (v + v_old))
        candidate = v - r / slope
        mid = 0.5 * (lo + hi)
        inside = (candidate > lo) & (candidate < hi)
        v = np.where(inside, candidate, mid)
        r = residual(v)
        lo = np.where(r <= 0, v, lo)
        hi = np.where(r > 0, v, hi)
    worst = int(np.argmax(np.abs(r)))
    raise SolverError(
        f"damping solve did not converge at node {worst}: residual {r[worst]:.3e} "
        f"after {max_iter} iterations"
    )


def _acceleration(problem: Problem, u_vals: np.ndarray) -> np.ndarray:
    op = problem.operator
    return (
        problem.source_scale * eval_source(problem.p, u_vals)
        - (op.stiffness @ u_vals) / op.lumped_mass
    )


def step(problem: Problem, state: State, config: StepperConfig) -> State:
    """One leapfrog step; state.v is the staggered velocity at state.t - dt/2."""
    dt = config.dt
    gamma_n = float(problem.schedule.gamma(state.t))
    rhs = state.v.values + dt * _acceleration(problem, state.u.values)
    if not np.all(np.abs(rhs) < BLOWUP_THRESHOLD):
        raise BlowUpError(state.t + dt, state)
    v_new = _solve_velocity_nodes(
        state.v.values, rhs, dt * gamma_n, problem.feedback,
        config.newton_tol, config.newton_max_iter,
    )
    u_new = state.u.values + dt * v_new
    if not np.all(np.abs(u_new) < BLOWUP_THRESHOLD) or not np.all(
        np.abs(v_new) < BLOWUP_THRESHOLD
    ):
        raise BlowUpError(state.t + dt, state)
    return State(
        t=state.t + dt,
        u=GridFunction(problem.grid, u_new),
        v=GridFunction(problem.grid, v_new),
    )


def check_cfl(problem: Problem, dt: float) -> float:
    """dt * sqrt(max generalized eigenvalue) must stay <= 2; returns the product."""
    lam = largest_generalized_eigenvalue(
        problem.operator.stiffness, problem.operator.lumped_mass
    )
    number = dt * math.sqrt(lam)
    if number > 2.0:
        raise ValueError(
            f"CFL guard violated: dt*sqrt(lam_max) = {number:.4g} > 2 "
            f"(lam_max = {lam:.4g}); reduce dt below {2.0 / math.sqrt(lam):.4g}"
        )
    return number


def simulate(problem: Problem, config: StepperConfig) -> EnergyRecord:
    """Run the trajectory and record energies every record_every steps.

    The dissipation integral uses the same midpoint velocities as the
    implicit solve, accumulated over the staggered windows [t_{n-1/2},
    t_{n+1/2}], with a half-increment correction at each record time so the
    discrete balance total + dissipation = total(0) telescopes to O(dt^2).
    """
    check_cfl(problem, config.dt)
    op = problem.operator
    mass = op.lumped_mass
    dt = config.dt
    p = problem.p
    n_steps = int(round(config.t_end / dt))
    if n_steps < 1:
        raise ValueError("t_end shorter than one step")

    times, quadratic, total, dissipation, bilinear, source = [], [], [], [], [], []
    residuals = []

    def record(t, u_vals, v_center, diss):
        a_uu = float(u_vals @ (op.stiffness @ u_vals))
        kin = 0.5 * float(np.sum(mass * v_center * v_center))
        src = float(np.sum(mass * np.abs(u_vals) ** (p + 1.0)))
        quad = kin + 0.5 * a_uu
        tot = quad - problem.source_scale * src / (p + 1.0)
        times.append(t)
        quadratic.append(quad)
        total.append(tot)
        dissipation.append(diss)
        bilinear.append(a_uu)
        source.append(src)
        residuals.append(abs(tot + diss - total[0]))

    u = problem.u0.values.copy()
    v0 = problem.u1.values.copy()
    record(0.0, u, v0, 0.0)

    # Startup half step: advances the velocity to the t = dt/2 stagger with
    # the same implicit midpoint damping.
    gamma_0 = float(problem.schedule.gamma(0.0))
    rhs = v0 + 0.5 * dt * _acceleration(problem, u)
    v_prev = _solve_velocity_nodes(
        v0, rhs, 0.5 * dt * gamma_0, problem.feedback,
        config.newton_tol, config.newton_max_iter,
    )
    v_mid = 0.5 * (v0 + v_prev)
    accum = 0.5 * dt * gamma_0 * float(np.sum(mass * problem.feedback(v_mid) * v_mid))
    u = u + dt * v_prev

    final_state = None
    for n in range(1, n_steps + 1):
        t_n = n * dt

        def _blow_up():
            partial = _build_record(
                times, quadratic, total, dissipation, bilinear, source, residuals,
                final_state=None, blew_up=True,
            )
            last = State(
                t=t_n - dt,
                u=GridFunction(problem.grid, np.nan_to_num(u, posinf=0, neginf=0)),
                v=GridFunction(problem.grid, np.zeros_like(u)),
            )
            raise BlowUpError(t_n - dt, last, partial)

        if not np.all(np.abs(u) < BLOWUP_THRESHOLD):
            _blow_up()
        gamma_n = float(problem.schedule.gamma(t_n))
        rhs = v_prev + dt * _acceleration(problem, u)
        if not np.all(np.abs(rhs) < BLOWUP_THRESHOLD):
            _blow_up()
        v_next = _solve_velocity_nodes(
            v_prev, rhs, dt * gamma_n, problem.feedback,
            config.newton_tol, config.newton_max_iter,
        )
        v_mid = 0.5 * (v_prev + v_next)
        inc = dt * gamma_n * float(np.sum(mass * problem.feedback(v_mid) * v_mid))
        if n % config.record_every == 0 or n == n_steps:
            record(t_n, u, v_mid, accum + 0.5 * inc)
        if n == n_steps:
            final_state = State(
                t=t_n,
                u=GridFunction(problem.grid, u),
                v=GridFunction(problem.grid, v_mid),
            )
            break
        accum += inc
        u = u + dt * v_next
        v_prev = v_next

    return _build_record(
        times, quadratic, total, dissipation, bilinear, source, residuals,
        final_state=final_state, blew_up=False,
    )


def _build_record(times, quadratic, total, dissipation, bilinear, source, residuals,
                  final_state, blew_up) -> EnergyRecord:
    return EnergyRecord(
        times=np.array(times),
        quadratic=np.array(quadratic),
        total=np.array(total),
        dissipation_cumulative=np.array(dissipation),
        bilinear=np.array(bilinear),
        source_norm=np.array(source),
        identity_residual=np.array(residuals),
        final_state=final_state,
        blew_up=blew_up,
    )


@dataclass(frozen=True)
class RefinementStudy:
    dts: tuple
    max_residuals: tuple
    orders: tuple  # log2(r_k / r_{k+1}) between consecutive levels


def identity_residual_study(
    problem: Problem, config: StepperConfig, refinements
) -> RefinementStudy:
    """Max balance residual at each dt plus the observed convergence orders."""
    dts = tuple(float(dt) for dt in refinements)
    if len(dts) < 3:
        raise ValueError("need at least 3 refinement levels")
    residuals = []
    for dt in dts:
        cfg = StepperConfig(
            dt=dt,
            t_end=config.t_end,
            record_every=config.record_every,
            newton_tol=config.newton_tol,
            newton_max_iter=config.newton_max_iter,
        )
        rec = simulate(problem, cfg)
        residuals.append(float(rec.identity_residual.max()))
    orders = tuple(
        math.log2(residuals[k] / residuals[k + 1]) for k in range(len(dts) - 1)
    )
    return RefinementStudy(dts=dts, max_residuals=tuple(residuals), orders=orders)


def reference_solve(problem: Problem, t_end: float, tol: float = 1e-10) -> State:
    """High-order adaptive oracle for the same semi-discrete system.

    Desk-scale only (<= 16 interior nodes); returns the non-staggered state
    (u, u') at t_end.  Used by tests to cross-check the production stepper.
    """
    n = problem.grid.n_nodes
    if n > 16:
        raise ValueError(f"reference oracle limited to 16 interior nodes, grid has {n}")
    op = problem.operator
    mass = op.lumped_mass

    def rhs(t, y):
        u, v = y[:n], y[n:]
        acc = (
            problem.source_scale * eval_source(problem.p, u)
            - (op.stiffness @ u) / mass
            - float(problem.schedule.gamma(t)) * np.asarray(problem.feedback(v))
        )
        return np.concatenate([v, acc])

    y0 = np.concatenate([problem.u0.values, problem.u1.values])
    sol = solve_ivp(
        rhs, (0.0, t_end), y0, method="DOP853", rtol=tol, atol=tol,
        t_eval=[t_end], max_step=np.inf,
    )
    if not sol.success:
        raise SolverError(f"reference integration failed: {sol.message}")
    y = sol.y[:, -1]
    return State(
        t=t_end,
        u=GridFunction(problem.grid, y[:n]),
        v=GridFunction(problem.grid, y[n:]),
    )
