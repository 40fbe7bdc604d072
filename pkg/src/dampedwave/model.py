"""Problem data: damping feedback, origin profile, schedule, source, initial state.

The feedback catalog covers the three regimes the decay theory distinguishes:
linear, power growth, and a feedback that degenerates faster than any
polynomial at the origin.  Each catalog entry carries an origin profile h
that sandwiches it near zero, h(s) s <= g(s) s <= h^{-1}(s) s on |s| <= 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from dampedwave.field import Grid, GridFunction, DiscreteOperator
from dampedwave.roots import bisect_increasing


# ---------------------------------------------------------------------------
# Origin profiles
# ---------------------------------------------------------------------------


class OriginProfile:
    """Strictly increasing odd function h on [-1, 1] with its inverse.

    h_inverse may be a closed form; when omitted it falls back to bisection
    on [0, 1] (unique root since h is strictly increasing).
    """

    def __init__(self, h, h_inverse=None, params=None, kind="custom"):
        self.kind = kind
        self.params = dict(params or {})
        self._h = h
        self._h_inverse = h_inverse
        self.h_at_one = float(h(1.0))
        if not (self.h_at_one > 0):
            raise ValueError("origin profile must satisfy h(1) > 0")
        # Closed-form inverses extend beyond h(1); the bisection fallback is
        # confined to h's range on [0, 1].
        self.inverse_domain_max = math.inf if h_inverse is not None else self.h_at_one

    def h(self, s):
        return self._h(s)

    def h_inverse(self, y):
        if self._h_inverse is not None:
            return self._h_inverse(y)
        y_arr = np.asarray(y, dtype=float)
        out = np.empty_like(y_arr, dtype=float)
        for idx, yv in np.ndenumerate(y_arr):
            sign = 1.0 if yv >= 0 else -1.0
            mag = abs(yv)
            if mag > self.h_at_one * (1 + 1e-12):
                raise ValueError(
                    f"h_inverse argument {yv!r} outside [-h(1), h(1)] = "
                    f"[{-self.h_at_one!r}, {self.h_at_one!r}]"
                )
            mag = min(mag, self.h_at_one)
            out[idx] = sign * bisect_increasing(self._h, 0.0, 1.0, target=mag)
        return out if out.shape else float(out)


def power_profile(m: float, coefficient: float = 1.0) -> OriginProfile:
    """h(s) = c |s|^(m-1) s with closed-form inverse."""
    if m < 1:
        raise ValueError(f"profile exponent m must be >= 1, got {m}")
    if coefficient <= 0:
        raise ValueError(f"profile coefficient must be positive, got {coefficient}")
    c = float(coefficient)

    def h(s):
        s = np.asarray(s, dtype=float)
        val = c * np.abs(s) ** (m - 1.0) * s
        return val if val.shape else float(val)

    def h_inv(y):
        y = np.asarray(y, dtype=float)
        val = np.sign(y) * (np.abs(y) / c) ** (1.0 / m)
        return val if val.shape else float(val)

    return OriginProfile(h, h_inv, params={"m": m, "coefficient": c}, kind="power")


def _degenerate_core(s):
    """sign(s) |s|^3 exp(-1/s^2), exactly odd by construction."""
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    safe = np.where(a == 0.0, 1.0, a)
    with np.errstate(divide="ignore", over="ignore"):
        mag = np.where(a == 0.0, 0.0, safe**3 * np.exp(-1.0 / safe**2))
    return np.sign(s) * mag


def degenerate_profile() -> OriginProfile:
    """h(s) = s^3 exp(-1/s^2): flatter than any polynomial at the origin."""

    def h(s):
        val = _degenerate_core(s)
        return val if val.shape else float(val)

    return OriginProfile(h, None, params={}, kind="degenerate")


# ---------------------------------------------------------------------------
# Feedback
# ---------------------------------------------------------------------------


class Feedback:
    """Monotone increasing damping nonlinearity g with g(0) = 0.

    b1 |s|^(m+1) <= g(s) s <= b2 |s|^(m+1) for |s| > 1, and the origin
    profile sandwich holds on |s| <= 1.
    """

    def __init__(self, kind, m, b1, b2, origin_profile, fn, dfn):
        self.kind = kind
        self.m = float(m)
        self.b1 = float(b1)
        self.b2 = float(b2)
        self.origin_profile = origin_profile
        self._fn = fn
        self._dfn = dfn

    def __call__(self, s):
        return self._fn(s)

    def derivative(self, s):
        return self._dfn(s)


def eval_feedback(feedback: Feedback, s):
    """g(s); odd by construction of the catalog."""
    return feedback(s)


def linear_feedback(slope: float = 1.0) -> Feedback:
    if slope <= 0:
        raise ValueError(f"slope must be positive, got {slope}")
    a = float(slope)

    def fn(s):
        s = np.asarray(s, dtype=float)
        val = a * s
        return val if val.shape else float(val)

    def dfn(s):
        s = np.asarray(s, dtype=float)
        val = np.full_like(s, a)
        return val if val.shape else float(val)

    profile = power_profile(1.0, min(a, 1.0 / a))
    return Feedback("linear", 1.0, a, a, profile, fn, dfn)


def power_feedback(m: float, coefficient: float = 1.0) -> Feedback:
    """g(s) = b |s|^(m-1) s; a single formula for both growth regimes."""
    if m < 1:
        raise ValueError(f"growth exponent m must be >= 1, got {m}")
    if coefficient <= 0:
        raise ValueError(f"coefficient must be positive, got {coefficient}")
    b = float(coefficient)

    def fn(s):
        s = np.asarray(s, dtype=float)
        val = b * np.abs(s) ** (m - 1.0) * s
        return val if val.shape else float(val)

    def dfn(s):
        s = np.asarray(s, dtype=float)
        val = b * m * np.abs(s) ** (m - 1.0)
        return val if val.shape else float(val)

    # The largest c with c|s|^(m-1)s below g and c-inverse above g on [0, 1];
    # equals b itself whenever b <= 1.
    c = min(b, b ** (-m))
    profile = power_profile(m, c)
    return Feedback("power", m, b, b, profile, fn, dfn)


def origin_degenerate_feedback(m: float = 3.0) -> Feedback:
    """g = s^3 exp(-1/s^2) inside |s| <= 1, spliced to e^{-1}|s|^(m-1)s outside."""
    if m < 1:
        raise ValueError(f"growth exponent m must be >= 1, got {m}")
    b = math.exp(-1.0)  # continuity at |s| = 1

    def fn(s):
        s = np.asarray(s, dtype=float)
        inner = np.abs(s) <= 1.0
        outer = b * np.abs(s) ** (m - 1.0) * s
        val = np.where(inner, _degenerate_core(s), outer)
        return val if val.shape else float(val)

    def dfn(s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        inner = a <= 1.0
        safe = np.where(a == 0.0, 1.0, a)
        with np.errstate(divide="ignore", over="ignore"):
            core = np.where(a == 0.0, 0.0, (3.0 * safe**2 + 2.0) * np.exp(-1.0 / safe**2))
        outer = b * m * a ** (m - 1.0)
        val = np.where(inner, core, outer)
        return val if val.shape else float(val)

    return Feedback("origin_degenerate", m, b, b, degenerate_profile(), fn, dfn)


# ---------------------------------------------------------------------------
# Source
# ---------------------------------------------------------------------------


def eval_source(p: float, s):
    """Source nonlinearity |s|^(p-1) s."""
    if p < 1:
        raise ValueError(f"source exponent p must be >= 1, got {p}")
    s = np.asarray(s, dtype=float)
    val = np.abs(s) ** (p - 1.0) * s
    return val if val.shape else float(val)


def source_potential(op: DiscreteOperator, u: GridFunction, p: float) -> float:
    """Lumped integral of |u|^(p+1), the (p+1)-scaled source potential."""
    return float(np.sum(op.lumped_mass * np.abs(u.values) ** (p + 1.0)))


# ---------------------------------------------------------------------------
# Damping schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleFlags:
    """Declared assumptions for the schedule, verified by sampling."""

    bounded: bool = True
    nonincreasing_divergent: bool = False
    bounded_below: bool = False


class DampingSchedule:
    """Nonnegative damping coefficient gamma(t) with its primitive."""

    def __init__(self, gamma, primitive=None, flags=None, gamma0=None, label="custom"):
        self.label = label
        self._gamma = gamma
        self._primitive = primitive
        self.flags = flags if flags is not None else ScheduleFlags()
        self.gamma0 = gamma0

    def gamma(self, t):
        return self._gamma(t)

    def __call__(self, t):
        return self._gamma(t)

    @property
    def has_closed_primitive(self) -> bool:
        return self._primitive is not None

    def primitive(self, t: float) -> float:
        if t < 0:
            raise ValueError(f"primitive requires t >= 0, got {t}")
        if self._primitive is not None:
            return float(self._primitive(t))
        val, _ = quad(self._gamma, 0.0, t, epsabs=1e-10, limit=200)
        return float(val)

    def primitive_many(self, ts: np.ndarray) -> np.ndarray:
        """Cumulative primitive at sorted times (piecewise quadrature)."""
        ts = np.asarray(ts, dtype=float)
        if np.any(ts < 0):
            raise ValueError("primitive requires t >= 0")
        if self._primitive is not None:
            return np.asarray([self._primitive(t) for t in ts], dtype=float)
        order = np.argsort(ts)
        sorted_ts = ts[order]
        out_sorted = np.empty_like(sorted_ts)
        acc = 0.0
        prev = 0.0
        for i, t in enumerate(sorted_ts):
            if t > prev:
                seg, _ = quad(self._gamma, prev, t, epsabs=1e-10, limit=200)
                acc += seg
                prev = t
            out_sorted[i] = acc
        out = np.empty_like(out_sorted)
        out[order] = out_sorted
        return out


def gamma_primitive(schedule: DampingSchedule, t: float) -> float:
    """Gamma(t) = int_0^t gamma(s) ds, closed form when available."""
    return schedule.primitive(t)


def constant_schedule(gamma0: float = 1.0) -> DampingSchedule:
    if gamma0 < 0:
        raise ValueError(f"gamma0 must be nonnegative, got {gamma0}")
    g0 = float(gamma0)
    return DampingSchedule(
        gamma=lambda t: np.full_like(np.asarray(t, dtype=float), g0)
        if np.asarray(t).shape
        else g0,
        primitive=lambda t: g0 * t,
        flags=ScheduleFlags(bounded=True, nonincreasing_divergent=True, bounded_below=g0 > 0),
        gamma0=g0,
        label=f"constant({g0:g})",
    )


def power_schedule(q: float, scale: float = 1.0) -> DampingSchedule:
    """gamma(t) = scale * (1+t)^(-q); divergent primitive iff q <= 1."""
    if q < 0:
        raise ValueError(f"decay exponent q must be >= 0, got {q}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    c = float(scale)

    def gamma(t):
        t = np.asarray(t, dtype=float)
        val = c * (1.0 + t) ** (-q)
        return val if val.shape else float(val)

    if q == 1.0:
        primitive = lambda t: c * math.log1p(t)
    else:
        primitive = lambda t: c * ((1.0 + t) ** (1.0 - q) - 1.0) / (1.0 - q)

    return DampingSchedule(
        gamma=gamma,
        primitive=primitive,
        flags=ScheduleFlags(
            bounded=True, nonincreasing_divergent=q <= 1.0, bounded_below=q == 0.0
        ),
        gamma0=c if q == 0.0 else None,
        label=f"power(q={q:g}, scale={c:g})",
    )


# ---------------------------------------------------------------------------
# Problem and validation
# ---------------------------------------------------------------------------


@dataclass
class Problem:
    """Full initial-boundary value problem data on a discrete grid.

    source_scale multiplies the source term; it exists so tests can switch the
    source off (source_scale=0) and compare against closed-form oscillators.
    """

    grid: Grid
    operator: DiscreteOperator
    feedback: Feedback
    schedule: DampingSchedule
    p: float
    u0: GridFunction
    u1: GridFunction
    source_scale: float = 1.0

    def __post_init__(self):
        if self.operator.grid != self.grid:
            raise ValueError("operator assembled on a different grid")
        if self.u0.grid != self.grid or self.u1.grid != self.grid:
            raise ValueError("initial data must live on the problem grid")
        if not np.isfinite(self.p) or self.p < 1:
            raise ValueError(f"source exponent p must be finite and >= 1, got {self.p}")


@dataclass
class AssumptionCheck:
    name: str
    requested: bool
    passed: bool
    detail: str = ""
    witness: dict = field(default_factory=dict)


@dataclass
class ValidationReport:
    checks: list
    derived_constants: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.requested)

    def failures(self) -> list:
        return [c for c in self.checks if c.requested and not c.passed]

    def lines(self) -> list:
        out = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            tag = "" if c.requested else " (informational)"
            msg = f"  {c.name:<18} {status}{tag}"
            if c.detail:
                msg += f"  {c.detail}"
            out.append(msg)
        return out


_TIME_SAMPLES = np.concatenate([[0.0], np.logspace(-6, 6, 400)])


def _sample_s(n: int = 1000, lo: float = 1e-8, hi: float = 1.0) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def _check_h1(schedule: DampingSchedule) -> AssumptionCheck:
    vals = np.asarray([schedule.gamma(t) for t in _TIME_SAMPLES], dtype=float)
    finite = np.all(np.isfinite(vals))
    nonneg = np.all(vals >= -1e-14)
    if finite and nonneg:
        return AssumptionCheck(
            "H1", True, True, f"sup gamma = {vals.max():.6g} on sampled t"
        )
    k = int(np.argmax(~np.isfinite(vals) | (vals < -1e-14)))
    return AssumptionCheck(
        "H1",
        True,
        False,
        "gamma must be bounded and nonnegative",
        witness={"t": float(_TIME_SAMPLES[k]), "gamma": float(vals[k])},
    )


def _check_h2(feedback: Feedback) -> AssumptionCheck:
    g0 = float(feedback(0.0))
    if g0 != 0.0:
        return AssumptionCheck("H2", True, False, "g(0) != 0", witness={"g(0)": g0})
    # Strict monotone increase; ties are tolerated only where both samples
    # underflowed to exactly zero (the origin-degenerate profile vanishes
    # below double precision for |s| < 0.038).
    s = np.concatenate([-_sample_s(200, 1e-3, 1e3)[::-1], _sample_s(200, 1e-3, 1e3)])
    gs = np.asarray(feedback(s), dtype=float)
    diffs = np.diff(gs)
    underflow_tie = (gs[:-1] == 0.0) & (gs[1:] == 0.0)
    bad = (diffs <= 0) & ~underflow_tie
    if np.any(bad):
        k = int(np.argmax(bad))
        return AssumptionCheck(
            "H2",
            True,
            False,
            "feedback not strictly increasing",
            witness={"s": float(s[k]), "s_next": float(s[k + 1])},
        )
    # Growth bounds at infinity against the declared b1, b2.
    s_big = _sample_s(300, 1.0 + 1e-9, 1e3)
    gss = np.asarray(feedback(s_big), dtype=float) * s_big
    pw = s_big ** (feedback.m + 1.0)
    lo_ok = np.all(gss >= feedback.b1 * pw * (1 - 1e-9))
    hi_ok = np.all(gss <= feedback.b2 * pw * (1 + 1e-9))
    if lo_ok and hi_ok:
        return AssumptionCheck(
            "H2", True, True, f"b1={feedback.b1:g}, b2={feedback.b2:g}, m={feedback.m:g}"
        )
    k = int(np.argmax(~((gss >= feedback.b1 * pw * (1 - 1e-9)) & (gss <= feedback.b2 * pw * (1 + 1e-9)))))
    return AssumptionCheck(
        "H2",
        True,
        False,
        "growth bounds violated for |s| > 1",
        witness={"s": float(s_big[k]), "g(s)s": float(gss[k]), "bound": float(pw[k])},
    )


def _check_h5(schedule: DampingSchedule) -> AssumptionCheck:
    vals = np.asarray([schedule.gamma(t) for t in _TIME_SAMPLES], dtype=float)
    incr = np.diff(vals) > 1e-12 * max(1.0, float(np.abs(vals).max()))
    if np.any(incr):
        k = int(np.argmax(incr))
        return AssumptionCheck(
            "H5",
            True,
            False,
            "gamma not nonincreasing",
            witness={
                "t": float(_TIME_SAMPLES[k]),
                "t_next": float(_TIME_SAMPLES[k + 1]),
                "gamma": float(vals[k]),
                "gamma_next": float(vals[k + 1]),
            },
        )
    # Divergence of the primitive, decided from the sampled log-log decay
    # exponent at large times: int gamma diverges iff gamma decays no faster
    # than 1/t (exponent <= 1, tolerance 0.01 -- undecidable at the boundary).
    exponents = []
    for T in (1e4, 1e6, 1e8):
        g_lo = float(schedule.gamma(T / 1.05))
        g_hi = float(schedule.gamma(T * 1.05))
        if g_hi <= 0.0 or g_lo <= 0.0:
            exponents.append(math.inf)
            continue
        exponents.append(-(math.log(g_hi) - math.log(g_lo)) / (2 * math.log(1.05)))
    worst = max(exponents)
    if worst <= 1.0 + 0.01:
        return AssumptionCheck(
            "H5", True, True, f"tail exponent ~ {worst:.3g} <= 1 (divergent primitive)"
        )
    return AssumptionCheck(
        "H5",
        True,
        False,
        f"primitive converges: gamma tail exponent ~ {worst:.3g} > 1",
        witness={"tail_exponent": float(worst)},
    )


def _check_h5_prime(schedule: DampingSchedule) -> AssumptionCheck:
    gamma0 = schedule.gamma0
    if gamma0 is None or gamma0 <= 0:
        return AssumptionCheck(
            "H5'", True, False, "no positive gamma0 declared for bounded_below flag"
        )
    vals = np.asarray([schedule.gamma(t) for t in _TIME_SAMPLES], dtype=float)
    ok = np.all(vals >= gamma0 - 1e-14)
    if ok:
        return AssumptionCheck("H5'", True, True, f"gamma >= gamma0 = {gamma0:g}")
    k = int(np.argmax(vals < gamma0 - 1e-14))
    return AssumptionCheck(
        "H5'",
        True,
        False,
        "gamma drops below declared gamma0",
        witness={"t": float(_TIME_SAMPLES[k]), "gamma": float(vals[k]), "gamma0": gamma0},
    )


def _check_h6(feedback: Feedback) -> AssumptionCheck:
    prof = feedback.origin_profile
    s = _sample_s(1000, 1e-8, 1.0)
    gs_s = np.asarray(feedback(s), dtype=float) * s
    hs_s = np.asarray(prof.h(s), dtype=float) * s
    # Clipping at the inverse's domain only strengthens the upper bound
    # (h^{-1} is increasing), so the check stays sound for bisection-backed
    # profiles whose inverse is confined to [0, h(1)].
    capped = np.minimum(s, prof.inverse_domain_max)
    hinv_s = np.asarray(prof.h_inverse(capped), dtype=float)
    upper = hinv_s * s
    tol = 1e-12 + 1e-9 * np.maximum(np.abs(gs_s), 1e-300)
    lower_ok = np.all(hs_s <= gs_s + tol)
    upper_ok = np.all(gs_s <= upper + tol)
    if not (lower_ok and upper_ok):
        k = int(np.argmax(~((hs_s <= gs_s + tol) & (gs_s <= upper + tol))))
        return AssumptionCheck(
            "H6",
            True,
            False,
            "origin sandwich violated",
            witness={
                "s": float(s[k]),
                "h(s)s": float(hs_s[k]),
                "g(s)s": float(gs_s[k]),
                "hinv(s)s": float(upper[k]),
            },
        )
    ys = np.linspace(0.0, prof.h_at_one, 101)
    round_trip = np.asarray(prof.h(prof.h_inverse(ys)), dtype=float)
    if np.max(np.abs(round_trip - ys)) > 1e-10:
        k = int(np.argmax(np.abs(round_trip - ys)))
        return AssumptionCheck(
            "H6",
            True,
            False,
            "h(h^{-1}(y)) deviates from y",
            witness={"y": float(ys[k]), "round_trip": float(round_trip[k])},
        )
    odd = np.max(np.abs(np.asarray(prof.h(-s)) + np.asarray(prof.h(s))))
    if odd > 1e-12:
        return AssumptionCheck("H6", True, False, "profile h is not odd")
    return AssumptionCheck("H6", True, True, f"h(1) = {prof.h_at_one:.6g}")


def _derived_constants(feedback: Feedback) -> dict:
    """Near-origin constants implied by the chosen profile, sampled on (0, 1]."""
    out = {"b1": feedback.b1, "b2": feedback.b2, "m": feedback.m}
    s = _sample_s(400, 1e-6, 1.0)
    gss = np.asarray(feedback(s), dtype=float) * s
    if feedback.kind == "linear":
        ratios = gss / s**2
        out["b3"] = float(ratios.min())
        out["b4"] = float(ratios.max())
    elif feedback.kind == "power" and feedback.m > 1:
        m = feedback.m
        out["b5"] = float(feedback.origin_profile.params.get("coefficient", math.nan))
        out["b6"] = float((gss / s ** (m + 1.0)).min())
        out["b7"] = float((gss / s ** ((m + 1.0) / m)).max())
    return out


def validate(problem: Problem) -> ValidationReport:
    """Check (H1)-(H6), (H5') and the source-exponent range by sampling.

    Flags H5/H5' are verified only when the schedule declares them; every
    failing check carries the witness sample.
    """
    checks = [_check_h1(problem.schedule), _check_h2(problem.feedback)]

    # Critical boundary p(m+1)/m = 6 is admitted: the strict inequality only
    # matters for the 3-D embedding, and the flagship linear-feedback p = 3
    # configuration sits exactly on it.
    h3_val = problem.p * (problem.feedback.m + 1.0) / problem.feedback.m
    h3_ok = h3_val <= 6.0 + 1e-12
    if h3_val < 6.0:
        h3_detail = f"p(m+1)/m = {h3_val:.6g} < 6"
    elif h3_ok:
        h3_detail = f"p(m+1)/m = {h3_val:.6g} = 6 (critical)"
    else:
        h3_detail = f"p(m+1)/m = {h3_val:.6g} > 6"
    checks.append(
        AssumptionCheck(
            "H3",
            True,
            h3_ok,
            h3_detail,
            witness={} if h3_ok else {"p(m+1)/m": float(h3_val)},
        )
    )
    h4_ok = problem.u0.grid == problem.grid and problem.u1.grid == problem.grid
    checks.append(AssumptionCheck("H4", True, h4_ok, "initial data finite on grid"))

    if problem.schedule.flags.nonincreasing_divergent:
        checks.append(_check_h5(problem.schedule))
    if problem.schedule.flags.bounded_below:
        checks.append(_check_h5_prime(problem.schedule))
    checks.append(_check_h6(problem.feedback))

    p_ok = 1.0 <= problem.p < 6.0
    checks.append(
        AssumptionCheck(
            "p_range",
            True,
            p_ok,
            f"1 <= p = {problem.p:g} < 6" if p_ok else f"p = {problem.p:g} outside [1, 6)",
        )
    )
    decay_ok = 1.0 < problem.p <= 5.0 and 1.0 <= problem.feedback.m <= 5.0
    checks.append(
        AssumptionCheck(
            "decay_hypotheses",
            False,
            decay_ok,
            f"decay theorems need 1 < p <= 5 and 1 <= m <= 5 "
            f"(p={problem.p:g}, m={problem.feedback.m:g})",
        )
    )
    return ValidationReport(checks=checks, derived_constants=_derived_constants(problem.feedback))
