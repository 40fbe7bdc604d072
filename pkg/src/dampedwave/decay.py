"""Decay-rate engine: theorem envelopes, weight tables, and empirical fits.

Three envelope families bound the total energy: exponential in the damping
clock Gamma(t) for linear feedback, a power of 1 + Gamma(t) for polynomial
feedback, and (H^{-1}(1/t))^2 with H(s) = h(s) s when the feedback only has a
general origin profile.  The weight tables tabulate the auxiliary functions
psi_tilde, phi = psi_tilde^{-1} and chi = 1/phi behind the general envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from dampedwave.model import DampingSchedule, OriginProfile
from dampedwave.roots import bisect_increasing
from dampedwave.solver import EnergyRecord
from dampedwave.textio import write_csv

# Gauss-Legendre nodes/weights on [0, 1] for local refinement between table
# nodes during inversion (the table itself is adaptive quadrature).
_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class ProfileError(ValueError):
    """Origin profile unusable for the requested weight table."""


# ---------------------------------------------------------------------------
# H and its inverse
# ---------------------------------------------------------------------------


def H_value(profile: OriginProfile, s: float) -> float:
    """H(s) = h(s) * s on [0, 1]; strictly increasing with H(0) = 0."""
    if s < 0 or s > 1:
        raise ValueError(f"H is defined on [0, 1], got s = {s}")
    return float(profile.h(s)) * s


def H_inverse(profile: OriginProfile, y: float) -> float:
    """Inverse of H on [0, H(1)] by bisection."""
    h1 = H_value(profile, 1.0)
    if y < 0 or y > h1 * (1 + 1e-12):
        raise ValueError(f"H_inverse argument {y} outside [0, H(1)] = [0, {h1}]")
    y = min(y, h1)
    return bisect_increasing(lambda s: H_value(profile, s), 0.0, 1.0, target=y, xtol=1e-15)


def general_envelope_start(profile: OriginProfile) -> float:
    """Start of the general envelope's validity: t with 1/t inside H's range.

    Profiles with H(1) < 1 (the origin-degenerate entry) push the start from
    1 out to 1/H(1).
    """
    return max(1.0, 1.0 / H_value(profile, 1.0))


# ---------------------------------------------------------------------------
# Weight tables (psi_tilde, phi, chi)
# ---------------------------------------------------------------------------


@dataclass
class WeightTable:
    """Tabulated weight functions on a log-spaced grid over [1, T_max].

    psi_tilde(t) = 1 + int_1^t ds / h(1/s); phi is its inverse; chi = 1/phi;
    phi'(t) = h(1/phi(t)).  tail_integral estimates
    int_1^{T_max} phi'(t) |h^{-1}(phi'(t))|^2 dt, which stays bounded as
    T_max grows.
    """

    profile: OriginProfile
    t_grid: np.ndarray
    psi_tilde: np.ndarray
    phi: np.ndarray
    phi_prime: np.ndarray
    chi: np.ndarray
    tail_integral: float

    def __post_init__(self):
        for name in ("t_grid", "psi_tilde", "phi", "phi_prime", "chi"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def phi_at(self, y: float) -> float:
        """phi(y) by bisection against the tabulated psi_tilde."""
        return _invert_psi(self.profile, self.t_grid, self.psi_tilde, y)

    def psi_at(self, t: float) -> float:
        """psi_tilde(t) from the table plus local quadrature."""
        return _psi_eval(self.profile, self.t_grid, self.psi_tilde, t)

    def to_csv(self, path) -> None:
        write_csv(
            path,
            ["t", "psi_tilde", "phi", "phi_prime", "chi"],
            zip(self.t_grid, self.psi_tilde, self.phi, self.phi_prime, self.chi),
        )


def _psi_integrand(profile: OriginProfile):
    def f(s):
        h_val = profile.h(1.0 / s)
        return 1.0 / h_val

    return f


def _psi_eval(profile, t_grid, psi_table, t: float) -> float:
    if t < t_grid[0] - 1e-12 or t > t_grid[-1] * (1 + 1e-12):
        raise ValueError(f"t = {t} outside tabulated range [1, {t_grid[-1]}]")
    k = int(np.searchsorted(t_grid, t, side="right") - 1)
    k = max(0, min(k, len(t_grid) - 1))
    t0 = t_grid[k]
    if t <= t0:
        return float(psi_table[k])
    f = _psi_integrand(profile)
    nodes = t0 + (t - t0) * _GL_X
    seg = (t - t0) * float(np.sum(_GL_W * np.array([f(s) for s in nodes])))
    return float(psi_table[k] + seg)


def _invert_psi(profile, t_grid, psi_table, y: float) -> float:
    if y < psi_table[0] - 1e-9 or y > psi_table[-1] * (1 + 1e-12):
        raise ValueError(
            f"phi argument {y} outside tabulated psi range "
            f"[{psi_table[0]}, {psi_table[-1]}]"
        )
    y = min(max(y, psi_table[0]), psi_table[-1])
    k = int(np.searchsorted(psi_table, y, side="right") - 1)
    k = max(0, min(k, len(t_grid) - 2))
    return bisect_increasing(
        lambda t: _psi_eval(profile, t_grid, psi_table, t),
        t_grid[k],
        t_grid[k + 1],
        target=y,
        xtol=1e-14,
        max_iter=200,
    )


def build_weights(
    profile: OriginProfile,
    T_max: float,
    n_points: int = 400,
    include_points=(),
) -> WeightTable:
    """Tabulate psi_tilde by adaptive quadrature and invert it for phi.

    include_points are merged into the log-spaced grid (handy for pinning
    specific rows in exported tables).  Raises ProfileError when h(1/s)
    vanishes (underflow or a degenerate profile evaluated too far out) or
    psi_tilde overflows before T_max.
    """
    if T_max <= 1:
        raise ValueError(f"T_max must exceed 1, got {T_max}")
    t_grid = np.logspace(0.0, math.log10(T_max), n_points)
    t_grid[0] = 1.0
    t_grid[-1] = float(T_max)
    extra = [float(t) for t in include_points if 1.0 < t < T_max]
    if extra:
        t_grid = np.unique(np.concatenate([t_grid, extra]))
    n_points = len(t_grid)
    f = _psi_integrand(profile)
    h_vals = np.array([profile.h(1.0 / t) for t in t_grid], dtype=float)
    if np.any(h_vals <= 0.0) or not np.all(np.isfinite(h_vals)):
        bad = int(np.argmax((h_vals <= 0.0) | ~np.isfinite(h_vals)))
        raise ProfileError(
            f"h(1/s) = {h_vals[bad]!r} at s = {t_grid[bad]:.6g}: profile is not "
            f"strictly positive on the requested range (reduce T_max or fix h)"
        )
    segments = [1.0]
    for k in range(1, n_points):
        seg, _ = quad(f, t_grid[k - 1], t_grid[k], epsabs=1e-13, epsrel=1e-13, limit=200)
        segments.append(seg)
    # Compensated accumulation: psi_tilde spans many orders of magnitude and
    # a plain running sum would lose the closed-form agreement at large t.
    psi = np.array([math.fsum(segments[: k + 1]) for k in range(n_points)])
    if not np.all(np.isfinite(psi)):
        raise ProfileError(
            f"psi_tilde overflows before T_max = {T_max}; this profile grows too "
            f"fast for the requested range"
        )
    if psi[-1] < t_grid[-1]:
        raise ProfileError(
            "psi_tilde(T_max) < T_max: h(1/s) exceeds 1 on the range, so phi "
            "cannot be tabulated on [1, T_max]"
        )
    phi = np.array([_invert_psi(profile, t_grid, psi, t) for t in t_grid])
    phi_prime = np.array([profile.h(1.0 / p) for p in phi], dtype=float)
    chi = 1.0 / phi
    hinv = np.array([profile.h_inverse(v) for v in phi_prime], dtype=float)
    tail = float(np.trapezoid(phi_prime * hinv**2, t_grid))
    return WeightTable(
        profile=profile,
        t_grid=t_grid,
        psi_tilde=psi,
        phi=phi,
        phi_prime=phi_prime,
        chi=chi,
        tail_integral=tail,
    )


# ---------------------------------------------------------------------------
# Envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayEnvelope:
    """Theorem upper bound for E(t); see envelope_value for the three kinds."""

    kind: str  # "exponential" | "polynomial" | "general"
    E0: float
    C: float
    m: float | None = None
    schedule: DampingSchedule | None = None
    profile: OriginProfile | None = None

    def __post_init__(self):
        if self.kind == "exponential":
            if self.schedule is None:
                raise ValueError("exponential envelope needs a damping schedule")
        elif self.kind == "polynomial":
            if self.schedule is None:
                raise ValueError("polynomial envelope needs a damping schedule")
            if self.m is None or self.m <= 1:
                raise ValueError(
                    f"polynomial envelope needs m > 1, got m = {self.m}"
                )
        elif self.kind == "general":
            if self.profile is None:
                raise ValueError("general envelope needs an origin profile")
        else:
            raise ValueError(f"unknown envelope kind {self.kind!r}")


def envelope_value(envelope: DecayEnvelope, t: float) -> float:
    """Envelope at time t.

    exponential: E0 * exp(1 - C * Gamma(t)) for t >= 0;
    polynomial:  C * E0 * (1 + Gamma(t))^(-2/(m-1)) for t >= 0, m > 1;
    general:     C * E0 * (H^{-1}(1/t))^2 for t >= 1.
    """
    if envelope.kind == "exponential":
        g = envelope.schedule.primitive(t)
        return envelope.E0 * math.exp(1.0 - envelope.C * g)
    if envelope.kind == "polynomial":
        g = envelope.schedule.primitive(t)
        return envelope.C * envelope.E0 * (1.0 + g) ** (-2.0 / (envelope.m - 1.0))
    start = general_envelope_start(envelope.profile)
    if t < start * (1.0 - 1e-12):
        raise ValueError(
            f"general envelope is valid for t >= {start:.6g}, got t = {t}"
        )
    return envelope.C * envelope.E0 * H_inverse(envelope.profile, min(1.0 / t, H_value(envelope.profile, 1.0))) ** 2


def envelope_values(envelope: DecayEnvelope, ts) -> np.ndarray:
    return np.array([envelope_value(envelope, float(t)) for t in np.asarray(ts)])


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    """Least-squares decay fit plus a calibrated dominating envelope.

    fitted_rate is the regression slope in the kind's natural coordinates
    (rate in Gamma for exponential, exponent of 1+Gamma for polynomial, slope
    against log (H^{-1}(1/t))^2 for general).  fitted_C is calibrated so the
    envelope dominates the data with ratio 1 attained: the exponent constant
    for the exponential kind, the multiplicative prefactor otherwise.
    """

    kind: str
    fitted_rate: float
    fitted_C: float
    r_squared: float
    fit_window: tuple[float, float]
    dominance_ratio: float
    envelope: DecayEnvelope


def _default_window(times: np.ndarray, gammas: np.ndarray) -> tuple[float, float]:
    # Last 80% of the record in Gamma-time skips the transient.
    target = 0.2 * gammas[-1]
    idx = int(np.searchsorted(gammas, target))
    idx = min(idx, len(times) - 1)
    return float(times[idx]), float(times[-1])


def fit_rate(
    record: EnergyRecord,
    kind: str,
    schedule: DampingSchedule,
    fit_window: tuple[float, float] | None = None,
    m: float | None = None,
    profile: OriginProfile | None = None,
) -> FitResult:
    """Fit the decay rate of record.total and calibrate a dominating envelope."""
    times = record.times
    energy = record.total
    gammas = schedule.primitive_many(times)
    if fit_window is None:
        fit_window = _default_window(times, gammas)
    t_lo, t_hi = float(fit_window[0]), float(fit_window[1])
    mask = (times >= t_lo) & (times <= t_hi)
    if kind == "general":
        if profile is None:
            raise ValueError("general fit needs the origin profile")
        mask &= times >= general_envelope_start(profile)
    if int(mask.sum()) < 20:
        raise ValueError(
            f"fit window [{t_lo}, {t_hi}] contains {int(mask.sum())} samples; need >= 20"
        )
    e_win = energy[mask]
    if np.any(e_win <= 0):
        raise ValueError("total energy must stay positive inside the fit window")
    t_win = times[mask]
    g_win = gammas[mask]
    y = np.log(e_win)
    e0 = float(energy[0])

    if kind == "exponential":
        x = g_win
    elif kind == "polynomial":
        if m is None or m <= 1:
            raise ValueError("polynomial fit needs the growth exponent m > 1")
        x = np.log1p(g_win)
    elif kind == "general":
        h1 = H_value(profile, 1.0)
        x = np.log(
            np.array([H_inverse(profile, min(1.0 / t, h1)) for t in t_win]) ** 2
        )
    else:
        raise ValueError(f"unknown fit kind {kind!r}")

    if np.ptp(x) <= 0:
        raise ValueError("degenerate fit window: regressor does not vary")
    slope, intercept = np.polyfit(x, y, 1)
    fit_y = slope * x + intercept
    ss_res = float(np.sum((y - fit_y) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0

    if kind == "exponential":
        fitted_rate = -float(slope)
        positive = g_win > 0
        if not np.any(positive):
            raise ValueError("exponential calibration needs Gamma > 0 in the window")
        c_cal = float(np.min((1.0 + np.log(e0 / e_win[positive])) / g_win[positive]))
        env = DecayEnvelope(kind="exponential", E0=e0, C=c_cal, schedule=schedule)
    elif kind == "polynomial":
        fitted_rate = -float(slope)
        shape = e0 * (1.0 + g_win) ** (-2.0 / (m - 1.0))
        c_cal = float(np.max(e_win / shape))
        env = DecayEnvelope(kind="polynomial", E0=e0, C=c_cal, m=float(m), schedule=schedule)
    else:
        fitted_rate = float(slope)
        shape = e0 * np.exp(x)
        c_cal = float(np.max(e_win / shape))
        env = DecayEnvelope(kind="general", E0=e0, C=c_cal, profile=profile)

    env_vals = envelope_values(env, t_win)
    dominance = float(np.max(e_win / env_vals))
    return FitResult(
        kind=kind,
        fitted_rate=fitted_rate,
        fitted_C=c_cal,
        r_squared=r_squared,
        fit_window=(t_lo, t_hi),
        dominance_ratio=dominance,
        envelope=env,
    )


# ---------------------------------------------------------------------------
# Integral-inequality checker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lemma41Result:
    """Best constant in int_t^inf E^{1+sigma} psi' ds <= (1/omega) E^sigma(0) E(t)."""

    omega_hat: float
    satisfied_window: tuple[float, float]
    tail_remainder: float
    check_times: np.ndarray
    ratios: np.ndarray


def lemma41_check(record: EnergyRecord, psi, sigma: float) -> Lemma41Result:
    """Numerically extract the inequality constant from a decaying record.

    psi may be a callable or an array tabulated on record.times.  The record
    must be effectively complete: E(T)/E(0) < 1e-6, with the remaining tail
    estimated by exponential extrapolation in psi-time and reported.
    """
    times = record.times
    energy = record.total
    if callable(psi):
        psi_vals = np.array([float(psi(t)) for t in times])
    else:
        psi_vals = np.asarray(psi, dtype=float)
        if psi_vals.shape != times.shape:
            raise ValueError("tabulated psi must align with record.times")
    if np.any(np.diff(psi_vals) <= 0):
        raise ValueError("psi must be strictly increasing on the record")
    if times[0] == 0.0 and abs(psi_vals[0]) > 1e-12:
        raise ValueError(f"psi(0) must vanish, got {psi_vals[0]}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    e0 = float(energy[0])
    if e0 <= 0 or np.any(energy < 0):
        raise ValueError("record energies must be nonnegative with E(0) > 0")
    if energy[-1] / e0 >= 1e-6:
        raise ValueError(
            f"tail not negligible: E(T)/E(0) = {energy[-1] / e0:.3g} >= 1e-6; "
            f"extend the record"
        )
    # Drop samples below 1e-9 * E(0): their contribution is negligible at the
    # checker's accuracy and simulated records flatten into roundoff there,
    # which would poison the tail extrapolation.
    floor = 1e-9 * e0
    keep = np.where(energy >= floor)[0]
    cut = int(keep[-1]) + 1 if len(keep) else len(energy)
    times = times[:cut]
    energy = energy[:cut]
    psi_vals = psi_vals[:cut]

    f_vals = energy ** (1.0 + sigma)
    seg = 0.5 * (f_vals[1:] + f_vals[:-1]) * np.diff(psi_vals)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    suffix = cum[-1] - cum

    # Exponential tail in psi-time fitted on the last decade of the record.
    span = psi_vals[-1] - psi_vals[0]
    tail_mask = (psi_vals >= psi_vals[-1] - 0.1 * span) & (f_vals > 0)
    if int(tail_mask.sum()) < 3:
        raise ValueError("too few samples to estimate the tail remainder")
    lam = -np.polyfit(psi_vals[tail_mask], np.log(f_vals[tail_mask]), 1)[0]
    if lam <= 0:
        raise ValueError("record tail is not decaying; cannot bound the remainder")
    remainder = float(f_vals[-1] / lam)
    total_i = suffix + remainder

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(total_i > 0, e0**sigma * energy / total_i, np.inf)
    reliable = (remainder <= 0.01 * total_i) & (energy > 0)
    if not np.any(reliable):
        raise ValueError("no reliable samples: tail estimate dominates the integral")
    omega_hat = float(np.min(ratios[reliable]))
    idx = np.where(reliable)[0]
    window = (float(times[idx[0]]), float(times[idx[-1]]))
    return Lemma41Result(
        omega_hat=omega_hat,
        satisfied_window=window,
        tail_remainder=remainder,
        check_times=times[reliable],
        ratios=ratios[reliable],
    )
