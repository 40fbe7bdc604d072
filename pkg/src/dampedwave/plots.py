"""Figure rendering for run reports: energy traces, envelope overlays, weights."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from dampedwave.decay import DecayEnvelope, FitResult, WeightTable, envelope_values
from dampedwave.solver import EnergyRecord


def energy_figure(record: EnergyRecord, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    ax1.plot(record.times, record.total, label="E (total)", lw=1.2)
    ax1.plot(record.times, record.quadratic, label="E_quadratic", lw=1.0, alpha=0.8)
    ax1.plot(
        record.times,
        record.dissipation_cumulative,
        label="dissipated",
        lw=1.0,
        ls="--",
        alpha=0.8,
    )
    ax1.set_xlabel("t")
    ax1.set_ylabel("energy")
    ax1.legend(fontsize=8)

    positive = record.total > 0
    if np.any(positive):
        ax2.semilogy(record.times[positive], record.total[positive], lw=1.2)
    ax2.set_xlabel("t")
    ax2.set_ylabel("E (log scale)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def envelope_figure(record: EnergyRecord, fit: FitResult, path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    positive = record.total > 0
    ax.semilogy(record.times[positive], record.total[positive], lw=1.2, label="E(t)")
    t_lo, t_hi = fit.fit_window
    ts = np.linspace(max(t_lo, record.times[0]), t_hi, 400)
    if fit.envelope.kind == "general":
        from dampedwave.decay import general_envelope_start

        ts = ts[ts >= general_envelope_start(fit.envelope.profile)]
    env = envelope_values(fit.envelope, ts)
    ax.semilogy(ts, env, lw=1.2, ls="--", label=f"{fit.kind} envelope")
    ax.axvspan(t_lo, t_hi, color="0.9", zorder=0)
    ax.set_xlabel("t")
    ax.set_ylabel("E")
    ax.set_title(
        f"rate={fit.fitted_rate:.4g}, C={fit.fitted_C:.4g}, "
        f"r2={fit.r_squared:.4f}, dominance={fit.dominance_ratio:.6f}",
        fontsize=9,
    )
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def weights_figure(table: WeightTable, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax1.loglog(table.t_grid, table.psi_tilde, label="psi_tilde")
    ax1.loglog(table.t_grid, table.phi, label="phi")
    ax1.set_xlabel("t")
    ax1.legend(fontsize=8)
    ax2.loglog(table.t_grid, table.chi, label="chi = 1/phi")
    ax2.loglog(table.t_grid, table.phi_prime, label="phi'")
    ax2.set_xlabel("t")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def sweep_figure(rows: list, path) -> None:
    """Fitted exponents against the two theoretical curves over m."""
    ok = [r for r in rows if r.get("status") == "ok" and np.isfinite(r["fitted_exponent"])]
    if not ok:
        return
    ms = np.array([r["m"] for r in ok])
    fitted = np.array([r["fitted_exponent"] for r in ok])
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.plot(ms, fitted, "o", label="fitted exponent")
    grid = np.linspace(max(1.05, ms.min() * 0.9), ms.max() * 1.1, 200)
    ax.plot(grid, 2.0 / (grid - 1.0), "--", label="2/(m-1)")
    ax.plot(grid, 2.0 / (grid + 1.0), ":", label="2/(m+1)")
    ax.set_xlabel("m")
    ax.set_ylabel("decay exponent")
    ax.set_ylim(0, max(3.0, fitted.max() * 1.2))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
