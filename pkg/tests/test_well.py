"""Barrier thresholds, invariant level, and the embedding estimate."""

import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

import dampedwave as dw

# Golden for p=3 on the 1D unit interval at n=256: stiffness-preconditioned
# ascent and a plain fixed-point iteration on the Euler-Lagrange equation
# agree to 4e-11 (well inside the 1e-4 gate used here).
GOLDEN_M_P3_N256 = 0.3549165033


def test_barrier_examples():
    assert dw.barrier(1, 1, 3, 1.0) == pytest.approx(0.25)
    for params in ((1, 1, 3), (2, 0.7, 4), (0.5, 1.3, 2.5)):
        assert dw.barrier(*params, 0.0) == 0.0
    assert dw.barrier(1, 0.5, 3, 16.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        dw.barrier(1, 1, 3, -0.1)


def test_thresholds_examples():
    assert dw.thresholds(1, 1, 3) == pytest.approx((1.0, 0.25))
    assert dw.thresholds(4, 1, 3) == pytest.approx((16.0, 4.0))
    with pytest.raises(ValueError):
        dw.thresholds(1, 1, 1.0)


def test_thresholds_maximize_barrier():
    for omega, M, p in ((1, 1, 3), (2, 0.6, 2.2), (0.8, 1.4, 5)):
        s1, F1 = dw.thresholds(omega, M, p)
        assert dw.barrier(omega, M, p, s1) == pytest.approx(F1, rel=1e-12)
        eps = 1e-6 * s1
        deriv = (
            dw.barrier(omega, M, p, s1 + eps) - dw.barrier(omega, M, p, s1 - eps)
        ) / (2 * eps)
        assert abs(deriv) < 1e-8


def test_barrier_shape_on_grid():
    # F(0)=0, strictly increasing on (0, s1), strictly decreasing on (s1, 3 s1].
    omega, M, p = 1.3, 0.8, 3.5
    s1, F1 = dw.thresholds(omega, M, p)
    s = np.linspace(0.0, 3.0 * s1, 10_000)
    vals = np.array([dw.barrier(omega, M, p, x) for x in s])
    rising = s <= s1
    assert np.all(np.diff(vals[rising]) > 0)
    falling = s >= s1
    assert np.all(np.diff(vals[falling]) < 0)
    assert vals[0] == 0.0
    assert np.max(vals) <= F1 + 1e-12


def test_invariant_level_examples():
    assert dw.invariant_level(1, 1, 3, 0.1875) == pytest.approx(0.5, abs=1e-10)
    # E0 -> 0+ drives s2 -> 0.
    assert dw.invariant_level(1, 1, 3, 1e-9) == pytest.approx(2e-9, rel=1e-3)
    with pytest.raises(ValueError):
        dw.invariant_level(1, 1, 3, 0.25)
    with pytest.raises(ValueError):
        dw.invariant_level(1, 1, 3, 0.0)


def test_source_bound_constant_examples():
    m_script, c0 = dw.source_bound_constant(1, 1, 3, 0.5)
    assert m_script == pytest.approx(4.0 / 3.0, abs=1e-12)
    assert c0 == pytest.approx(4.0 / 3.0, abs=1e-12)
    # s2 -> s1 drives M_script to its bound 2(p+1)/(p-1).
    m_script, _ = dw.source_bound_constant(1, 1, 3, 1.0 - 1e-9)
    assert m_script == pytest.approx(4.0, rel=1e-6)
    m_script, c0 = dw.source_bound_constant(1, 1, 3, 1e-12)
    assert m_script == pytest.approx(0.0, abs=1e-5)
    assert c0 == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(ValueError):
        dw.source_bound_constant(1, 1, 3, 4.0)


def test_source_bound_below_limit():
    for p in (2.0, 3.0, 4.5):
        s1, _ = dw.thresholds(1.2, 0.9, p)
        for frac in (0.1, 0.5, 0.9, 0.999):
            m_script, _ = dw.source_bound_constant(1.2, 0.9, p, frac * s1)
            assert m_script < 2 * (p + 1) / (p - 1) + 1e-9


def test_global_existence_verdict_examples():
    wa = dw.global_existence_verdict(1, 1, 3, 0.1875, 0.5)
    assert wa.verdict == "global"
    assert wa.s2 == pytest.approx(0.5, abs=1e-10)
    assert wa.M_script == pytest.approx(4.0 / 3.0, abs=1e-10)
    assert wa.C0 == pytest.approx(4.0 / 3.0, abs=1e-10)

    bad_e = dw.global_existence_verdict(1, 1, 3, 0.3, 0.5)
    assert bad_e.verdict == "thresholds_violated"
    assert any("F1" in v for v in bad_e.violations)

    bad_a = dw.global_existence_verdict(1, 1, 3, 0.1, 1.2)
    assert bad_a.verdict == "thresholds_violated"
    assert any("s1" in v for v in bad_a.violations)


def test_verdict_marginal_flag():
    wa = dw.global_existence_verdict(1, 1, 3, 0.249, 0.5)
    assert wa.verdict == "global" and wa.marginal
    wa = dw.global_existence_verdict(1, 1, 3, 0.05, 0.5)
    assert not wa.marginal


def test_embedding_p1_1d():
    grid = dw.build_grid(1, 1.0, 256)
    op = dw.assemble(grid, dw.CoefficientField.identity())
    est = dw.estimate_embedding(grid, op, 1.0)
    assert est.method == "analytic"
    assert abs(est.M - 1.0 / math.pi) < 1e-3
    assert est.residual < 1e-8


def test_embedding_p1_2d():
    grid = dw.build_grid(2, (1.0, 1.0), (64, 64))
    op = dw.assemble(grid, dw.CoefficientField.identity())
    est = dw.estimate_embedding(grid, op, 1.0)
    assert abs(est.M - 1.0 / math.sqrt(2.0 * math.pi**2)) < 1e-2


def test_embedding_p3_golden_dual_optimizer():
    grid = dw.build_grid(1, 1.0, 256)
    op = dw.assemble(grid, dw.CoefficientField.identity())
    est = dw.estimate_embedding(grid, op, 3.0)
    assert est.method == "rayleigh_ascent"
    assert est.residual < 1e-8
    assert abs(est.M - GOLDEN_M_P3_N256) < 1e-4

    # Independent route: fixed-point iteration on K u = mass |u|^{q-2} u.
    lu = spla.splu(op.stiffness.tocsc())
    rng = np.random.default_rng(17)
    u = rng.standard_normal(grid.n_nodes)
    for _ in range(2000):
        w = lu.solve(op.lumped_mass * np.abs(u) ** 2 * u)
        u = w / dw.grad_norm(dw.GridFunction(grid, w))
    gf = dw.GridFunction(grid, u)
    fp = dw.lp_norm(op, gf, 4.0) / dw.grad_norm(gf)
    assert abs(est.M - fp) < 1e-6


def test_embedding_bound_holds_for_random_fields():
    grid = dw.build_grid(1, 1.0, 64)
    op = dw.assemble(grid, dw.CoefficientField.identity())
    est = dw.estimate_embedding(grid, op, 3.0)
    rng = np.random.default_rng(23)
    for _ in range(300):
        u = dw.GridFunction(grid, rng.standard_normal(64))
        assert dw.lp_norm(op, u, 4.0) <= (est.M + 1e-9) * dw.grad_norm(u)


def test_trajectory_lower_bound_chain(well_calibrated_run):
    # E(t) >= F(a(u,u)) along the trajectory, with the grid-estimated M.
    problem, embedding, analysis, record = well_calibrated_run
    barrier_vals = np.array(
        [dw.barrier(1.0, embedding.M, problem.p, a) for a in record.bilinear]
    )
    assert np.all(record.total >= barrier_vals - 1e-9)


def test_trajectory_invariant_region(well_calibrated_run):
    problem, embedding, analysis, record = well_calibrated_run
    assert analysis.verdict == "global"
    assert record.bilinear.max() <= analysis.s2 * (1.0 + 1e-3)


def test_trajectory_energy_comparability(well_calibrated_run):
    _, _, analysis, record = well_calibrated_run
    assert np.all(record.quadratic >= -1e-12)
    assert np.all(record.quadratic <= analysis.C0 * record.total * (1.0 + 1e-3))
