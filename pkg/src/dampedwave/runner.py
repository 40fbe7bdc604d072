"""Experiment orchestration: build problems from configs, run, and report.

Each run directory receives the energy CSV (exact header below), a plain-text
report, a machine-readable TOML summary, and rendered figures next to the
delimited output.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dampedwave import decay, plots
from dampedwave.config import (
    ConfigError,
    DomainSpec,
    ExperimentConfig,
    ScheduleSpec,
    emit_toml,
    serialize_config,
)
from dampedwave.eigs import smallest_generalized_eigenvalue
from dampedwave.field import (
    CoefficientField,
    GridFunction,
    assemble,
    bilinear_form,
    build_grid,
    lp_norm,
)
from dampedwave.model import (
    Problem,
    ValidationReport,
    constant_schedule,
    degenerate_profile,
    linear_feedback,
    origin_degenerate_feedback,
    power_feedback,
    power_profile,
    power_schedule,
    validate,
)
from dampedwave.roots import bisect_increasing
from dampedwave.solver import BlowUpError, EnergyRecord, StepperConfig, simulate
from dampedwave.textio import format_float, write_csv
from dampedwave.well import (
    EmbeddingEstimate,
    WellAnalysis,
    estimate_embedding,
    global_existence_verdict,
    thresholds,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_BLOWUP = 4
EXIT_INTERNAL = 5

ENERGY_HEADER = [
    "t",
    "E_total",
    "E_quadratic",
    "a_uu",
    "source_norm",
    "dissipation_cum",
    "identity_residual",
]

MANIFEST_HEADER = [
    "m",
    "fitted_exponent",
    "theory_b413",
    "theory_190",
    "dominance_ratio",
    "r2",
    "status",
    "run_dir",
]


class ValidationFailure(RuntimeError):
    """Problem data violates the standing assumptions; maps to exit code 3."""

    def __init__(self, message, report: ValidationReport | None = None):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# Config -> problem
# ---------------------------------------------------------------------------


def build_coefficient(spec, domain: DomainSpec) -> CoefficientField:
    lengths = domain.lengths
    if spec.preset == "identity":
        return CoefficientField.identity()
    if spec.preset == "scaled":
        if spec.scale <= 0:
            raise ConfigError(f"coefficient.scale must be positive, got {spec.scale}")
        return CoefficientField.constant(spec.scale)
    if spec.preset == "variable_iso":
        if domain.dim == 1:
            L = lengths[0]
            fn = lambda pts: 1.0 + 0.5 * np.sin(np.pi * pts[:, 0] / L)
        else:
            Lx, Ly = lengths
            fn = lambda pts: 1.0 + 0.5 * np.sin(np.pi * pts[:, 0] / Lx) * np.sin(
                np.pi * pts[:, 1] / Ly
            )
        return CoefficientField.from_callable(fn, ellipticity_lower=1.0)
    if spec.preset == "anisotropic":
        if domain.dim != 2:
            raise ConfigError("anisotropic coefficient preset requires dim = 2")
        Lx, Ly = lengths

        def fn(pts):
            x = pts[:, 0] / Lx
            y = pts[:, 1] / Ly
            a = np.empty((len(pts), 2, 2))
            a[:, 0, 0] = 1.0 + 0.5 * x
            a[:, 1, 1] = 1.0 + 0.5 * y
            a[:, 0, 1] = a[:, 1, 0] = 0.25 * x * y
            return a

        return CoefficientField.from_callable(fn, ellipticity_lower=0.75)
    raise ConfigError(f"unknown coefficient preset {spec.preset!r}")


def build_feedback(spec):
    if spec.kind == "linear":
        return linear_feedback(spec.coefficient)
    if spec.kind == "power":
        return power_feedback(spec.m, spec.coefficient)
    if spec.kind == "origin_degenerate":
        return origin_degenerate_feedback(spec.m)
    raise ConfigError(f"unknown feedback kind {spec.kind!r}")


def build_schedule(spec: ScheduleSpec):
    if spec.preset == "constant":
        return constant_schedule(spec.gamma0)
    if spec.preset == "power_decay":
        return power_schedule(spec.q, scale=spec.gamma0)
    raise ConfigError(f"unknown schedule preset {spec.preset!r}")


def _bump_values(grid) -> np.ndarray:
    coords = grid.node_coords()
    if grid.dim == 1:
        L = grid.lengths[0]
        x = coords
        return (4.0 * x * (L - x) / L**2) ** 2
    Lx, Ly = grid.lengths
    x, y = coords[:, 0], coords[:, 1]
    return ((4.0 * x * (Lx - x) / Lx**2) * (4.0 * y * (Ly - y) / Ly**2)) ** 2


def _calibrate_amplitude(op, shape_vals, p, source_scale, target) -> float:
    """Scale so the total energy of (alpha*shape, 0) hits target exactly."""
    a_shape = float(shape_vals @ (op.stiffness @ shape_vals))
    src_shape = float(np.sum(op.lumped_mass * np.abs(shape_vals) ** (p + 1.0)))

    def energy_of(alpha):
        return 0.5 * alpha**2 * a_shape - source_scale * alpha ** (p + 1.0) * src_shape / (
            p + 1.0
        )

    if source_scale * src_shape <= 0 or p == 1.0:
        denom = a_shape - (source_scale * 2.0 * src_shape / (p + 1.0) if p == 1.0 else 0.0)
        if denom <= 0:
            raise ValidationFailure("initial shape cannot reach the energy target")
        return math.sqrt(2.0 * target / denom)
    alpha_peak = (a_shape / (source_scale * src_shape)) ** (1.0 / (p - 1.0))
    peak = energy_of(alpha_peak)
    if target >= peak:
        raise ValidationFailure(
            f"e0 target {target:g} unattainable along this shape "
            f"(maximum on the rising branch is {peak:g})"
        )
    return bisect_increasing(energy_of, 0.0, alpha_peak, target=target, xtol=1e-15)


@dataclass
class RunContext:
    config: ExperimentConfig
    problem: Problem
    op_identity: object
    embedding: EmbeddingEstimate | None
    omega_used: float
    M_used: float


def prepare(config: ExperimentConfig) -> RunContext:
    domain = config.domain
    grid = build_grid(domain.dim, domain.lengths, domain.interior_counts)
    coeff = build_coefficient(config.coefficient, domain)
    op = assemble(grid, coeff)
    if config.coefficient.preset == "identity":
        op_identity = op
    else:
        op_identity = assemble(grid, CoefficientField.identity())

    feedback = build_feedback(config.feedback)
    schedule = build_schedule(config.schedule)
    p = config.source.p
    well_spec = config.well

    omega_used = (
        well_spec.omega if well_spec is not None and well_spec.omega is not None
        else coeff.ellipticity_lower
    )
    if well_spec is not None and well_spec.M is not None:
        m_used = well_spec.M
        embedding = None
    else:
        embedding = estimate_embedding(grid, op_identity, max(p, 1.0))
        m_used = embedding.M

    init = config.initial
    rng = np.random.default_rng(config.seed)
    if init.shape == "eigenmode":
        _, mode, _ = smallest_generalized_eigenvalue(op.stiffness, op.lumped_mass)
        shape_vals = mode / np.abs(mode).max()
    elif init.shape == "bump":
        shape_vals = _bump_values(grid)
    elif init.shape == "random":
        shape_vals = rng.standard_normal(grid.n_nodes)
        shape_vals = shape_vals / max(np.abs(shape_vals).max(), 1e-300)
    else:
        raise ConfigError(f"unknown initial shape {init.shape!r}")

    if init.e0_target is not None and init.e0_fraction_of_F1 is not None:
        raise ConfigError("set only one of e0_target and e0_fraction_of_F1")
    if init.e0_target is not None or init.e0_fraction_of_F1 is not None:
        if init.e0_target is not None:
            target = init.e0_target
        else:
            if p <= 1:
                raise ConfigError("e0_fraction_of_F1 needs p > 1")
            _, f1 = thresholds(omega_used, m_used, p)
            target = init.e0_fraction_of_F1 * f1
        alpha = _calibrate_amplitude(op, shape_vals, p, config.source.scale, target)
    else:
        alpha = init.amplitude
    u0 = GridFunction(grid, alpha * shape_vals)

    if init.velocity == "zero":
        u1 = GridFunction(grid, np.zeros(grid.n_nodes))
    elif init.velocity == "random":
        u1 = GridFunction(
            grid, init.velocity_amplitude * rng.standard_normal(grid.n_nodes)
        )
    else:
        raise ConfigError(f"unknown initial velocity {init.velocity!r}")

    problem = Problem(
        grid=grid,
        operator=op,
        feedback=feedback,
        schedule=schedule,
        p=p,
        u0=u0,
        u1=u1,
        source_scale=config.source.scale,
    )
    return RunContext(
        config=config,
        problem=problem,
        op_identity=op_identity,
        embedding=embedding,
        omega_used=omega_used,
        M_used=m_used,
    )


def run_validation(ctx: RunContext) -> ValidationReport:
    report = validate(ctx.problem)
    if not report.passed:
        names = ", ".join(c.name for c in report.failures())
        raise ValidationFailure(f"assumption checks failed: {names}", report)
    return report


def well_analysis(ctx: RunContext) -> WellAnalysis:
    problem = ctx.problem
    op = problem.operator
    spec = ctx.config.well
    a0 = (
        spec.a0 if spec is not None and spec.a0 is not None
        else bilinear_form(op, problem.u0, problem.u0)
    )
    if spec is not None and spec.E0 is not None:
        e0 = spec.E0
    else:
        kinetic = 0.5 * float(np.sum(op.lumped_mass * problem.u1.values**2))
        source = lp_norm(op, problem.u0, problem.p + 1.0) ** (problem.p + 1.0)
        e0 = (
            kinetic
            + 0.5 * a0
            - problem.source_scale * source / (problem.p + 1.0)
        )
    return global_existence_verdict(ctx.omega_used, ctx.M_used, problem.p, e0, a0)


# ---------------------------------------------------------------------------
# Reports and files
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_energy_csv(record: EnergyRecord, path: Path) -> None:
    rows = zip(
        record.times,
        record.total,
        record.quadratic,
        record.bilinear,
        record.source_norm,
        record.dissipation_cumulative,
        record.identity_residual,
    )
    write_csv(path, ENERGY_HEADER, rows)


def read_energy_csv(path) -> EnergyRecord:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0].split(",") != ENERGY_HEADER:
        raise ConfigError(f"{path}: not an energy CSV (unexpected header)")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return EnergyRecord(
        times=data[:, 0],
        total=data[:, 1],
        quadratic=data[:, 2],
        bilinear=data[:, 3],
        source_norm=data[:, 4],
        dissipation_cumulative=data[:, 5],
        identity_residual=data[:, 6],
    )


def _well_tree(analysis: WellAnalysis) -> dict:
    tree = {
        "omega": analysis.omega,
        "M": analysis.M,
        "p": analysis.p,
        "s1": analysis.s1,
        "F1": analysis.F1,
        "E0": analysis.E0,
        "a0": analysis.a0,
        "verdict": analysis.verdict,
        "margin": analysis.margin,
        "marginal": analysis.marginal,
    }
    if analysis.s2 is not None:
        tree.update(s2=analysis.s2, M_script=analysis.M_script, C0=analysis.C0)
    if analysis.violations:
        tree["violations"] = list(analysis.violations)
    return tree


def _fit_tree(fit: decay.FitResult) -> dict:
    return {
        "kind": fit.kind,
        "fitted_rate": fit.fitted_rate,
        "fitted_C": fit.fitted_C,
        "r_squared": fit.r_squared,
        "window_lo": fit.fit_window[0],
        "window_hi": fit.fit_window[1],
        "dominance_ratio": fit.dominance_ratio,
    }


@dataclass
class RunReport:
    command: str
    status: str  # ok | blowup
    validation_lines: list
    derived_constants: dict
    well: dict | None
    energy: dict | None
    fits: list
    files: list
    blowup_time: float | None = None

    def to_tree(self) -> dict:
        tree = {
            "command": self.command,
            "status": self.status,
        }
        if self.blowup_time is not None:
            tree["blowup_time"] = self.blowup_time
        tree["validation"] = {"lines": [s.strip() for s in self.validation_lines]}
        if self.derived_constants:
            tree["constants"] = dict(self.derived_constants)
        if self.well is not None:
            tree["well"] = self.well
        if self.energy is not None:
            tree["energy"] = self.energy
        if self.fits:
            tree["run"] = {"fits": self.fits}
        if self.files:
            tree["manifest"] = {"files": self.files}
        return tree

    def to_text(self) -> str:
        out = [f"dampedwave {self.command} report", f"status: {self.status}"]
        if self.blowup_time is not None:
            out.append(f"blow-up at t = {self.blowup_time:.6g}")
        if self.validation_lines:
            out.append("assumptions:")
            out.extend(self.validation_lines)
        if self.well is not None:
            out.append("potential well:")
            for key in ("s1", "F1", "s2", "M_script", "C0", "M", "E0", "a0"):
                if key in self.well:
                    out.append(f"  {key:<9} = {format_float(self.well[key])}")
            out.append(f"  verdict   = {self.well['verdict']}"
                       + (" (marginal)" if self.well.get("marginal") else ""))
        if self.energy is not None:
            out.append("energy:")
            for key, val in self.energy.items():
                sval = format_float(val) if isinstance(val, float) else str(val)
                out.append(f"  {key:<22} = {sval}")
        for fit in self.fits:
            out.append(f"fit [{fit['kind']}]:")
            for key in ("fitted_rate", "fitted_C", "r_squared", "dominance_ratio"):
                out.append(f"  {key:<15} = {format_float(fit[key])}")
            out.append(f"  window          = [{fit['window_lo']:g}, {fit['window_hi']:g}]")
        if self.files:
            out.append("files:")
            for f in self.files:
                out.append(f"  {f['path']}  sha256={f['sha256'][:16]}...")
        return "\n".join(out) + "\n"


def write_report(report: RunReport, out_dir: Path, config: ExperimentConfig) -> None:
    txt = out_dir / config.outputs.report_txt
    toml_path = out_dir / config.outputs.report_toml
    txt.write_text(report.to_text())
    toml_path.write_text(emit_toml(report.to_tree()))


def _register_file(files: list, out_dir: Path, path: Path) -> None:
    files.append({"path": str(path.relative_to(out_dir)), "sha256": _sha256(path)})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _fit_from_config(config: ExperimentConfig, record: EnergyRecord, schedule, feedback):
    spec = config.fit
    kwargs = {"fit_window": spec.window}
    if spec.kind == "polynomial":
        kwargs["m"] = config.feedback.m
    elif spec.kind == "general":
        kwargs["profile"] = feedback.origin_profile
    return decay.fit_rate(record, spec.kind, schedule, **kwargs)


def run_simulate(config: ExperimentConfig, out_dir: Path) -> tuple[int, RunReport]:
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = prepare(config)
    validation = run_validation(ctx)
    analysis = well_analysis(ctx)

    stepper = StepperConfig(
        dt=config.stepper.dt,
        t_end=config.stepper.t_end,
        record_every=config.stepper.record_every,
    )
    status = "ok"
    blowup_time = None
    exit_code = EXIT_OK
    try:
        record = simulate(ctx.problem, stepper)
    except BlowUpError as exc:
        record = exc.record
        status = "blowup"
        blowup_time = exc.time
        exit_code = EXIT_BLOWUP

    files: list = []
    csv_path = out_dir / config.outputs.energy_csv
    write_energy_csv(record, csv_path)
    _register_file(files, out_dir, csv_path)

    fits = []
    if config.fit is not None and status == "ok":
        fit = _fit_from_config(config, record, ctx.problem.schedule, ctx.problem.feedback)
        fits.append(_fit_tree(fit))
        if config.outputs.figures:
            fig_path = out_dir / "envelope.png"
            plots.envelope_figure(record, fit, fig_path)
            _register_file(files, out_dir, fig_path)
    if config.outputs.figures and len(record.times) > 1:
        fig_path = out_dir / "energy.png"
        plots.energy_figure(record, fig_path)
        _register_file(files, out_dir, fig_path)

    mono_violations = int(np.sum(np.diff(record.total) > 1e-8))
    energy_tree = {
        "E0": float(record.total[0]) if len(record.total) else math.nan,
        "E_end": float(record.total[-1]) if len(record.total) else math.nan,
        "t_end": float(record.times[-1]) if len(record.times) else math.nan,
        "max_identity_residual": float(record.identity_residual.max())
        if len(record.times)
        else math.nan,
        "monotonicity_violations": mono_violations,
        "samples": int(len(record.times)),
    }
    report = RunReport(
        command="simulate",
        status=status,
        validation_lines=validation.lines(),
        derived_constants=validation.derived_constants,
        well=_well_tree(analysis),
        energy=energy_tree,
        fits=fits,
        files=files,
        blowup_time=blowup_time,
    )
    write_report(report, out_dir, config)
    return exit_code, report


def run_well(config: ExperimentConfig, out_dir: Path) -> tuple[int, RunReport]:
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = prepare(config)
    validation = run_validation(ctx)
    analysis = well_analysis(ctx)
    report = RunReport(
        command="well",
        status="ok",
        validation_lines=validation.lines(),
        derived_constants=validation.derived_constants,
        well=_well_tree(analysis),
        energy=None,
        fits=[],
        files=[],
    )
    write_report(report, out_dir, config)
    return EXIT_OK, report


def _weights_profile(config: ExperimentConfig):
    spec = config.weights
    try:
        if spec.profile_kind == "linear":
            return power_profile(1.0, spec.coefficient)
        if spec.profile_kind == "power":
            return power_profile(spec.m, spec.coefficient)
        if spec.profile_kind == "degenerate":
            return degenerate_profile()
    except ValueError as exc:
        raise ValidationFailure(f"invalid origin profile: {exc}") from exc
    raise ConfigError(f"unknown weights profile kind {spec.profile_kind!r}")


def run_weights(config: ExperimentConfig, out_dir: Path) -> tuple[int, RunReport]:
    if config.weights is None:
        raise ConfigError("weights command needs a [weights] section")
    out_dir.mkdir(parents=True, exist_ok=True)
    profile = _weights_profile(config)
    spec = config.weights
    try:
        table = decay.build_weights(
            profile,
            spec.t_max,
            n_points=spec.n_points,
            include_points=[float(v) for v in range(2, min(int(spec.t_max), 100) + 1)],
        )
    except (decay.ProfileError, ValueError) as exc:
        raise ValidationFailure(str(exc)) from exc
    files: list = []
    csv_path = out_dir / spec.csv
    table.to_csv(csv_path)
    _register_file(files, out_dir, csv_path)
    if config.outputs.figures:
        fig_path = out_dir / "weights.png"
        plots.weights_figure(table, fig_path)
        _register_file(files, out_dir, fig_path)
    report = RunReport(
        command="weights",
        status="ok",
        validation_lines=[],
        derived_constants={
            "profile": spec.profile_kind,
            "t_max": spec.t_max,
            "tail_integral": table.tail_integral,
            "phi_at_t_max": float(table.phi[-1]),
        },
        well=None,
        energy=None,
        fits=[],
        files=files,
    )
    write_report(report, out_dir, config)
    return EXIT_OK, report


def run_fit(config: ExperimentConfig, out_dir: Path, config_dir: Path) -> tuple[int, RunReport]:
    if config.fit is None:
        raise ConfigError("fit command needs a [fit] section")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = Path(config.fit.csv)
    if not csv_path.is_absolute():
        csv_path = config_dir / csv_path
    record = read_energy_csv(csv_path)
    schedule = build_schedule(config.schedule)
    feedback = build_feedback(config.feedback)
    fit = _fit_from_config(config, record, schedule, feedback)
    files: list = []
    if config.outputs.figures:
        fig_path = out_dir / "envelope.png"
        plots.envelope_figure(record, fit, fig_path)
        _register_file(files, out_dir, fig_path)
    report = RunReport(
        command="fit",
        status="ok",
        validation_lines=[],
        derived_constants={},
        well=None,
        energy={
            "E0": float(record.total[0]),
            "E_end": float(record.total[-1]),
            "samples": int(len(record.times)),
        },
        fits=[_fit_tree(fit)],
        files=files,
    )
    write_report(report, out_dir, config)
    return EXIT_OK, report


# ---------------------------------------------------------------------------
# Parameter sweep
# ---------------------------------------------------------------------------


def _sweep_cells(config: ExperimentConfig) -> list[ExperimentConfig]:
    sweep = config.sweep
    ms = sweep.m if sweep is not None and sweep.m else (config.feedback.m,)
    schedules = (
        sweep.schedules if sweep is not None and sweep.schedules else (config.schedule,)
    )
    cells = []
    index = 0
    for m in ms:
        for sched in schedules:
            feedback = dataclasses.replace(config.feedback, m=float(m))
            cells.append(
                dataclasses.replace(
                    config,
                    feedback=feedback,
                    schedule=sched,
                    sweep=None,
                    seed=config.seed + index,
                )
            )
            index += 1
    return cells


def _sweep_cell_task(args) -> dict:
    cell_config, cell_dir = args
    cell_path = Path(cell_dir)
    m = cell_config.feedback.m
    row = {
        "m": m,
        "fitted_exponent": math.nan,
        "theory_b413": 2.0 / (m - 1.0) if m > 1 else math.inf,
        "theory_190": 2.0 / (m + 1.0),
        "dominance_ratio": math.nan,
        "r2": math.nan,
        "status": "ok",
        "run_dir": cell_path.name,
    }
    kind = "polynomial" if m > 1 else "exponential"
    fit_spec = dataclasses.replace(
        cell_config.fit if cell_config.fit is not None else _default_fit_spec(),
        kind=kind,
    )
    cell_config = dataclasses.replace(cell_config, fit=fit_spec)
    try:
        code, report = run_simulate(cell_config, cell_path)
        if code == EXIT_BLOWUP:
            row["status"] = "blowup"
        elif report.fits:
            fit = report.fits[0]
            row["fitted_exponent"] = fit["fitted_rate"]
            row["dominance_ratio"] = fit["dominance_ratio"]
            row["r2"] = fit["r_squared"]
    except ValidationFailure as exc:
        row["status"] = f"validation_failed: {exc}"
    except Exception as exc:  # noqa: BLE001 -- cell isolation, sweep continues
        row["status"] = f"error: {exc}"
    return row


def _default_fit_spec():
    from dampedwave.config import FitSpec

    return FitSpec(kind="polynomial", window=None)


def run_sweep(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> tuple[int, list]:
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = _sweep_cells(config)
    tasks = [
        (cell, str(out_dir / f"cell_{i:03d}")) for i, cell in enumerate(cells)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell_task, tasks))
    else:
        rows = [_sweep_cell_task(task) for task in tasks]

    manifest_path = out_dir / "manifest.csv"
    write_csv(
        manifest_path,
        MANIFEST_HEADER,
        (
            [
                row["m"],
                row["fitted_exponent"],
                row["theory_b413"],
                row["theory_190"],
                row["dominance_ratio"],
                row["r2"],
                row["status"],
                row["run_dir"],
            ]
            for row in rows
        ),
    )
    if config.outputs.figures:
        plots.sweep_figure(rows, out_dir / "sweep.png")

    statuses = [row["status"] for row in rows]
    if all(s == "ok" for s in statuses):
        exit_code = EXIT_OK
    elif any(s == "blowup" for s in statuses):
        exit_code = EXIT_BLOWUP
    elif any(s.startswith("validation") for s in statuses):
        exit_code = EXIT_VALIDATION
    else:
        exit_code = EXIT_INTERNAL
    return exit_code, rows


def echo_config(config: ExperimentConfig, out_dir: Path) -> None:
    """Drop the normalized config next to the outputs for reproducibility."""
    (out_dir / "config_used.toml").write_text(serialize_config(config))
