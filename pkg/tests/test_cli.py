"""Config round-trips, CLI subcommands, exit codes, and output contracts."""

import dataclasses

import numpy as np
import pytest

import dampedwave.cli as cli
from dampedwave.config import (
    ConfigError,
    ExperimentConfig,
    FitSpec,
    ScheduleSpec,
    SweepSpec,
    WeightsSpec,
    parse_config_text,
    serialize_config,
)

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


BASE_SIM = """\
schema_version = 1
seed = 11

[domain]
dim = 1
lengths = [1.0]
interior_counts = [24]

[feedback]
kind = "linear"
coefficient = 1.0

[schedule]
preset = "constant"
gamma0 = 1.0

[source]
p = 3.0

[initial]
shape = "eigenmode"
e0_target = 0.05

[stepper]
dt = 0.005
t_end = 2.0
record_every = 2

[outputs]
figures = false
"""


def write_config(tmp_path, text, name="config.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_config_round_trip_identity():
    config = parse_config_text(BASE_SIM)
    text = serialize_config(config)
    assert parse_config_text(text) == config


def test_config_round_trip_with_optional_sections():
    config = parse_config_text(BASE_SIM)
    config = dataclasses.replace(
        config,
        fit=FitSpec(kind="polynomial", window=(1.0, 2.0)),
        weights=WeightsSpec(profile_kind="power", m=3.0),
        sweep=SweepSpec(m=(2.0, 3.0), schedules=(ScheduleSpec(), ScheduleSpec(preset="power_decay", q=0.5))),
    )
    assert parse_config_text(serialize_config(config)) == config


def test_config_defaults_applied():
    config = parse_config_text("schema_version = 1\n")
    assert config == ExperimentConfig()
    assert config.domain.interior_counts == (64,)
    assert config.fit is None


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("schema_version = 1\n[source]\np = 3.0\nbogus = 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("schema_version = 1\n[nosuch]\nx = 1\n")


def test_config_rejects_bad_version_and_types():
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config_text("schema_version = 2\n")
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config_text("[source]\np = 3.0\n")
    with pytest.raises(ConfigError, match="expected a number"):
        parse_config_text('schema_version = 1\n[source]\np = "three"\n')
    with pytest.raises(ConfigError, match="TOML parse error"):
        parse_config_text("schema_version = \n")


def test_simulate_writes_exact_csv_header(tmp_path):
    cfg = write_config(tmp_path, BASE_SIM)
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    lines = (out / "energy.csv").read_text().splitlines()
    assert lines[0] == "t,E_total,E_quadratic,a_uu,source_norm,dissipation_cum,identity_residual"
    assert (out / "report.txt").exists()
    assert (out / "report.toml").exists()


def test_simulate_report_matches_csv_rows(tmp_path):
    cfg = write_config(tmp_path, BASE_SIM)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "energy.csv").read_text().strip().splitlines()
    first = float(lines[1].split(",")[1])
    last = float(lines[-1].split(",")[1])
    report = tomllib.loads((out / "report.toml").read_text())
    assert report["energy"]["E0"] == first
    assert report["energy"]["E_end"] == last
    assert report["status"] == "ok"


def test_simulate_deterministic_csv_bytes(tmp_path):
    text = BASE_SIM.replace('shape = "eigenmode"\ne0_target = 0.05',
                            'shape = "random"\namplitude = 0.05')
    cfg = write_config(tmp_path, text)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "energy.csv").read_bytes() == (out2 / "energy.csv").read_bytes()
    # Different seed changes the trajectory.
    out3 = tmp_path / "c"
    assert cli.main(
        ["simulate", "--config", str(cfg), "--out", str(out3), "--seed", "99"]
    ) == 0
    assert (out1 / "energy.csv").read_bytes() != (out3 / "energy.csv").read_bytes()


def test_simulate_renders_figures(tmp_path):
    text = BASE_SIM.replace("figures = false", "figures = true")
    text += "\n[fit]\nkind = \"exponential\"\nwindow = [0.5, 2.0]\n"
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "energy.png").stat().st_size > 0
    assert (out / "envelope.png").stat().st_size > 0
    report = tomllib.loads((out / "report.toml").read_text())
    names = {f["path"] for f in report["manifest"]["files"]}
    assert {"energy.csv", "energy.png", "envelope.png"} <= names


def test_exit_2_on_parse_error(tmp_path):
    cfg = write_config(tmp_path, "schema_version = 1\n[source]\nboom = 1\n")
    assert cli.main(["simulate", "--config", str(cfg)]) == 2
    missing = tmp_path / "nope.toml"
    assert cli.main(["simulate", "--config", str(missing)]) == 2


def test_exit_3_on_p_out_of_range(tmp_path):
    cfg = write_config(tmp_path, BASE_SIM.replace("p = 3.0", "p = 7.0"))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_exit_3_on_h3_violation(tmp_path):
    cfg = write_config(tmp_path, BASE_SIM.replace("p = 3.0", "p = 5.0"))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_exit_4_on_blowup_with_partial_outputs(tmp_path):
    text = BASE_SIM.replace(
        'shape = "eigenmode"\ne0_target = 0.05', 'shape = "bump"\namplitude = 50.0'
    ).replace("t_end = 2.0", "t_end = 20.0")
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 4
    report = tomllib.loads((out / "report.toml").read_text())
    assert report["status"] == "blowup"
    assert report["blowup_time"] < 20.0
    assert (out / "energy.csv").exists()


def test_well_golden_chain(tmp_path, capsys):
    text = """\
schema_version = 1

[source]
p = 3.0

[well]
omega = 1.0
M = 1.0
E0 = 0.1875
a0 = 0.5
"""
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["well", "--config", str(cfg), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "verdict = global" in printed
    report = tomllib.loads((out / "report.toml").read_text())
    well = report["well"]
    assert well["s1"] == pytest.approx(1.0, abs=1e-12)
    assert well["F1"] == pytest.approx(0.25, abs=1e-12)
    assert well["s2"] == pytest.approx(0.5, abs=1e-10)
    assert well["M_script"] == pytest.approx(4.0 / 3.0, abs=1e-10)
    assert well["C0"] == pytest.approx(4.0 / 3.0, abs=1e-10)


def test_well_thresholds_violated_and_marginal(tmp_path, capsys):
    base = """\
schema_version = 1

[source]
p = 3.0

[well]
omega = 1.0
M = 1.0
E0 = %s
a0 = 0.5
"""
    cfg = write_config(tmp_path, base % "0.3")
    assert cli.main(["well", "--config", str(cfg), "--out", str(tmp_path / "o1")]) == 0
    assert "thresholds_violated" in capsys.readouterr().out

    cfg = write_config(tmp_path, base % "0.249", name="marginal.toml")
    assert cli.main(["well", "--config", str(cfg), "--out", str(tmp_path / "o2")]) == 0
    assert "(marginal)" in capsys.readouterr().out


def test_weights_linear_rows(tmp_path):
    text = """\
schema_version = 1

[weights]
profile_kind = "linear"
coefficient = 1.0
t_max = 100.0

[outputs]
figures = false
"""
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["weights", "--config", str(cfg), "--out", str(out)]) == 0
    rows = {
        line.split(",")[0]: line.split(",")
        for line in (out / "weights.csv").read_text().strip().splitlines()[1:]
    }
    assert float(rows["3"][1]) == pytest.approx(5.0, abs=1e-9)


def test_weights_cubic_row(tmp_path):
    text = """\
schema_version = 1

[weights]
profile_kind = "power"
m = 3.0
coefficient = 1.0
t_max = 100.0

[outputs]
figures = false
"""
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["weights", "--config", str(cfg), "--out", str(out)]) == 0
    rows = {
        line.split(",")[0]: line.split(",")
        for line in (out / "weights.csv").read_text().strip().splitlines()[1:]
    }
    assert float(rows["2"][1]) == pytest.approx(4.75, abs=1e-9)


def test_weights_invalid_profile_exit_3(tmp_path):
    text = """\
schema_version = 1

[weights]
profile_kind = "power"
m = 0.5
"""
    cfg = write_config(tmp_path, text)
    assert cli.main(["weights", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_fit_subcommand_on_existing_csv(tmp_path):
    cfg = write_config(tmp_path, BASE_SIM)
    sim_out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(sim_out)]) == 0
    fit_text = BASE_SIM + f"""
[fit]
kind = "exponential"
window = [0.5, 2.0]
csv = "{(sim_out / 'energy.csv').as_posix()}"
"""
    fit_cfg = write_config(tmp_path, fit_text, name="fit.toml")
    out = tmp_path / "fit_out"
    assert cli.main(["fit", "--config", str(fit_cfg), "--out", str(out)]) == 0
    report = tomllib.loads((out / "report.toml").read_text())
    fit = report["run"]["fits"][0]
    assert fit["kind"] == "exponential"
    assert fit["dominance_ratio"] <= 1.0 + 1e-9


def test_sweep_manifest_columns_and_rows(tmp_path):
    text = BASE_SIM.replace('kind = "linear"', 'kind = "power"\nm = 3.0').replace(
        "t_end = 2.0", "t_end = 8.0"
    )
    text += "\n[sweep]\nm = [2.0, 3.0]\n"
    cfg = write_config(tmp_path, text)
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "manifest.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[:6] == [
        "m", "fitted_exponent", "theory_b413", "theory_190", "dominance_ratio", "r2",
    ]
    assert len(lines) == 3
    row_m2 = lines[1].split(",")
    assert float(row_m2[0]) == 2.0
    assert float(row_m2[2]) == pytest.approx(2.0)  # 2/(m-1)
    assert float(row_m2[3]) == pytest.approx(2.0 / 3.0)  # 2/(m+1)
    assert (out / "cell_000" / "energy.csv").exists()
    assert (out / "cell_001" / "energy.csv").exists()


def test_sweep_empty_block_single_run(tmp_path):
    text = BASE_SIM.replace('kind = "linear"', 'kind = "power"\nm = 2.0').replace(
        "t_end = 2.0", "t_end = 8.0"
    )
    text += "\n[sweep]\n"
    cfg = write_config(tmp_path, text)
    out = tmp_path / "sweep1"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "manifest.csv").read_text().strip().splitlines()
    assert len(lines) == 2


def test_sweep_marks_diverging_cell(tmp_path):
    text = BASE_SIM.replace(
        'shape = "eigenmode"\ne0_target = 0.05', 'shape = "bump"\namplitude = 50.0'
    ).replace('kind = "linear"', 'kind = "power"\nm = 2.0')
    text += "\n[sweep]\nm = [2.0]\n"
    cfg = write_config(tmp_path, text)
    out = tmp_path / "sweep_bad"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 4
    manifest = (out / "manifest.csv").read_text()
    assert "blowup" in manifest


def test_config_echo_round_trips(tmp_path):
    cfg = write_config(tmp_path, BASE_SIM)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    echoed = (out / "config_used.toml").read_text()
    assert parse_config_text(echoed) == parse_config_text(BASE_SIM)
