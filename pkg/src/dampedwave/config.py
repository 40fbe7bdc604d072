"""Experiment configuration: versioned TOML schema with strict key checking.

Unknown keys are rejected rather than ignored so a config file always means
what it says; serialize(parse(text)) round-trips to an equal config.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed experiment config (parse failure, unknown key, bad value)."""


@dataclass(frozen=True)
class DomainSpec:
    dim: int = 1
    lengths: tuple = (1.0,)
    interior_counts: tuple = (64,)


@dataclass(frozen=True)
class CoefficientSpec:
    preset: str = "identity"  # identity | scaled | variable_iso | anisotropic
    scale: float = 1.0


@dataclass(frozen=True)
class FeedbackSpec:
    kind: str = "linear"  # linear | power | origin_degenerate
    m: float = 1.0
    coefficient: float = 1.0


@dataclass(frozen=True)
class ScheduleSpec:
    preset: str = "constant"  # constant | power_decay
    gamma0: float = 1.0
    q: float = 1.0


@dataclass(frozen=True)
class SourceSpec:
    p: float = 3.0
    scale: float = 1.0


@dataclass(frozen=True)
class InitialSpec:
    shape: str = "eigenmode"  # eigenmode | bump | random
    e0_target: float | None = None
    e0_fraction_of_F1: float | None = None
    amplitude: float = 0.1
    velocity: str = "zero"  # zero | random
    velocity_amplitude: float = 0.0


@dataclass(frozen=True)
class StepperSpec:
    dt: float = 1e-3
    t_end: float = 10.0
    record_every: int = 1


@dataclass(frozen=True)
class OutputSpec:
    energy_csv: str = "energy.csv"
    report_txt: str = "report.txt"
    report_toml: str = "report.toml"
    figures: bool = True


@dataclass(frozen=True)
class FitSpec:
    kind: str = "exponential"  # exponential | polynomial | general
    window: tuple | None = None
    csv: str = "energy.csv"


@dataclass(frozen=True)
class WellSpec:
    omega: float | None = None
    M: float | None = None
    E0: float | None = None
    a0: float | None = None


@dataclass(frozen=True)
class WeightsSpec:
    profile_kind: str = "power"  # linear | power | degenerate
    m: float = 3.0
    coefficient: float = 1.0
    t_max: float = 100.0
    n_points: int = 400
    csv: str = "weights.csv"


@dataclass(frozen=True)
class SweepSpec:
    m: tuple = ()
    schedules: tuple = ()  # tuple of ScheduleSpec


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    domain: DomainSpec = DomainSpec()
    coefficient: CoefficientSpec = CoefficientSpec()
    feedback: FeedbackSpec = FeedbackSpec()
    schedule: ScheduleSpec = ScheduleSpec()
    source: SourceSpec = SourceSpec()
    initial: InitialSpec = InitialSpec()
    stepper: StepperSpec = StepperSpec()
    outputs: OutputSpec = OutputSpec()
    fit: FitSpec | None = None
    well: WellSpec | None = None
    weights: WeightsSpec | None = None
    sweep: SweepSpec | None = None


_SECTION_TYPES = {
    "domain": DomainSpec,
    "coefficient": CoefficientSpec,
    "feedback": FeedbackSpec,
    "schedule": ScheduleSpec,
    "source": SourceSpec,
    "initial": InitialSpec,
    "stepper": StepperSpec,
    "outputs": OutputSpec,
    "fit": FitSpec,
    "well": WellSpec,
    "weights": WeightsSpec,
    "sweep": SweepSpec,
}
_OPTIONAL_SECTIONS = {"fit", "well", "weights", "sweep"}


def _convert(name: str, value, default, path: str):
    """Coerce a TOML value to the field's python type, or raise ConfigError."""
    if default is None or name in ("e0_target", "e0_fraction_of_F1", "omega", "M", "E0", "a0", "window"):
        # Nullable numeric fields / window tuple.
        if name == "window":
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ConfigError(f"{path}: window must be a 2-element array")
            return (float(value[0]), float(value[1]))
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array, got {value!r}")
        if name == "interior_counts":
            return tuple(int(v) for v in value)
        return tuple(float(v) for v in value)
    raise ConfigError(f"{path}: unsupported field type for {name}")


def _build_section(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if cls is SweepSpec and name == "schedules":
            if not isinstance(value, list):
                raise ConfigError(f"{path}.schedules: expected an array of tables")
            kwargs[name] = tuple(
                _build_section(ScheduleSpec, entry, f"{path}.schedules[{i}]")
                for i, entry in enumerate(value)
            )
            continue
        default = known[name].default
        kwargs[name] = _convert(name, value, default, f"{path}.{name}")
    return cls(**kwargs)


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    seed = raw.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a nonnegative integer, got {seed!r}")
    sections = {}
    for name, value in raw.items():
        if name not in _SECTION_TYPES:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        sections[name] = _build_section(_SECTION_TYPES[name], value, name)
    for name in _SECTION_TYPES:
        if name not in sections and name not in _OPTIONAL_SECTIONS:
            sections[name] = _SECTION_TYPES[name]()
    return ExperimentConfig(schema_version=SCHEMA_VERSION, seed=seed, **sections)


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


# ---------------------------------------------------------------------------
# Serialization (restricted TOML emitter: scalars, arrays, tables,
# arrays-of-tables one level deep -- exactly what the schema needs)
# ---------------------------------------------------------------------------


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return json.dumps(str(value))
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r} to TOML")


def emit_toml(tree: dict) -> str:
    """Emit a dict of scalars and one level of sub-tables as TOML text."""
    lines = []
    tables = []
    for key, value in tree.items():
        if value is None:
            continue
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_toml_scalar(value)}")
    for key, value in tables:
        array_items = []
        scalar_items = []
        for k, v in value.items():
            if v is None:
                continue
            if isinstance(v, list) and v and isinstance(v[0], dict):
                array_items.append((k, v))
            elif isinstance(v, dict):
                raise TypeError(f"nested table [{key}.{k}] not supported")
            else:
                scalar_items.append((k, v))
        lines.append("")
        lines.append(f"[{key}]")
        for k, v in scalar_items:
            lines.append(f"{k} = {_toml_scalar(v)}")
        for k, entries in array_items:
            for entry in entries:
                lines.append("")
                lines.append(f"[[{key}.{k}]]")
                for ek, ev in entry.items():
                    if ev is not None:
                        lines.append(f"{ek} = {_toml_scalar(ev)}")
    return "\n".join(lines) + "\n"


def _section_dict(spec) -> dict:
    out = {}
    for f in fields(spec):
        value = getattr(spec, f.name)
        if isinstance(value, tuple) and value and hasattr(value[0], "__dataclass_fields__"):
            out[f.name] = [_section_dict(v) for v in value]
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def serialize_config(config: ExperimentConfig) -> str:
    tree = {"schema_version": config.schema_version, "seed": config.seed}
    for name in _SECTION_TYPES:
        spec = getattr(config, name)
        if spec is not None:
            tree[name] = _section_dict(spec)
    return emit_toml(tree)
