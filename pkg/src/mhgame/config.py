"""YAML run configuration: parsing, default resolution and validation.

A configuration file has three optional sections::

    scenario:            # any ScenarioConfig field; defaults depend on ``kind``
      kind: merging
      hierarchy: mixed_a # a name, "1->3, 1->2" or a list of [leader, follower]
    solver:              # any SolverOptions field
      tol: 1.0e-6
    run:                 # settings of the experiment driver
      mode: solve
      steps: 30
      runs: 10
      perturbation: 0.1
      seed: 0

Every problem found is collected before reporting, so a file with several
mistakes is rejected once with the full list.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .solver import SolverOptions
from .trajgames.scenarios import (
    GUARDING_HIERARCHIES,
    MERGING_HIERARCHIES,
    SCENARIO_KINDS,
    ScenarioConfig,
    default_config,
    resolve_edges,
)

__all__ = [
    "ConfigError",
    "RunSettings",
    "RunConfig",
    "MODES",
    "resolve_config",
    "load_config",
    "validate_config",
    "config_to_dict",
    "dump_config",
]

MODES = ("solve", "receding", "sweep", "converge")


class ConfigError(ValueError):
    """Configuration problems, all of them, in ``errors``."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class RunSettings:
    """Experiment driver settings.

    ``steps`` is the number of receding-horizon steps, ``runs`` the number of
    perturbed initial states in a convergence study, ``perturbation`` their
    relative magnitude and ``hierarchies`` the structures visited by a sweep
    (all named structures of the scenario kind when empty).
    """

    mode: str = "solve"
    steps: int = 30
    runs: int = 10
    perturbation: float = 0.1
    seed: int = 0
    hierarchies: tuple = ()

    def validate(self) -> list[str]:
        errors = []
        if self.mode not in MODES:
            errors.append(f"run.mode: unknown mode {self.mode!r} (expected one of {', '.join(MODES)})")
        if not isinstance(self.steps, int) or self.steps < 0:
            errors.append("run.steps: must be a nonnegative integer")
        if not isinstance(self.runs, int) or self.runs < 1:
            errors.append("run.runs: must be a positive integer")
        if not 0 <= self.perturbation < 1:
            errors.append("run.perturbation: must lie in [0, 1)")
        if not isinstance(self.seed, int) or self.seed < 0:
            errors.append("run.seed: must be a nonnegative integer")
        return errors


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    solver: SolverOptions = field(default_factory=SolverOptions)
    run: RunSettings = field(default_factory=RunSettings)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def sweep_hierarchies(self) -> tuple:
        if self.run.hierarchies:
            return self.run.hierarchies
        table = MERGING_HIERARCHIES if self.scenario.kind == "merging" else GUARDING_HIERARCHIES
        return tuple(table)


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(value, default, where: str, errors: list[str]):
    """Convert ``value`` to the type of ``default``; record a message on failure."""
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true or false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if isinstance(default, tuple):
            if isinstance(value, (str, Mapping)) or not hasattr(value, "__iter__"):
                raise TypeError("expected a list")
            return tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return default
    return value


def _section(data, name: str, errors: list[str]) -> dict:
    sec = data.get(name, {}) if isinstance(data, Mapping) else {}
    if sec is None:
        return {}
    if not isinstance(sec, Mapping):
        errors.append(f"{name}: expected a mapping")
        return {}
    return dict(sec)


def _resolve_scenario(sec: dict, errors: list[str]) -> ScenarioConfig | None:
    kind = sec.get("kind", "merging")
    if kind not in SCENARIO_KINDS:
        errors.append(f"scenario.kind: unknown scenario kind {kind!r} (expected one of {', '.join(SCENARIO_KINDS)})")
        return None
    base = default_config(kind)
    fields = _field_types(ScenarioConfig)
    overrides = {}
    for key, value in sec.items():
        if key == "kind":
            continue
        if key not in fields:
            errors.append(f"scenario.{key}: unknown field")
            continue
        if key == "hierarchy":
            if isinstance(value, str):
                overrides[key] = value
            elif isinstance(value, (list, tuple)):
                overrides[key] = tuple(tuple(e) if isinstance(e, (list, tuple)) else e for e in value)
            else:
                errors.append("scenario.hierarchy: expected a name or a list of [leader, follower] pairs")
            continue
        overrides[key] = _coerce(value, getattr(base, key), f"scenario.{key}", errors)
    # geometry defaults follow the ramp radius, so rebuild from the kind's factory
    try:
        cfg = default_config(kind, **overrides)
    except (TypeError, ValueError) as exc:
        errors.append(f"scenario: {exc}")
        return None
    errors.extend(f"scenario.{msg}" for msg in cfg.validate())
    return cfg


def _resolve_plain(cls, sec: dict, prefix: str, errors: list[str]):
    base = cls()
    fields = _field_types(cls)
    values = {}
    for key, value in sec.items():
        if key not in fields:
            errors.append(f"{prefix}.{key}: unknown field")
            continue
        if key == "hierarchies":
            if isinstance(value, str) or not isinstance(value, (list, tuple)):
                errors.append(f"{prefix}.hierarchies: expected a list")
                continue
            values[key] = tuple(tuple(tuple(e) for e in v) if isinstance(v, (list, tuple)) else v for v in value)
            continue
        values[key] = _coerce(value, getattr(base, key), f"{prefix}.{key}", errors)
    try:
        return cls(**values)
    except ValueError as exc:
        errors.append(f"{prefix}: {exc}")
        return base


def resolve_config(data: Mapping | None) -> RunConfig:
    """Full configuration from a parsed mapping, or :class:`ConfigError`."""
    errors: list[str] = []
    data = {} if data is None else data
    if not isinstance(data, Mapping):
        raise ConfigError(["top level: expected a mapping with scenario, solver and run sections"])
    for key in data:
        if key not in ("scenario", "solver", "run"):
            errors.append(f"{key}: unknown section")
    scenario = _resolve_scenario(_section(data, "scenario", errors), errors)
    solver = _resolve_plain(SolverOptions, _section(data, "solver", errors), "solver", errors)
    run = _resolve_plain(RunSettings, _section(data, "run", errors), "run", errors)
    errors.extend(run.validate())
    if scenario is not None:
        for h in run.hierarchies:
            try:
                resolve_edges(scenario.kind, h)
            except (TypeError, ValueError) as exc:
                errors.append(f"run.hierarchies: {exc}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(scenario, solver, run)


def load_config(path: str | Path) -> RunConfig:
    """Read and resolve a YAML configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    return resolve_config(data)


def validate_config(path: str | Path) -> tuple[RunConfig | None, list[str]]:
    """``(resolved config, [])`` for a valid file, else ``(None, errors)``."""
    try:
        return load_config(path), []
    except ConfigError as exc:
        return None, exc.errors


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    """Every resolved field as plain lists, numbers and strings."""
    return {
        "scenario": {k: _plain(v) for k, v in dataclasses.asdict(cfg.scenario).items()},
        "solver": dataclasses.asdict(cfg.solver),
        "run": {k: _plain(v) for k, v in dataclasses.asdict(cfg.run).items()},
    }


def dump_config(cfg: RunConfig) -> str:
    """YAML text that :func:`resolve_config` maps back to ``cfg``."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)
