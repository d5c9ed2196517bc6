"""YAML configuration for the command-line tools.

A config file has up to six top-level sections, all optional except
``fleet``::

    fleet:                     # explicit clients ...
      total_bandwidth: 100
      clients:
        - {id: 1, compute_time: 1.0, comm_time_unit_bw: 50, data_size: 100}
    fleet:                     # ... or generated device classes
      total_bandwidth: 100
      per_class: 20
      jitter: 0.1
      seed: 0
      classes:                 # defaults to DEFAULT_CLASS_SPECS
        - {compute_time: 1.0, comm_time_unit_bw: 50, mean_data: 100}
    task: {kind: logistic, eta: 0.03, ...}       # TaskSpec fields
    target: {kind: loss, value: 1.72}
    experiment: {seeds: [0, 1, 2], baselines: [full, uniform], ...}
    optimizer: {m_grid_steps: 200}
    constants: {alpha: 198.0, beta: 1.99}        # used by `optimize`

Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

from fedsample.convergence import ConvergenceConstants
from fedsample.errors import ConfigError
from fedsample.experiment import ExperimentPlan, Target, TaskSpec
from fedsample.optimizer import OptimizerConfig
from fedsample.system import (
    DEFAULT_CLASS_SPECS,
    ClassSpec,
    ClientProfile,
    SystemModel,
    build_system,
    generate_fleet,
    validate_system,
)

_SECTIONS = {"fleet", "task", "target", "experiment", "optimizer", "constants"}
_EXPERIMENT_KEYS = {"baselines", "fixed_p", "seeds", "pilot_rounds", "pilot_cap_factor",
                    "max_rounds", "bandwidth_multipliers"}


@dataclass
class Config:
    fleet: SystemModel
    task: TaskSpec
    target: Target
    optimizer: OptimizerConfig
    experiment: dict[str, Any]
    constants: ConvergenceConstants | None = None

    def plan(self, seeds: list[int] | None = None, f_tot: float | None = None) -> ExperimentPlan:
        """Experiment plan with optional seed list and bandwidth overrides."""
        fleet = self.fleet.with_bandwidth(f_tot) if f_tot is not None else self.fleet
        opts = dict(self.experiment)
        if seeds is not None:
            opts["seeds"] = seeds
        for key in ("baselines", "seeds", "bandwidth_multipliers"):
            if key in opts:
                opts[key] = tuple(opts[key])
        return ExperimentPlan(fleet=fleet, task=self.task, target=self.target,
                              optimizer=self.optimizer, **opts)


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _build(section: str, cls, given: dict):
    _check_keys(section, given, _field_names(cls))
    try:
        return cls(**given)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


def fleet_from_dict(d: dict) -> SystemModel:
    """Build and validate a fleet from its config mapping."""
    _check_keys("fleet", d, {"total_bandwidth", "clients", "classes", "per_class", "jitter", "seed"})
    f_tot = float(d.get("total_bandwidth", 100.0))
    if "clients" in d:
        extra = {"classes", "per_class", "jitter", "seed"} & set(d)
        if extra:
            raise ConfigError(f"fleet: 'clients' cannot be combined with {sorted(extra)}")
        clients = [_build("fleet.clients", ClientProfile, c) for c in d["clients"]]
        model = build_system(clients, f_tot)
    else:
        classes = d.get("classes")
        specs = DEFAULT_CLASS_SPECS if classes is None else [_build("fleet.classes", ClassSpec, c) for c in classes]
        model = generate_fleet(len(specs), int(d.get("per_class", 20)), specs,
                               jitter=float(d.get("jitter", 0.1)), seed=int(d.get("seed", 0)),
                               total_bandwidth=f_tot)
    report = validate_system(model)
    if not report.ok:
        raise ConfigError("invalid fleet: " + "; ".join(report.violations))
    return model


def config_from_dict(d: dict) -> Config:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    _check_keys("config", d, _SECTIONS)
    if "fleet" not in d:
        raise ConfigError("config needs a 'fleet' section")
    experiment = d.get("experiment", {})
    _check_keys("experiment", experiment, _EXPERIMENT_KEYS)
    constants = d.get("constants")
    if constants is not None:
        _check_keys("constants", constants, {"alpha", "beta", "pilot"})
        try:
            constants = ConvergenceConstants.from_dict(constants)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid 'constants': {exc}") from exc
    return Config(
        fleet=fleet_from_dict(d["fleet"]),
        task=_build("task", TaskSpec, d.get("task", {})),
        target=_build("target", Target, d.get("target", {})),
        optimizer=_build("optimizer", OptimizerConfig, d.get("optimizer", {})),
        experiment=dict(experiment),
        constants=constants,
    )


def load_config(path: str | Path) -> Config:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    return config_from_dict(raw or {})
