"""Experiment configuration: dataclass sections loaded from a YAML file."""

from dataclasses import asdict, dataclass, field, fields, replace
from enum import StrEnum
from pathlib import Path
from typing import Any

import yaml

from .ncs_calibrator import NcsConfig
from .objectives import ObjectiveTag
from .pgps_model import DEFAULT_BOUNDS, PARAM_NAMES, SimConfig


class ConfigError(ValueError):
    """Raised for unreadable, unknown or invalid configuration values."""


class Mode(StrEnum):
    GEN_TARGETS = "gen-targets"
    SIMULATE = "simulate"
    CALIBRATE = "calibrate"
    LANDSCAPE = "landscape"
    COMPARE_OBJECTIVES = "compare-objectives"
    REPORT = "report"


class Optimizer(StrEnum):
    NCS = "ncs"
    RANDOM = "random"


@dataclass
class LandscapeConfig:
    dims: tuple[str, str] = ("lambda0", "c_lambda")
    resolution: int = 100
    top_k: int = 2000

    def __post_init__(self) -> None:
        self.dims = tuple(self.dims)


@dataclass
class DataConfig:
    """Where the target comes from, and how synthetic targets are drawn."""
    target_path: str | None = None
    target_params: dict[str, float] | None = None
    tick_size: float | None = None
    count: int = 10
    ranges: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))

    def __post_init__(self) -> None:
        ranges = dict(DEFAULT_BOUNDS)
        ranges.update({k: (float(v[0]), float(v[1])) for k, v in self.ranges.items()})
        self.ranges = ranges


@dataclass
class ExperimentConfig:
    mode: Mode = Mode.CALIBRATE
    objective: ObjectiveTag = ObjectiveTag.KS
    optimizer: Optimizer = Optimizer.NCS
    repeats: int = 10
    budget: int = 10_000
    stride: int = 1
    output_dir: str = "results"
    master_seed: int = 0
    threads: int = 1
    sim: SimConfig = field(default_factory=SimConfig)
    ncs: NcsConfig = field(default_factory=NcsConfig)
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self) -> None:
        try:
            self.mode = Mode(self.mode)
            self.objective = ObjectiveTag(self.objective)
            self.optimizer = Optimizer(self.optimizer)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.ncs.budget_evals != self.budget:
            self.ncs = replace(self.ncs, budget_evals=self.budget)

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def with_overrides(
        self, seed: int | None = None, output_dir: str | None = None, threads: int | None = None
    ) -> "ExperimentConfig":
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["master_seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if threads is not None:
            changes["threads"] = threads
        return replace(self, **changes)

    def validate(self) -> None:
        if self.repeats < 1:
            raise ConfigError("experiment.repeats must be >= 1")
        if self.threads < 1:
            raise ConfigError("experiment.threads must be >= 1")
        if self.budget < 1:
            raise ConfigError("experiment.budget must be >= 1")
        if self.stride < 1:
            raise ConfigError("experiment.stride must be >= 1")
        if self.data.count < 1:
            raise ConfigError("data.count must be >= 1")
        try:
            self.sim.validate()
            if self.optimizer is Optimizer.NCS:
                self.ncs.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.landscape.resolution < 2:
            raise ConfigError("landscape.resolution must be >= 2")
        if not 1 <= self.landscape.top_k <= self.landscape.resolution**2:
            raise ConfigError("landscape.top_k must lie in [1, resolution^2]")
        for name in self.landscape.dims:
            if name not in PARAM_NAMES:
                raise ConfigError(f"landscape.dims: unknown parameter {name!r}")

    def to_dict(self) -> dict[str, Any]:
        """Sectioned plain-data form, the same layout the YAML file uses."""
        ncs = {
            f.name: _plain(getattr(self.ncs, f.name))
            for f in fields(NcsConfig)
            if f.name not in ("budget_evals", "bounds")
        }
        ncs["bounds"] = {
            name: list(bound) for name, bound in zip(PARAM_NAMES, self.ncs.bounds, strict=True)
        }
        data = asdict(self.data)
        data["ranges"] = {name: list(bound) for name, bound in self.data.ranges.items()}
        landscape = asdict(self.landscape)
        landscape["dims"] = list(self.landscape.dims)
        return {
            "experiment": {
                "mode": str(self.mode),
                "objective": str(self.objective),
                "optimizer": str(self.optimizer),
                "repeats": self.repeats,
                "budget": self.budget,
                "stride": self.stride,
                "output_dir": self.output_dir,
                "master_seed": self.master_seed,
                "threads": self.threads,
            },
            "simulation": asdict(self.sim),
            "ncs": ncs,
            "landscape": landscape,
            "data": data,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        data = data or {}
        unknown = set(data) - {"experiment", "simulation", "ncs", "landscape", "data"}
        if unknown:
            raise ConfigError(f"Unknown config sections: {', '.join(sorted(unknown))}")

        experiment = _section(data, "experiment", {f.name for f in fields(cls)} - {
            "sim", "ncs", "landscape", "data"
        })
        ncs_values = _section(data, "ncs", {f.name for f in fields(NcsConfig)} - {"budget_evals"})
        if "bounds" in ncs_values:
            ncs_values["bounds"] = _bounds_tuple(ncs_values["bounds"])

        try:
            return cls(
                **experiment,
                sim=SimConfig(**_section(data, "simulation", set(SimConfig.field_names()))),
                ncs=NcsConfig(budget_evals=experiment.get("budget", 10_000), **ncs_values),
                landscape=LandscapeConfig(
                    **_section(data, "landscape", {f.name for f in fields(LandscapeConfig)})
                ),
                data=DataConfig(**_section(data, "data", {f.name for f in fields(DataConfig)})),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _plain(value: Any) -> Any:
    return str(value) if isinstance(value, StrEnum) else value


def _section(data: dict[str, Any], name: str, allowed: set[str]) -> dict[str, Any]:
    values = data.get(name) or {}
    if not isinstance(values, dict):
        raise ConfigError(f"Section {name!r} must be a mapping")
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"Unknown keys in {name!r}: {', '.join(sorted(unknown))}")
    return dict(values)


def _bounds_tuple(bounds: dict[str, Any]) -> tuple[tuple[float, float], ...]:
    unknown = set(bounds) - set(PARAM_NAMES)
    if unknown:
        raise ConfigError(f"Unknown bound names: {', '.join(sorted(unknown))}")
    merged = dict(DEFAULT_BOUNDS)
    merged.update({k: (float(v[0]), float(v[1])) for k, v in bounds.items()})
    return tuple(merged[name] for name in PARAM_NAMES)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    return ExperimentConfig.from_dict(data or {})


def default_config_yaml() -> str:
    return ExperimentConfig().to_yaml()
