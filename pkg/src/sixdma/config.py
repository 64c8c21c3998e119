"""Experiment configuration loaded from YAML.

Every section is optional; missing keys take the defaults below.  Unknown
keys are rejected so typos surface as configuration errors.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .benchmarks import McAoConfig, PsoConfig
from .channel import RadiationPattern
from .errors import ConfigError, InvalidInputError
from .geometry import SurfaceTemplate
from .rotation_opt import RotationOptConfig
from .scenario import Deployment, UserCluster, reference_deployment
from .sci_estimation import DEFAULT_GRID_SIZE, GROUPINGS, ArrayHardware

DEFAULT_USER_POWER = 1e-3
DEFAULT_NOISE_POWER = 1e-12


@dataclass(frozen=True)
class ScenarioConfig:
    scatterers: tuple = ((-40.0, 30.0, 10.0), (20.0, 0.0, 10.0), (0.0, -10.0, 0.0))
    clusters: tuple = (
        {"center": (-40.0, 50.0, 0.0), "radius": 5.0, "count": 2},
        {"center": (30.0, 80.0, 0.0), "radius": 5.0, "count": 1},
        {"center": (-10.0, -20.0, 0.0), "radius": 10.0, "count": 2},
    )
    bs_position: tuple = (0.0, 0.0, 0.0)
    path_loss_exponent: float = 3.0
    wavelength: float = 0.125
    user_power: float = DEFAULT_USER_POWER
    noise_power: float = DEFAULT_NOISE_POWER
    direct_blocked: bool = True

    def deployment(self, **overrides) -> Deployment:
        kw = dict(
            scatterers=tuple(tuple(float(x) for x in s) for s in self.scatterers),
            clusters=tuple(UserCluster(tuple(c["center"]), float(c["radius"]), int(c["count"])) for c in self.clusters),
            bs_position=tuple(self.bs_position),
            path_loss_exponent=self.path_loss_exponent,
            wavelength=self.wavelength,
            user_power=self.user_power,
            noise_power=self.noise_power,
            direct_blocked=self.direct_blocked,
        )
        kw.update(overrides)
        return Deployment(**kw)


@dataclass(frozen=True)
class ArrayConfig:
    n_surfaces: int = 8
    template: str = "square"
    beamwidth_deg: float = 65.0
    max_gain_dbi: float = 8.0
    front_back_db: float = 30.0
    side_lobe_db: float = 30.0
    isotropic: bool = False
    region_edge: float = 1.0

    def __post_init__(self):
        if self.n_surfaces < 1:
            raise ConfigError("array.n_surfaces must be positive")
        if self.template != "square":
            raise ConfigError(f"unknown surface template {self.template!r} (only 'square' is built in)")

    def pattern(self) -> RadiationPattern:
        if self.isotropic:
            return RadiationPattern.unit()
        return RadiationPattern(np.deg2rad(self.beamwidth_deg), None, self.max_gain_dbi,
                                self.front_back_db, self.side_lobe_db)

    def hardware(self, wavelength: float) -> ArrayHardware:
        return ArrayHardware(SurfaceTemplate.square(wavelength), self.pattern(), wavelength)


@dataclass(frozen=True)
class TrainingConfig:
    M: int = 16
    T: int = 100
    grid_size: int = DEFAULT_GRID_SIZE
    radius: float | None = None
    grouping: str = "interleaved"

    def __post_init__(self):
        if self.M < 1 or self.T < 1 or self.grid_size < 1:
            raise ConfigError("training M, T and grid_size must be positive")
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"training.grouping must be one of {GROUPINGS}")


@dataclass(frozen=True)
class RateConfig:
    samples: int = 10_000

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("rate.samples must be positive")


@dataclass(frozen=True)
class BenchmarkConfig:
    fa: bool = True
    paa: bool = False
    mcao: bool = False
    pso: PsoConfig = field(default_factory=PsoConfig)
    mc_ao: McAoConfig = field(default_factory=McAoConfig)


@dataclass(frozen=True)
class SweepConfig:
    M: tuple = (8, 16, 32)
    power: tuple = (1e-4, 1e-3, 1e-2)
    T: tuple = (10, 100, 1000)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    array: ArrayConfig = field(default_factory=ArrayConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    optimizer: RotationOptConfig = field(default_factory=RotationOptConfig)
    rate: RateConfig = field(default_factory=RateConfig)
    benchmarks: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: tuple = (0,)
    output_dir: str = "results"

    def __post_init__(self):
        if len(self.seeds) == 0:
            raise ConfigError("at least one seed is required")
        if self.training.M % self.array.n_surfaces:
            raise ConfigError(f"training.M={self.training.M} is not a multiple of array.n_surfaces={self.array.n_surfaces}")
        if self.optimizer.inscribed_radius > self.array.region_edge / 2.0:
            raise ConfigError("optimizer.inscribed_radius exceeds half the region edge")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"training.M": 32})``."""
        data = self.to_dict()
        for key, value in changes.items():
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return from_dict(data)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    if isinstance(x, dict):
        return {k: _tuplify(v) for k, v in x.items()}
    return x


def _build(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or 'root'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'root'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if callable(f.default_factory) else f.default  # type: ignore[misc]
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}".strip("."))
        else:
            kwargs[name] = _tuplify(value)
    try:
        return cls(**kwargs)
    except (TypeError, InvalidInputError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'root'} section: {exc}") from exc


def from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def default_deployment() -> Deployment:
    return reference_deployment(user_power=DEFAULT_USER_POWER, noise_power=DEFAULT_NOISE_POWER)
