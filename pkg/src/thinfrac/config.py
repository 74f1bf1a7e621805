"""Run configuration: YAML parsing, defaults, validation and hashing."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import yaml

from .densities import BULK_CATALOG, SURFACE_CATALOG

SUBCOMMANDS = ("reduce", "envelope", "maps", "recover", "sweep", "validate")
FORMATS = ("csv", "text")
DEFAULT_Q = [[2.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-10`` (no decimal point) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)(?:[eE][-+]?[0-9]+)?$
               |^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$""", re.X),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """Invalid configuration; maps to exit status 2."""


@dataclass
class BulkSpec:
    name: str = "INCOMP_POWER"
    p: float = 2.0


@dataclass
class SurfaceSpec:
    name: str = "SURF_QUAD"
    Q: list = field(default_factory=lambda: [row[:] for row in DEFAULT_Q])
    cap: float = 0.5


@dataclass
class GridSpec:
    n: int = 64
    m: int = 16
    order: int = 2


@dataclass
class PartitionSpec:
    n: int = 1
    eps: float = 0.04
    strip: float = 0.02


@dataclass
class Tolerances:
    ode: float = 1e-10
    newton: float = 1e-10


@dataclass
class RunConfig:
    """Fully defaulted run description."""

    command: str = "sweep"
    scene: Optional[str] = None  # path to a scene file; None selects the standard fixture
    bulk: BulkSpec = field(default_factory=BulkSpec)
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    rho: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    samples: int = 10_000
    depth: int = 2
    delta: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    seed: int = 0
    format: str = "csv"

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Short SHA-256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_SECTIONS = {"bulk": BulkSpec, "surface": SurfaceSpec, "grid": GridSpec,
             "partition": PartitionSpec, "tolerances": Tolerances}


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = set(cls.__dataclass_fields__)
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}; allowed: {sorted(known)}")
    return cls(**data)


def _positive(value, name, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number")
    if integer and int(value) != value:
        raise ConfigError(f"{name} must be an integer")
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")


def validate_config(cfg: RunConfig) -> RunConfig:
    if cfg.command not in SUBCOMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}; expected one of {list(SUBCOMMANDS)}")
    if cfg.format not in FORMATS:
        raise ConfigError(f"format must be one of {list(FORMATS)}")
    if cfg.bulk.name.upper() not in BULK_CATALOG:
        raise ConfigError(f"unknown bulk density {cfg.bulk.name!r}; catalog: {sorted(BULK_CATALOG)}")
    if cfg.surface.name.upper() not in SURFACE_CATALOG:
        raise ConfigError(f"unknown surface density {cfg.surface.name!r}; catalog: {sorted(SURFACE_CATALOG)}")
    if not cfg.bulk.p > 1:
        raise ConfigError("bulk.p must exceed 1")
    _positive(cfg.surface.cap, "surface.cap")
    for name in ("n", "m", "order"):
        _positive(getattr(cfg.grid, name), f"grid.{name}", integer=True)
    if cfg.grid.n < 2 or cfg.grid.m < 2:
        raise ConfigError("grid.n and grid.m must be at least 2")
    _positive(cfg.partition.n, "partition.n", integer=True)
    _positive(cfg.partition.eps, "partition.eps")
    _positive(cfg.partition.strip, "partition.strip")
    _positive(cfg.tolerances.ode, "tolerances.ode")
    _positive(cfg.tolerances.newton, "tolerances.newton")
    _positive(cfg.samples, "samples", integer=True)
    if not isinstance(cfg.depth, int) or cfg.depth < 0:
        raise ConfigError("depth must be a nonnegative integer")
    if not isinstance(cfg.rho, list) or not cfg.rho:
        raise ConfigError("rho must be a nonempty list")
    for r in cfg.rho:
        _positive(r, "rho entries")
    if any(b >= a for a, b in zip(cfg.rho, cfg.rho[1:])):
        raise ConfigError("rho must be strictly decreasing")
    for d in cfg.delta:
        _positive(d, "delta entries")
        if d >= 1:
            raise ConfigError("delta entries must lie in (0, 1)")
    if not isinstance(cfg.seed, int) or cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse a YAML run configuration; unknown keys and bad ranges are errors."""
    try:
        data = yaml.load(text, Loader=_Loader) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"cannot parse configuration{where}: {getattr(exc, 'problem', exc)}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    known = set(RunConfig.__dataclass_fields__)
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown keys {extra}; allowed: {sorted(known)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            try:
                kwargs[key] = _build(_SECTIONS[key], value, key)
            except TypeError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        elif key in ("rho", "delta"):
            kwargs[key] = [float(v) for v in value] if isinstance(value, list) else value
        else:
            kwargs[key] = value
    return validate_config(RunConfig(**kwargs))
