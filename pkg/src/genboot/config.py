"""Experiment configuration: a versioned JSON file with strict key checking.

Unknown keys are rejected rather than ignored so typos surface as config
errors (exit code 1 in the CLI) instead of silently running defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .gan import GanConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "resolve"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment run needs besides the output directory."""

    # data-generating process
    phis: tuple = (0.5, 0.8, 0.9)
    path_length: int = 1000  # T
    # generator bootstrap
    gan: GanConfig = field(default_factory=GanConfig)
    block_length: int = 150  # b1, training block size
    sample_length: int | None = None  # b2; None means T (complete sampling)
    n_samples: int = 10_000  # m, bootstrap resamples per replication
    replications_gb: int = 1000
    # circular block bootstrap baseline
    cbb_block_sizes: tuple = (50, 100, 150)
    replications_cbb: int = 5000
    # shared
    levels: tuple = (0.80, 0.90, 0.95, 0.99)
    max_lag: int = 20
    mc_band_draws: int = 200  # Monte Carlo draws for the theoretical ACF band
    oracle_mode: bool = False  # sample the fitted true model family instead of the GAN
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("path_length", "block_length", "n_samples",
                     "replications_gb", "replications_cbb", "max_lag",
                     "mc_band_draws", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.phis:
            raise ConfigError("phis must be nonempty")
        for phi in self.phis:
            if not abs(phi) < 1:
                raise ConfigError(f"phi values must satisfy |phi| < 1, got {phi}")
        if not all(0 < lv < 1 for lv in self.levels):
            raise ConfigError("levels must lie in (0, 1)")
        if self.block_length >= self.path_length:
            raise ConfigError("block_length must be < path_length")
        if self.sample_length is not None and self.sample_length < 2:
            raise ConfigError("sample_length must be >= 2")
        for b in self.cbb_block_sizes:
            if not 1 <= b <= self.path_length:
                raise ConfigError(f"cbb block size {b} outside [1, path_length]")

    @property
    def resolved_sample_length(self) -> int:
        return self.path_length if self.sample_length is None else self.sample_length

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d


def resolve(data: dict) -> ExperimentConfig:
    """Build a config from a parsed dict, applying defaults and rejecting
    unknown keys (including inside the 'gan' section)."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for f in fields(ExperimentConfig):
        if f.name not in data:
            continue
        v = data[f.name]
        if f.name == "gan":
            try:
                v = GanConfig.from_dict(v)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"gan section: {exc}") from exc
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return ExperimentConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return resolve(data)
