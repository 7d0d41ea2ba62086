"""Run configuration, read from YAML.

A minimal file::

    data: data.csv
    out: runs/fit1
    covariates:
      - {name: age, center: true, scale: true}
      - {name: sex, categorical: true, reference: female, functional: false}
    sampler: {iterations: 15000, burn_in: 5000, thin: 10, n_chains: 4, seed: 1}

Everything else falls back to the defaults of :class:`Hyperparameters` and
:class:`SamplerConfig`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .model import Hyperparameters
from .sampler import SamplerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    functional: bool = True
    categorical: bool = False
    reference: str | None = None
    center: bool = False
    scale: bool = False

    def __post_init__(self) -> None:
        if self.categorical and (self.center or self.scale):
            raise ConfigError(f"categorical covariate {self.name!r} cannot be centred or scaled")
        if not self.categorical and self.reference is not None:
            raise ConfigError(f"reference level given for non-categorical {self.name!r}")


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    out: str = "out"
    id_column: str = "id"
    time_column: str = "time"
    covariates: tuple[CovariateSpec, ...] = ()
    taxa: tuple[str, ...] | None = None
    min_individuals: int = 5
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    window: tuple[float, float] | None = None
    l: float = 0.75
    grid_points: int = 101

    def __post_init__(self) -> None:
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ConfigError("covariate names must be unique")
        if self.min_individuals < 1:
            raise ConfigError("min_individuals must be >= 1")
        if self.window is not None and not self.window[0] < self.window[1]:
            raise ConfigError("window must satisfy t_lo < t_hi")
        if not 0.0 <= self.l < 1.0:
            raise ConfigError("l must lie in [0, 1)")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be >= 2")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            hyper = Hyperparameters(**(d.pop("hyper", None) or {}))
            sampler_d = dict(d.pop("sampler", None) or {})
            if "fixed" in sampler_d:
                sampler_d["fixed"] = tuple(sampler_d["fixed"])
            sampler = SamplerConfig(**sampler_d)
            covs = tuple(CovariateSpec(**c) if isinstance(c, dict) else CovariateSpec(name=str(c))
                         for c in (d.pop("covariates", None) or []))
        except TypeError as err:
            raise ConfigError(str(err)) from err
        except ValueError as err:
            raise ConfigError(str(err)) from err
        if d.get("taxa") is not None:
            d["taxa"] = tuple(d["taxa"])
        if d.get("window") is not None:
            d["window"] = tuple(float(v) for v in d["window"])
        if base_dir is not None and d.get("data") is not None:
            path = Path(d["data"])
            d["data"] = str(path if path.is_absolute() else base_dir / path)
        return cls(hyper=hyper, sampler=sampler, covariates=covs, **d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: {err}") from err
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(doc or {}, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        d["sampler"] = self.sampler.to_dict()
        d["covariates"] = [asdict(c) for c in self.covariates]
        d["taxa"] = list(self.taxa) if self.taxa is not None else None
        d["window"] = list(self.window) if self.window is not None else None
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    def with_sampler(self, **overrides) -> "RunConfig":
        """Copy with sampler fields replaced; ``None`` values are ignored."""
        kept = {k: v for k, v in overrides.items() if v is not None}
        if not kept:
            return self
        try:
            return replace(self, sampler=replace(self.sampler, **kept))
        except ValueError as err:
            raise ConfigError(str(err)) from err
