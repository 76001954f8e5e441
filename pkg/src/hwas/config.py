"""Run configuration: one structured file, CLI flags override file keys."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InputValidationError

# keys that never change an output value and stay out of the config hash
_UNHASHED = {"workers", "inputs"}
# warm-season percentiles computed once per run
ANCHOR_LEVELS = (0.50, 0.70, 0.95)


@dataclass
class Inputs:
    visits: str | None = None
    gem: str | None = None
    holidays: str | None = None
    temperature: str | None = None
    grid: str | None = None
    membership: str | None = None
    descriptions: str | None = None


@dataclass
class RunConfig:
    season_months: list[int] = field(default_factory=lambda: [5, 6, 7, 8, 9])
    years: list[int] = field(default_factory=lambda: [2011, 2023])
    target_percentile: float = 0.95
    ref_percentile: float = 0.50
    screen_percentile: float = 0.70
    alpha: float = 0.05
    min_count: int = 100
    min_rel_freq: float = 0.30
    criteria: dict = field(default_factory=lambda: {"slope": True, "freq": True, "count": True})
    year_coding: str = "factor"
    min_age: int = 18
    keep_missing_age: bool = True
    max_lag: int = 3
    exposure_degree: int = 2
    exposure_knot_percentile: float = 0.50
    lag_knots: int = 1
    referent: str = "month"
    variants: list[str] = field(default_factory=lambda: ["primary", "sens_i", "sens_ii", "sens_iii", "sens_iv"])
    strat_vars: list[str] = field(default_factory=lambda: ["sex", "age_group", "race_ethnicity", "region"])
    stage2_missing_tract: str = "exclude"
    tract_fallback_citywide: bool = True
    extreme_strict: bool = False
    stratified_rescreen: bool = False
    glm_tol: float = 1e-8
    glm_max_iter: int = 50
    clogit_tol: float = 1e-8
    clogit_max_iter: int = 50
    workers: int = 1
    seed: int = 0
    inputs: Inputs = field(default_factory=Inputs)

    def __post_init__(self):
        if isinstance(self.inputs, dict):
            self.inputs = Inputs(**self.inputs)
        self.validate()

    def validate(self):
        err = []
        if not 0 < self.ref_percentile < self.target_percentile < 1:
            err.append("need 0 < ref_percentile < target_percentile < 1")
        for name in ("ref_percentile", "target_percentile", "screen_percentile", "exposure_knot_percentile"):
            if round(getattr(self, name), 2) not in ANCHOR_LEVELS:
                err.append(f"{name} must be one of {ANCHOR_LEVELS}")
        if not 0 < self.alpha < 1:
            err.append("alpha must lie in (0, 1)")
        if not 0 <= self.min_rel_freq <= 1:
            err.append("min_rel_freq must lie in [0, 1]")
        if self.min_count < 0:
            err.append("min_count must be >= 0")
        if not set(self.season_months) <= set(range(1, 13)) or not self.season_months:
            err.append("season_months must be a nonempty subset of 1..12")
        if len(self.years) != 2 or self.years[0] > self.years[1]:
            err.append("years must be [first, last]")
        if self.year_coding not in ("factor", "linear"):
            err.append("year_coding must be 'factor' or 'linear'")
        if self.referent not in ("month", "fixed28"):
            err.append("referent must be 'month' or 'fixed28'")
        if self.stage2_missing_tract not in ("exclude", "citywide"):
            err.append("stage2_missing_tract must be 'exclude' or 'citywide'")
        if self.max_lag < 0 or self.lag_knots < 0 or self.exposure_degree < 1:
            err.append("max_lag, lag_knots >= 0 and exposure_degree >= 1 required")
        unknown = set(self.criteria) - {"slope", "freq", "count"}
        if unknown:
            err.append(f"unknown criteria {sorted(unknown)}")
        if self.workers < 1:
            err.append("workers must be >= 1")
        if err:
            raise InputValidationError("; ".join(err))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InputValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InputValidationError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputValidationError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
