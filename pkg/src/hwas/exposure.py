"""Daily maximum temperature series and warm-season percentile anchors."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import EmptyTract, InputValidationError, NoData


@dataclass(frozen=True)
class PercentileAnchors:
    p50: float
    p70: float
    p95: float
    season_months: tuple[int, ...]
    years: tuple[int, int]
    n_days: int = 0

    def __post_init__(self):
        if not self.p50 <= self.p70 <= self.p95:
            raise ValueError(f"anchors out of order: {self.p50}, {self.p70}, {self.p95}")

    def at(self, q: float) -> float:
        return {0.50: self.p50, 0.70: self.p70, 0.95: self.p95}[round(q, 2)]

    def to_dict(self) -> dict:
        return {"p50": self.p50, "p70": self.p70, "p95": self.p95,
                "season_months": list(self.season_months), "years": list(self.years),
                "n_days": self.n_days}


class ExposureSeries:
    """Per-tract daily Tmax (wide frame: dates x tracts) plus the citywide mean."""

    def __init__(self, tract: pd.DataFrame, citywide: pd.Series | None = None):
        tract = tract.sort_index().sort_index(axis=1)
        tract.index = pd.DatetimeIndex(tract.index, name="date")
        values = tract.to_numpy(dtype=float)
        if np.isinf(values).any():
            raise InputValidationError("temperatures must be finite")
        self.tract = tract
        self.citywide = citywide_series(self) if citywide is None else citywide.sort_index()

    @property
    def coverage(self) -> tuple[dt.date, dt.date]:
        return self.tract.index[0].date(), self.tract.index[-1].date()

    @property
    def tract_ids(self) -> list[str]:
        return list(self.tract.columns)

    def value(self, tract_id: str, date) -> float:
        if tract_id not in self.tract.columns:
            raise EmptyTract(f"tract {tract_id!r} has no member cells")
        try:
            v = self.tract.at[pd.Timestamp(date), tract_id]
        except KeyError:
            raise EmptyTract(f"tract {tract_id!r} has no data on {date}") from None
        if np.isnan(v):
            raise EmptyTract(f"tract {tract_id!r} has no data on {date}")
        return float(v)

    def to_long(self) -> pd.DataFrame:
        long = self.tract.stack().rename("tmax_c").reset_index()
        long.columns = ["date", "tract_id", "tmax_c"]
        return long


def link_grid_to_tracts(grid_values, membership: dict) -> ExposureSeries:
    """Average grid-cell Tmax over the cells belonging to each tract, per date.

    ``grid_values`` is a frame with columns cell_id, date, tmax_c or an
    iterable of ``(cell_id, date, tmax)`` tuples.
    """
    if not isinstance(grid_values, pd.DataFrame):
        grid_values = pd.DataFrame(list(grid_values), columns=["cell_id", "date", "tmax_c"])
    unknown = set(grid_values["cell_id"]) - set(membership)
    if unknown:
        raise InputValidationError(f"cells without tract membership: {sorted(unknown)[:5]}")
    frame = grid_values.assign(
        tract_id=grid_values["cell_id"].map(membership),
        date=pd.to_datetime(grid_values["date"]),
    )
    means = frame.groupby(["date", "tract_id"])["tmax_c"].mean()
    return ExposureSeries(means.unstack("tract_id"))


def citywide_series(series: ExposureSeries) -> pd.Series:
    """Unweighted mean over tracts with data, for every date with any data."""
    city = series.tract.mean(axis=1, skipna=True)
    return city.dropna().rename("tmax_c")


def citywide_value(citywide: pd.Series, date) -> float:
    try:
        value = citywide.loc[pd.Timestamp(date)]
    except KeyError:
        raise NoData(f"no temperature on {date}") from None
    if np.isnan(value):
        raise NoData(f"no temperature on {date}")
    return float(value)


def in_season(index: pd.DatetimeIndex, season_months, years) -> np.ndarray:
    lo, hi = years
    return np.asarray(index.month.isin(list(season_months)) & (index.year >= lo) & (index.year <= hi))


def percentile_anchors(citywide: pd.Series, season_months=range(5, 10), years=(2011, 2023),
                       qs=(0.50, 0.70, 0.95)) -> PercentileAnchors:
    """Warm-season quantiles of the citywide daily series.

    Uses linear interpolation between order statistics (position
    ``(n - 1) q + 1`` in 1-based ranks).
    """
    season_months = tuple(sorted(season_months))
    mask = in_season(pd.DatetimeIndex(citywide.index), season_months, years)
    values = citywide.to_numpy(dtype=float)[mask]
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise NoData("no in-season temperatures")
    p50, p70, p95 = np.quantile(values, list(qs), method="linear")
    return PercentileAnchors(float(p50), float(p70), float(p95), season_months,
                             (int(years[0]), int(years[1])), int(values.size))


def is_extreme(date, citywide: pd.Series, anchors: PercentileAnchors, strict: bool = False) -> bool:
    tmax = citywide_value(citywide, date)
    return tmax > anchors.p95 if strict else tmax >= anchors.p95


def load_temperature(path) -> ExposureSeries:
    frame = pd.read_csv(path, dtype={"tract_id": str})
    needed = {"date", "tract_id", "tmax_c"}
    if not needed <= set(frame.columns):
        raise InputValidationError(f"{path}: expected columns {sorted(needed)}")
    try:
        frame["date"] = pd.to_datetime(frame["date"], format="%Y-%m-%d")
    except ValueError as exc:
        raise InputValidationError(f"{path}: {exc}") from exc
    if frame.duplicated(["date", "tract_id"]).any():
        raise InputValidationError(f"{path}: duplicate (date, tract_id) rows")
    if not np.isfinite(frame["tmax_c"].to_numpy(dtype=float)).all():
        raise InputValidationError(f"{path}: non-finite temperatures")
    return ExposureSeries(frame.pivot(index="date", columns="tract_id", values="tmax_c"))


def load_grid(grid_path, membership_path) -> ExposureSeries:
    grid = pd.read_csv(grid_path, dtype={"cell_id": str})
    members = pd.read_csv(membership_path, dtype={"cell_id": str, "tract_id": str})
    if members["cell_id"].duplicated().any():
        raise InputValidationError(f"{membership_path}: a cell belongs to several tracts")
    return link_grid_to_tracts(grid, dict(zip(members["cell_id"], members["tract_id"])))
