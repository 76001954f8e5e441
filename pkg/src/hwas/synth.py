"""Synthetic visit/temperature bundles with known exposure-response truth.

Daily counts per (code, tract, day) are Poisson, optionally gamma-mixed per
(code, day), with log-rate

    log(rate_code * tract_share) + calendar(day) + sum_l f_code(T[tract, day - l], l)

where ``f_code(t, l) = slope_code[l] * (t - p50)``. Each counted event becomes
one visit carrying one diagnosis code.
"""

from __future__ import annotations

import datetime as dt
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from pandas.tseries.holiday import USFederalHolidayCalendar

from .exposure import ExposureSeries, PercentileAnchors, in_season, percentile_anchors
from .ingest import FRAME_COLUMNS

REGIONS = ("Central", "North", "Northwest", "South", "Southwest", "FarSouth", "West")
SEXES = ("Female", "Male", "Other")
RACES = ("Asian", "BlackOrAfricanAmerican", "White", "Other", "Missing")
ICD9_CUTOVER = dt.date(2015, 10, 1)
TRUTH_MAX_LAG = 5


def synthetic_code(i: int) -> str:
    letters = string.ascii_uppercase
    if not 0 <= i < 26 * 100:
        raise ValueError("synthetic code index out of range")
    return f"{letters[i // 100]}{i % 100:02d}"


def synthetic_icd9(i: int) -> str:
    return f"{100 + i // 10}.{i % 10}"


@dataclass
class SynthScenario:
    n_codes: int = 200
    years: tuple[int, int] = (2011, 2023)
    season_months: tuple[int, ...] = (5, 6, 7, 8, 9)
    n_tracts: int = 12
    baseline_rates: list[float] | None = None
    rate_median: float = 0.08
    rate_sigma: float = 1.0
    # code index -> {lag: log-rate slope per degree C above the warm-season median}
    effects: dict[int, dict[int, float]] = field(default_factory=dict)
    overdispersion: float = 0.0
    year_trend: float = 0.02
    month_sd: float = 0.05
    dow_effects: tuple[float, ...] = (0.08, 0.03, 0.0, 0.0, 0.02, -0.05, -0.08)
    holiday_effect: float = 0.10
    clim_mean: float = 20.0
    clim_amplitude: float = 9.0
    anomaly_sd: float = 4.0
    anomaly_ar: float = 0.7
    year_sd: float = 0.8
    tract_offset_sd: float = 0.7
    tract_noise_sd: float = 0.4
    missing_tract_frac: float = 0.03
    missing_age_frac: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_codes < 1 or self.n_tracts < 1:
            raise ValueError("n_codes and n_tracts must be positive")
        if self.rate_median <= 0 or self.years[0] > self.years[1]:
            raise ValueError("rate_median must be positive and years ordered")
        if self.baseline_rates is not None:
            if len(self.baseline_rates) != self.n_codes or min(self.baseline_rates) <= 0:
                raise ValueError("baseline_rates needs one positive rate per code")
        self.effects = {int(k): {int(l): float(s) for l, s in v.items()} for k, v in self.effects.items()}
        for k, v in self.effects.items():
            if not 0 <= k < self.n_codes:
                raise ValueError(f"effect on unknown code index {k}")
            if any(not np.isfinite(s) for s in v.values()) or any(l < 0 for l in v):
                raise ValueError("effect slopes must be finite with lags >= 0")
        if self.overdispersion < 0:
            raise ValueError("overdispersion must be >= 0")


@dataclass
class SynthData:
    scenario: SynthScenario
    visits: pd.DataFrame
    exposure: ExposureSeries
    holidays: frozenset
    truth: pd.DataFrame
    anchors: PercentileAnchors
    gem: pd.DataFrame
    codes: list[str]

    @property
    def injected_codes(self) -> list[str]:
        return [self.codes[i] for i in sorted(self.scenario.effects)]

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / f"{name}.csv" for name in ("visits", "temperature", "holidays", "truth", "gem")}
        v = self.visits
        export = pd.DataFrame({
            "visit_id": v["visit_id"], "patient_id": v["patient_id"],
            "date": v["date"].dt.strftime("%Y-%m-%d"), "tract_id": v["tract_id"].fillna(""),
            "age_years": v["age_years"].map(lambda a: "" if np.isnan(a) else str(int(a))),
            "sex": v["sex"], "race_ethnicity": v["race_ethnicity"], "region": v["region"],
            "code": v["raw_code"], "code_system": v["code_system"],
        })
        export.to_csv(paths["visits"], index=False)
        temp = self.exposure.to_long()
        temp["date"] = temp["date"].dt.strftime("%Y-%m-%d")
        temp.to_csv(paths["temperature"], index=False, float_format="%.6g")
        pd.DataFrame({"date": sorted(d.isoformat() for d in self.holidays)}).to_csv(paths["holidays"], index=False)
        self.truth.to_csv(paths["truth"], index=False, float_format="%.12g")
        self.gem.to_csv(paths["gem"], index=False)
        return paths


def true_log_or(slopes: dict[int, float], p50: float, p95: float, lags) -> float:
    """Sum over ``lags`` of f(p95, l) - f(p50, l) for the linear generative f."""
    f = lambda t, l: slopes.get(l, 0.0) * (t - p50)
    return float(sum(f(p95, l) - f(p50, l) for l in lags))


def _holidays(years) -> frozenset:
    cal = USFederalHolidayCalendar()
    days = cal.holidays(f"{years[0]}-01-01", f"{years[1]}-12-31")
    return frozenset(d.date() for d in days)


def _temperatures(sc: SynthScenario, rng) -> ExposureSeries:
    lo, hi = sc.years
    days = pd.date_range(f"{lo}-04-01", f"{hi}-10-31", freq="D")
    days = days[days.month.isin(range(4, 11))]
    doy = days.dayofyear.to_numpy()
    clim = sc.clim_mean + sc.clim_amplitude * np.cos(2 * np.pi * (doy - 200) / 365.25)
    year_idx = days.year.to_numpy() - lo
    year_off = rng.normal(0.0, sc.year_sd, hi - lo + 1)[year_idx]
    anomaly = np.empty(len(days))
    innov = rng.normal(0.0, sc.anomaly_sd * np.sqrt(1 - sc.anomaly_ar**2), len(days))
    for i in range(len(days)):
        new_year = i == 0 or year_idx[i] != year_idx[i - 1]
        anomaly[i] = rng.normal(0.0, sc.anomaly_sd) if new_year else sc.anomaly_ar * anomaly[i - 1] + innov[i]
    city = clim + year_off + anomaly
    offsets = rng.normal(0.0, sc.tract_offset_sd, sc.n_tracts)
    noise = rng.normal(0.0, sc.tract_noise_sd, (len(days), sc.n_tracts))
    tract = np.round(city[:, None] + offsets[None, :] + noise, 2)
    cols = [f"T{r:03d}" for r in range(sc.n_tracts)]
    return ExposureSeries(pd.DataFrame(tract, index=days, columns=cols))


def simulate(scenario: SynthScenario) -> SynthData:
    sc = scenario
    rng = np.random.default_rng(sc.seed)
    exposure = _temperatures(sc, rng)
    anchors = percentile_anchors(exposure.citywide, sc.season_months, sc.years)
    holidays = _holidays(sc.years)

    all_days = exposure.tract.index
    season = in_season(all_days, sc.season_months, sc.years)
    day_pos = np.flatnonzero(season)
    days = all_days[season]
    temps = exposure.tract.to_numpy()

    cal = sc.year_trend * (days.year - sc.years[0]).to_numpy(dtype=float)
    month_eff = rng.normal(0.0, sc.month_sd, 13)
    cal = cal + month_eff[days.month.to_numpy()]
    cal = cal + np.asarray(sc.dow_effects)[days.dayofweek.to_numpy()]
    cal = cal + sc.holiday_effect * days.isin(pd.DatetimeIndex(sorted(holidays))).astype(float)

    if sc.baseline_rates is not None:
        rates = np.asarray(sc.baseline_rates, dtype=float)
    else:
        rates = sc.rate_median * np.exp(rng.normal(0.0, sc.rate_sigma, sc.n_codes))
    shares = rng.dirichlet(np.full(sc.n_tracts, 5.0))
    base_log = np.log(rates)[:, None] + cal[None, :]

    counts = np.empty((sc.n_codes, len(days), sc.n_tracts), dtype=np.int64)
    for c in range(sc.n_codes):
        lam = np.exp(base_log[c])[:, None] * shares[None, :]
        slopes = sc.effects.get(c)
        if slopes:
            eff = np.zeros((len(days), sc.n_tracts))
            for lag, slope in slopes.items():
                eff += slope * (temps[day_pos - lag] - anchors.p50)
            lam = lam * np.exp(eff)
        if sc.overdispersion > 0:
            k = 1.0 / sc.overdispersion
            lam = lam * rng.gamma(k, 1.0 / k, len(days))[:, None]
        counts[c] = rng.poisson(lam)

    code_idx, d_idx, t_idx = np.nonzero(counts)
    reps = counts[code_idx, d_idx, t_idx]
    code_idx = np.repeat(code_idx, reps)
    d_idx = np.repeat(d_idx, reps)
    t_idx = np.repeat(t_idx, reps)
    # visits ordered by date, then tract, then code
    order = np.lexsort((code_idx, t_idx, d_idx))
    code_idx, d_idx, t_idx = code_idx[order], d_idx[order], t_idx[order]
    n = code_idx.size

    codes = [synthetic_code(i) for i in range(sc.n_codes)]
    code_arr = np.array(codes, dtype=object)[code_idx]
    visit_dates = days[d_idx]
    tract_ids = np.array([f"T{r:03d}" for r in range(sc.n_tracts)], dtype=object)[t_idx]
    region = np.array([REGIONS[r % len(REGIONS)] for r in range(sc.n_tracts)], dtype=object)[t_idx]
    lost = rng.random(n) < sc.missing_tract_frac
    tract_ids[lost] = None
    region[lost] = "Missing"
    ages = np.clip(np.round(rng.normal(52.0, 19.4, n)), 18, 100)
    ages[rng.random(n) < sc.missing_age_frac] = np.nan
    sex = np.array(SEXES, dtype=object)[rng.choice(3, n, p=[0.578, 0.421, 0.001])]
    race = np.array(RACES, dtype=object)[rng.choice(5, n, p=[0.04, 0.45, 0.36, 0.13, 0.02])]
    n_patients = max(1, n * 2 // 5)
    patients = rng.integers(0, n_patients, n)

    is_icd9 = np.asarray(visit_dates < pd.Timestamp(ICD9_CUTOVER))
    icd9 = np.array([synthetic_icd9(i) for i in range(sc.n_codes)], dtype=object)
    icd10 = np.array([f"{c}.9" for c in codes], dtype=object)
    raw = np.where(is_icd9, icd9[code_idx], icd10[code_idx])

    visits = pd.DataFrame({
        "visit_id": [f"V{i:07d}" for i in range(n)],
        "patient_id": [f"P{p:07d}" for p in patients],
        "date": visit_dates,
        "tract_id": tract_ids,
        "age_years": ages,
        "sex": sex,
        "race_ethnicity": race,
        "region": region,
        "code": code_arr,
        "raw_code": raw,
        "code_system": np.where(is_icd9, "ICD9", "ICD10"),
    })

    truth_rows = []
    contrasts = [(f"lag{l}", [l]) for l in range(TRUTH_MAX_LAG + 1)]
    contrasts += [(f"cum0-{h}", list(range(h + 1))) for h in range(1, TRUTH_MAX_LAG + 1)]
    for i, code in enumerate(codes):
        slopes = sc.effects.get(i, {})
        for name, lags in contrasts:
            lor = true_log_or(slopes, anchors.p50, anchors.p95, lags)
            truth_rows.append((code, bool(slopes), name, lor, float(np.exp(lor))))
    truth = pd.DataFrame(truth_rows, columns=["code", "injected", "contrast", "log_or", "odds_ratio"])
    gem = pd.DataFrame({"icd9": icd9, "icd10": icd10})
    return SynthData(sc, visits, exposure, holidays, truth, anchors, gem, codes)


def generate_synthetic(scenario: SynthScenario, out_dir) -> dict[str, Path]:
    """Simulate and write visits, temperature, holidays, truth and GEM files."""
    return simulate(scenario).write(out_dir)


def scenario_to_dict(sc: SynthScenario) -> dict:
    d = asdict(sc)
    d["effects"] = {str(k): {str(l): s for l, s in v.items()} for k, v in sc.effects.items()}
    return d
