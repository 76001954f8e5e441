"""Stage 2: time-stratified case-crossover DLNM fits per diagnosis code.

Each visit is a case day matched to referent days sharing its weekday (same
calendar month and year, or the same fixed 28-day tile). Visits with the same
exposure location and date produce identical strata, so they are collapsed
into one stratum with a frequency weight; the likelihood is unchanged.
"""

from __future__ import annotations

import datetime as dt
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .clogitfit import ClogitFit, StabilityFlags, Stratum, clogit_newton, stability_check
from .config import RunConfig
from .dlnm import CrossBasisSpec, EffectEstimate, crossbasis_rows, default_contrasts, make_crossbasis_spec, predict_or
from .errors import HWASError, InputValidationError, NoControls, NoInformativeStrata
from .exposure import ExposureSeries, PercentileAnchors
from .ingest import AGE_GROUPS, age_group, visit_frame

log = logging.getLogger(__name__)

CITY = "__citywide__"

STRATUM_LEVELS = {
    "sex": ("Female", "Male", "Other"),
    "age_group": AGE_GROUPS,
    "race_ethnicity": ("Asian", "BlackOrAfricanAmerican", "White", "Other"),
    "region": ("Central", "North", "Northwest", "South", "Southwest", "FarSouth", "West"),
}


@dataclass(frozen=True)
class ReferentScheme:
    kind: str = "month"
    season_start_month: int = 5

    def __post_init__(self):
        if self.kind not in ("month", "fixed28"):
            raise ValueError(f"unknown referent scheme {self.kind!r}")

    @property
    def controls_per_case(self) -> str:
        return "all-available" if self.kind == "month" else "3"


@dataclass(frozen=True)
class AnalysisVariant:
    name: str
    ref_percentile: float = 0.50
    target_percentile: float = 0.95
    exposure_degree: int = 2
    max_lag: int = 3
    lag_knots: int = 1
    referent: str = "month"

    @property
    def scheme(self) -> ReferentScheme:
        return ReferentScheme(self.referent)


VARIANTS = {
    "primary": AnalysisVariant("primary"),
    "sens_i": AnalysisVariant("sens_i", ref_percentile=0.70),
    "sens_ii": AnalysisVariant("sens_ii", referent="fixed28"),
    "sens_iii": AnalysisVariant("sens_iii", exposure_degree=3),
    "sens_iv": AnalysisVariant("sens_iv", max_lag=5, lag_knots=2),
}


def variant_from_config(config: RunConfig) -> AnalysisVariant:
    """Name the variant described by the config's stage-2 settings."""
    probe = AnalysisVariant("", config.ref_percentile, config.target_percentile, config.exposure_degree,
                            config.max_lag, config.lag_knots, config.referent)
    for variant in VARIANTS.values():
        if probe == AnalysisVariant("", *[getattr(variant, f) for f in (
                "ref_percentile", "target_percentile", "exposure_degree", "max_lag", "lag_knots", "referent")]):
            return variant
    raise InputValidationError(
        "stage-2 settings match none of the variants " + ", ".join(VARIANTS)
    )


def _fixed_epoch(year: int, start_month: int) -> dt.date:
    first = dt.date(year, start_month, 1)
    return first + dt.timedelta(days=(7 - first.weekday()) % 7)


@lru_cache(maxsize=65536)
def select_referents(case_date: dt.date, scheme: ReferentScheme = ReferentScheme()) -> tuple[dt.date, ...]:
    """Control dates for a case date, excluding the case date itself."""
    if isinstance(case_date, pd.Timestamp):
        case_date = case_date.date()
    if scheme.kind == "month":
        first = case_date - dt.timedelta(days=7 * ((case_date.day - 1) // 7))
        members = []
        d = first
        while d.month == case_date.month:
            members.append(d)
            d += dt.timedelta(days=7)
    else:
        epoch = _fixed_epoch(case_date.year, scheme.season_start_month)
        tile = (case_date - epoch).days // 28
        start = epoch + dt.timedelta(days=28 * tile)
        offset = (case_date - start).days % 7
        members = [start + dt.timedelta(days=offset + 7 * k) for k in range(4)]
    controls = tuple(d for d in members if d != case_date)
    if not controls:
        raise NoControls(f"no referent days for {case_date}")
    return controls


class ExposureGrid:
    """Dense (date x location) Tmax array on a contiguous daily axis; the last
    location is the citywide series."""

    def __init__(self, series: ExposureSeries):
        idx = series.tract.index.union(series.citywide.index)
        self.dates = pd.date_range(idx.min(), idx.max(), freq="D")
        tract = series.tract.reindex(self.dates)
        city = series.citywide.reindex(self.dates)
        self.locations = [str(c) for c in tract.columns] + [CITY]
        self._loc = {loc: i for i, loc in enumerate(self.locations)}
        self.values = np.column_stack([tract.to_numpy(dtype=float), city.to_numpy(dtype=float)])
        self.origin = self.dates[0]

    def date_positions(self, dates) -> np.ndarray:
        dates = pd.DatetimeIndex(dates)
        return ((dates - self.origin).days).to_numpy()

    def location_index(self, loc: str) -> int:
        return self._loc.get(loc, -1)

    def lookup(self, positions, loc_idx) -> np.ndarray:
        positions = np.asarray(positions)
        valid = (positions >= 0) & (positions < len(self.dates))
        out = np.full(positions.shape, np.nan)
        out[valid] = self.values[positions[valid], np.broadcast_to(loc_idx, positions.shape)[valid]]
        return out


def as_grid(exposure) -> ExposureGrid:
    return exposure if isinstance(exposure, ExposureGrid) else ExposureGrid(exposure)


@dataclass
class LaggedStrata:
    """Flat member rows for one analysis sample; ``lagged[:, l]`` is Tmax l days before."""

    lagged: np.ndarray
    holiday: np.ndarray
    is_case: np.ndarray
    group: np.ndarray
    weight: np.ndarray
    member_date: np.ndarray
    location: np.ndarray
    n_visits: int
    dropped: Counter = field(default_factory=Counter)

    @property
    def n_strata(self) -> int:
        return int(self.group.max()) + 1 if self.group.size else 0


@dataclass
class StrataArrays:
    X: np.ndarray
    is_case: np.ndarray
    group: np.ndarray
    weight: np.ndarray
    column_names: list[str]
    lagged: LaggedStrata

    def to_strata(self, expand: bool = True) -> list[Stratum]:
        """Stratum objects; with ``expand`` a stratum of weight k becomes k strata (one per visit)."""
        out = []
        for g in np.unique(self.group):
            m = self.group == g
            w = float(self.weight[m][0])
            reps = int(round(w)) if expand else 1
            for _ in range(reps):
                out.append(Stratum(self.X[m], self.is_case[m], stratum_id=int(g), weight=1.0 if expand else w))
        return out


def _locations(frame: pd.DataFrame, grid: ExposureGrid, config: RunConfig, dropped: Counter) -> np.ndarray:
    city = grid.location_index(CITY)
    tracts = frame["tract_id"]
    loc = np.array([grid.location_index(str(t)) if isinstance(t, str) and t else -2 for t in tracts])
    missing_tract = loc == -2
    if config.stage2_missing_tract == "citywide":
        loc[missing_tract] = city
    else:
        dropped["missing_tract"] += int(missing_tract.sum())
    unknown = loc == -1
    if config.tract_fallback_citywide:
        loc[unknown] = city
    else:
        dropped["missing_exposure"] += int(unknown.sum())
    return loc


def assemble_lagged(visits, exposure, scheme: ReferentScheme, max_lag: int, holidays=frozenset(),
                    config: RunConfig | None = None) -> LaggedStrata:
    """Case and referent rows with their lagged exposure histories."""
    config = config or RunConfig()
    frame = visit_frame(visits) if not isinstance(visits, pd.DataFrame) else visits
    grid = as_grid(exposure)
    dropped: Counter = Counter()
    # one stratum per visit: a visit with several codes appears once per code subset
    frame = frame.drop_duplicates("visit_id") if "visit_id" in frame else frame
    loc = _locations(frame, grid, config, dropped)
    keep = loc >= 0
    keyed = pd.DataFrame({"loc": loc[keep], "date": pd.DatetimeIndex(frame["date"].to_numpy()[keep])})
    agg = keyed.groupby(["date", "loc"], sort=True).size()
    empty = LaggedStrata(np.zeros((0, max_lag + 1)), np.zeros(0), np.zeros(0, bool), np.zeros(0, int),
                         np.zeros(0), np.zeros(0, "datetime64[ns]"), np.zeros(0, int), 0, dropped)
    if agg.empty:
        return empty

    s_dates = pd.DatetimeIndex(agg.index.get_level_values("date"))
    s_loc = agg.index.get_level_values("loc").to_numpy()
    s_weight = agg.to_numpy(dtype=float)

    # member table per unique case date: case first, then controls
    uniq = s_dates.unique()
    members = []
    for d in uniq:
        try:
            ctrl = select_referents(d.date(), scheme)
        except NoControls:
            ctrl = ()
        members.append([d.date(), *ctrl])
    width = max(len(m) for m in members)
    table = np.full((len(uniq), width), -1, dtype=np.int64)
    origin = grid.origin.date()
    for i, mem in enumerate(members):
        table[i, : len(mem)] = [(m - origin).days for m in mem]
    date_pos = uniq.get_indexer(s_dates)
    rows = table[date_pos]
    valid = rows != -1
    no_ctrl = valid.sum(axis=1) < 2
    if no_ctrl.any():
        dropped["no_controls"] += int(s_weight[no_ctrl].sum())

    sizes = valid.sum(axis=1)
    stratum = np.repeat(np.arange(rows.shape[0]), sizes)
    pos = rows[valid]
    loc_rows = np.repeat(s_loc, sizes)
    is_case = np.zeros(pos.size, dtype=bool)
    is_case[np.r_[0, np.cumsum(sizes)[:-1]]] = True

    lagged = np.column_stack([grid.lookup(pos - l, loc_rows) for l in range(max_lag + 1)])
    bad_rows = ~np.isfinite(lagged).all(axis=1)
    bad = np.zeros(rows.shape[0], dtype=bool)
    np.logical_or.at(bad, stratum, bad_rows)
    bad &= ~no_ctrl
    if bad.any():
        dropped["missing_exposure"] += int(s_weight[bad].sum())
    ok = ~(bad | no_ctrl)
    keep_rows = ok[stratum]
    new_id = np.cumsum(ok) - 1

    member_dates = np.asarray(grid.origin.to_datetime64() + pos.astype("timedelta64[D]"))
    hol = pd.DatetimeIndex(sorted(pd.Timestamp(h) for h in holidays))
    holiday = pd.DatetimeIndex(member_dates).isin(hol).astype(float)
    return LaggedStrata(
        lagged=lagged[keep_rows], holiday=holiday[keep_rows], is_case=is_case[keep_rows],
        group=new_id[stratum][keep_rows], weight=s_weight[stratum][keep_rows],
        member_date=member_dates[keep_rows], location=loc_rows[keep_rows],
        n_visits=int(s_weight[ok].sum()), dropped=dropped,
    )


def build_strata(visits, exposure, scheme: ReferentScheme, spec: CrossBasisSpec, holidays=frozenset(),
                 config: RunConfig | None = None) -> StrataArrays:
    """Design rows (cross-basis then holiday indicator) for every stratum member."""
    lagged = assemble_lagged(visits, exposure, scheme, spec.max_lag, holidays, config)
    return _design_from_lagged(lagged, spec)


def _design_from_lagged(lagged: LaggedStrata, spec: CrossBasisSpec) -> StrataArrays:
    cb = crossbasis_rows(spec, lagged.lagged)
    X = np.column_stack([cb, lagged.holiday])
    return StrataArrays(X, lagged.is_case, lagged.group, lagged.weight, spec.column_names() + ["holiday"], lagged)


@dataclass
class CodeResult:
    code: str
    variant: str
    estimates: list[EffectEstimate] = field(default_factory=list)
    flags: StabilityFlags | None = None
    n_strata: float = 0.0
    n_dropped_strata: float = 0.0
    significant: bool = False
    error: str = ""
    spec: CrossBasisSpec | None = None
    fit: ClogitFit | None = None

    @property
    def stable(self) -> bool:
        return self.flags is not None and self.flags.is_stable

    def estimate(self, name: str) -> EffectEstimate:
        for e in self.estimates:
            if e.contrast_name == name:
                return e
        raise KeyError(name)


def fit_code(code: str, visits, exposure, anchors: PercentileAnchors, variant: AnalysisVariant,
             holidays=frozenset(), config: RunConfig | None = None, keep_fit: bool = False) -> CodeResult:
    """Case-crossover DLNM for one code's visits; failures land in ``error``."""
    config = config or RunConfig()
    result = CodeResult(code, variant.name)
    try:
        lagged = assemble_lagged(visits, exposure, variant.scheme, variant.max_lag, holidays, config)
        result.n_dropped_strata = float(sum(lagged.dropped.values()))
        if lagged.n_strata == 0:
            raise NoInformativeStrata("no usable strata")
        knot = anchors.at(config.exposure_knot_percentile)
        target = anchors.at(variant.target_percentile)
        ref = anchors.at(variant.ref_percentile)
        pool = np.r_[lagged.lagged.ravel(), knot, target, ref]
        spec = make_crossbasis_spec([knot], (pool.min(), pool.max()), variant.max_lag,
                                    variant.exposure_degree, variant.lag_knots)
        design = _design_from_lagged(lagged, spec)
        fit = clogit_newton(design.X, design.is_case, design.group, design.weight,
                            tol=config.clogit_tol, max_iter=config.clogit_max_iter)
        ncb = spec.n_columns
        fit.crossbasis_mask = np.r_[np.ones(ncb, bool), False]
        fit.stability = stability_check(fit)
        result.flags = fit.stability
        result.n_strata = fit.n_strata
        result.n_dropped_strata += fit.n_dropped_strata
        result.estimates = predict_or(spec, fit.beta[:ncb], fit.cov[:ncb, :ncb], target, ref,
                                      default_contrasts(variant.max_lag))
        lag0 = result.estimates[0]
        result.significant = bool(np.isfinite(lag0.ci_low) and lag0.ci_low > 1.0)
        result.spec = spec
        if keep_fit:
            result.fit = fit
    except (HWASError, ValueError, np.linalg.LinAlgError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        log.info("stage 2 %s/%s failed: %s", code, variant.name, result.error)
    return result


def _code_frames(frame: pd.DataFrame, codes):
    groups = dict(tuple(frame[frame["code"].isin(codes)].groupby("code", sort=True)))
    empty = frame.iloc[0:0]
    return [(c, groups.get(c, empty)) for c in codes]


def run_stage2(codes, visits, exposure, anchors: PercentileAnchors, variant: AnalysisVariant | str = "primary",
               holidays=frozenset(), config: RunConfig | None = None, workers: int | None = None) -> dict[str, CodeResult]:
    """Fit every code under one variant; results keyed and ordered by code."""
    config = config or RunConfig()
    variant = VARIANTS[variant] if isinstance(variant, str) else variant
    workers = config.workers if workers is None else workers
    frame = visit_frame(visits)
    grid = as_grid(exposure)
    jobs = _code_frames(frame, sorted(codes))
    if workers > 1 and len(jobs) > 1:
        results = Parallel(n_jobs=workers)(
            delayed(fit_code)(c, sub, grid, anchors, variant, holidays, config) for c, sub in jobs
        )
    else:
        results = [fit_code(c, sub, grid, anchors, variant, holidays, config) for c, sub in jobs]
    return {r.code: r for r in results}


def significant_codes(results: dict[str, CodeResult]) -> list[str]:
    return sorted(code for code, r in results.items() if not r.error and r.significant)


def stratum_labels(frame: pd.DataFrame, strat_var: str) -> pd.Series:
    if strat_var == "age_group":
        return frame["age_years"].map(age_group)
    if strat_var not in STRATUM_LEVELS:
        raise ValueError(f"unknown stratification variable {strat_var!r}")
    return frame[strat_var]


@dataclass
class StratifiedResult:
    strat_var: str
    stratum: str
    result: CodeResult

    @property
    def stability_reason(self) -> str:
        if self.result.error:
            return "error"
        return self.result.flags.reason if self.result.flags else ""

    @property
    def reportable(self) -> bool:
        """Unstable diagnosis-strata are left out of result tables."""
        return not self.result.error and self.result.stable


def run_stratified(codes, visits, exposure, anchors: PercentileAnchors, strat_var: str,
                   variant: AnalysisVariant | str = "primary", holidays=frozenset(),
                   config: RunConfig | None = None, workers: int | None = None,
                   codes_by_stratum: dict | None = None) -> list[StratifiedResult]:
    """Refit each code within each level of ``strat_var``; Missing labels are excluded.

    ``codes_by_stratum`` overrides the pooled code list per level.
    """
    config = config or RunConfig()
    variant = VARIANTS[variant] if isinstance(variant, str) else variant
    frame = visit_frame(visits)
    labels = stratum_labels(frame, strat_var)
    grid = as_grid(exposure)
    out = []
    for level in STRATUM_LEVELS[strat_var]:
        subset = frame[(labels == level).to_numpy()]
        level_codes = codes if codes_by_stratum is None else codes_by_stratum.get(level, [])
        res = run_stage2(level_codes, subset, grid, anchors, variant, holidays, config, workers)
        for code in sorted(res):
            r = res[code]
            if r.error or not r.stable:
                r.significant = False
            out.append(StratifiedResult(strat_var, level, r))
    return out


@dataclass
class SensitivityRow:
    variant: str
    dropped_codes: list[str]
    new_codes: list[str]


def compare_variants(results_by_variant: dict[str, dict[str, CodeResult]], baseline: str = "primary") -> list[SensitivityRow]:
    """Codes dropped from and newly detected relative to the baseline variant."""
    base = set(significant_codes(results_by_variant[baseline]))
    rows = []
    for name, results in results_by_variant.items():
        if name == baseline:
            continue
        sig = set(significant_codes(results))
        rows.append(SensitivityRow(name, sorted(base - sig), sorted(sig - base)))
    return rows


def run_sensitivity(codes, visits, exposure, anchors: PercentileAnchors, variants=tuple(VARIANTS),
                    holidays=frozenset(), config: RunConfig | None = None, workers: int | None = None,
                    primary: dict[str, CodeResult] | None = None):
    """Run every variant on ``codes`` and compare each to the primary.

    Returns ``(results_by_variant, comparison_rows)``.
    """
    grid = as_grid(exposure)
    frame = visit_frame(visits)
    results = {}
    for name in variants:
        if name == "primary" and primary is not None:
            results[name] = primary
            continue
        results[name] = run_stage2(codes, frame, grid, anchors, name, holidays, config, workers)
    if "primary" not in results:
        results = {"primary": run_stage2(codes, frame, grid, anchors, "primary", holidays, config, workers)} | results
    return results, compare_variants(results)
