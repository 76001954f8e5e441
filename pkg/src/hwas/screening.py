"""Stage 1: per-code quasi-Poisson screening of daily counts against citywide Tmax."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.exceptions import ConvergenceWarning

from .config import RunConfig
from .errors import HWASError
from .exposure import PercentileAnchors
from .glmfit import DesignMatrix, fit_quasipoisson, irr_and_pvalue
from .ingest import visit_frame

log = logging.getLogger(__name__)

WEEKDAYS = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]


def season_calendar(years, season_months) -> pd.DatetimeIndex:
    lo, hi = years
    days = pd.date_range(f"{lo}-01-01", f"{hi}-12-31", freq="D", name="date")
    return days[days.month.isin(sorted(season_months))]


def daily_counts(visits, code: str, calendar: pd.DatetimeIndex) -> np.ndarray:
    """Visits carrying ``code`` on each calendar day, zero-filled."""
    frame = visit_frame(visits)
    dates = frame.loc[frame["code"] == code, "date"]
    counts = dates.value_counts()
    return counts.reindex(calendar, fill_value=0).to_numpy(dtype=np.int64)


def count_matrix(frame: pd.DataFrame, calendar: pd.DatetimeIndex) -> tuple[list[str], np.ndarray]:
    """Daily counts for every code with at least one visit on the calendar.

    Returns sorted codes and an int array of shape ``(n_codes, n_days)``.
    """
    sub = frame[frame["date"].isin(calendar)]
    if sub.empty:
        return [], np.zeros((0, len(calendar)), dtype=np.int64)
    codes = sorted(sub["code"].unique())
    code_idx = pd.Index(codes).get_indexer(sub["code"])
    day_idx = calendar.get_indexer(sub["date"])
    mat = np.zeros((len(codes), len(calendar)), dtype=np.int64)
    np.add.at(mat, (code_idx, day_idx), 1)
    return codes, mat


def build_design(calendar: pd.DatetimeIndex, tmax, holidays=frozenset(), year_coding="factor") -> DesignMatrix:
    """Intercept, Tmax, year/month/weekday factors (first level as reference) and a holiday flag."""
    calendar = pd.DatetimeIndex(calendar)
    cols = {"intercept": np.ones(len(calendar)), "tmax": np.asarray(tmax, dtype=float)}
    if year_coding == "linear":
        cols["year"] = (calendar.year - calendar.year.min()).to_numpy(dtype=float)
    else:
        for y in sorted(set(calendar.year))[1:]:
            cols[f"year_{y}"] = (calendar.year == y).astype(float)
    for m in sorted(set(calendar.month))[1:]:
        cols[f"month_{m}"] = (calendar.month == m).astype(float)
    for d in range(1, 7):
        cols[f"dow_{WEEKDAYS[d]}"] = (calendar.dayofweek == d).astype(float)
    hol = pd.DatetimeIndex(sorted(pd.Timestamp(h) for h in holidays))
    cols["holiday"] = calendar.isin(hol).astype(float)
    return DesignMatrix.prepare(pd.DataFrame(cols))


def bh_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum(np.minimum.accumulate(ranked[::-1])[::-1], 1.0)
    out = np.empty(m)
    out[order] = adj
    return out


@dataclass
class ScreeningRow:
    code: str
    irr: float
    ci_low: float
    ci_high: float
    raw_p: float
    adj_p: float
    total_count: int
    rel_freq_above_p70: float
    crit_slope: bool
    crit_freq: bool
    crit_count: bool
    retained: bool
    beta: float = float("nan")
    se: float = float("nan")
    dispersion: float = float("nan")
    converged: bool = False
    error: str = ""


@dataclass
class ScreeningResult:
    rows: list[ScreeningRow]
    family_size: int
    n_days: int
    n_days_without_temperature: int
    anchors: PercentileAnchors | None = None
    dropped_design_columns: list[str] = field(default_factory=list)

    @property
    def retained_codes(self) -> list[str]:
        return sorted(r.code for r in self.rows if r.retained)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows])

    def manhattan_frame(self) -> pd.DataFrame:
        frame = self.to_frame()
        with np.errstate(divide="ignore"):
            score = -np.log10(frame["adj_p"].astype(float))
        return pd.DataFrame({
            "code": frame["code"],
            "chapter": frame["code"].str[0],
            "neg_log10_adj_p": score,
            "retained": frame["retained"],
        }).sort_values(["chapter", "code"], kind="stable").reset_index(drop=True)


def _fit_codes(design, ys, tol, max_iter):
    out = []
    for y in ys:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                fit = fit_quasipoisson(y, design, tol=tol, max_iter=max_iter)
            est = irr_and_pvalue(fit, "tmax")
            i = fit.index("tmax")
            out.append((est, float(fit.beta[i]), float(np.sqrt(fit.cov[i, i])), fit.dispersion_phi, fit.converged, ""))
        except (HWASError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            out.append((None, np.nan, np.nan, np.nan, False, f"{type(exc).__name__}: {exc}"))
    return out


def screen(visits, citywide: pd.Series, anchors: PercentileAnchors, config: RunConfig | None = None,
           holidays=frozenset(), workers: int | None = None) -> ScreeningResult:
    """Fit each code's daily counts on citywide Tmax plus calendar terms and apply
    the retention criteria: positive slope with BH-adjusted p below alpha, at
    least ``min_rel_freq`` of visits on days above the screening percentile,
    and at least ``min_count`` in-season visits.
    """
    config = config or RunConfig()
    workers = config.workers if workers is None else workers
    frame = visit_frame(visits)
    calendar = season_calendar(config.years, config.season_months)
    tmax_all = citywide.reindex(calendar)
    has_temp = tmax_all.notna().to_numpy()
    fit_days = calendar[has_temp]
    design = build_design(fit_days, tmax_all.to_numpy()[has_temp], holidays, config.year_coding)

    codes, counts = count_matrix(frame, calendar)
    totals = counts.sum(axis=1)
    hot = (tmax_all > anchors.at(config.screen_percentile)).to_numpy() & has_temp
    rel_freq = counts[:, hot].sum(axis=1) / np.maximum(totals, 1)
    ys = counts[:, has_temp]

    if workers > 1 and len(codes) > 1:
        chunks = np.array_split(np.arange(len(codes)), workers * 4)
        parts = Parallel(n_jobs=workers)(
            delayed(_fit_codes)(design, ys[idx], config.glm_tol, config.glm_max_iter) for idx in chunks if idx.size
        )
        fits = [f for part in parts for f in part]
    else:
        fits = _fit_codes(design, ys, config.glm_tol, config.glm_max_iter)

    raw_p = np.array([f[0].p_value if f[0] is not None else np.nan for f in fits])
    ok = np.isfinite(raw_p)
    adj_p = np.full(len(codes), np.nan)
    adj_p[ok] = bh_adjust(raw_p[ok])

    crit = config.criteria
    rows = []
    for i, code in enumerate(codes):
        est, beta, se, phi, converged, error = fits[i]
        if error:
            log.info("screening fit failed for %s: %s", code, error)
        c_slope = bool(ok[i] and beta > 0 and adj_p[i] < config.alpha)
        c_freq = bool(rel_freq[i] >= config.min_rel_freq)
        c_count = bool(totals[i] >= config.min_count)
        retained = ok[i] and all(
            flag for name, flag in (("slope", c_slope), ("freq", c_freq), ("count", c_count)) if crit.get(name, True)
        )
        rows.append(ScreeningRow(
            code=code,
            irr=est.point if est else np.nan, ci_low=est.ci_low if est else np.nan,
            ci_high=est.ci_high if est else np.nan, raw_p=raw_p[i], adj_p=adj_p[i],
            total_count=int(totals[i]), rel_freq_above_p70=float(rel_freq[i]),
            crit_slope=c_slope, crit_freq=c_freq, crit_count=c_count, retained=bool(retained),
            beta=beta, se=se, dispersion=phi, converged=converged, error=error,
        ))
    rows.sort(key=lambda r: (np.isnan(r.adj_p), r.adj_p if not np.isnan(r.adj_p) else 0.0, r.code))
    return ScreeningResult(rows, int(ok.sum()), int(has_temp.sum()), int((~has_temp).sum()), anchors,
                           list(design.pruned))
