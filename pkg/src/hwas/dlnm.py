"""Exposure-by-lag cross-basis and centered odds-ratio contrasts."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionMismatch
from .splinebasis import BasisKind, BasisSpec, bspline, bspline_eval, log_lag_knots, natural_cubic, natural_cubic_eval

Z95 = 1.96


@dataclass(frozen=True)
class EffectEstimate:
    contrast_name: str
    point: float
    ci_low: float
    ci_high: float
    log_se: float
    p_value: float | None = None

    @property
    def log_point(self) -> float:
        return float(np.log(self.point))


@dataclass(frozen=True)
class CrossBasisSpec:
    """Cross-basis definition.

    The exposure basis is a B-spline whose first column is dropped, so the
    remaining columns carry no constant term (a constant is not identified
    under conditional likelihood). ``lag_basis`` is None only when
    ``max_lag == 0``.
    """

    exposure_basis: BasisSpec
    lag_basis: BasisSpec | None
    max_lag: int

    def __post_init__(self):
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if self.exposure_basis.kind is not BasisKind.BSPLINE:
            raise ValueError("exposure basis must be a B-spline")
        if self.max_lag > 0 and self.lag_basis is None:
            raise ValueError("a lag basis is required when max_lag > 0")

    @property
    def n_exposure(self) -> int:
        return self.exposure_basis.n_columns - 1

    @property
    def n_lag(self) -> int:
        return 1 if self.lag_basis is None else self.lag_basis.n_columns

    @property
    def n_columns(self) -> int:
        return self.n_exposure * self.n_lag

    def column_names(self) -> list[str]:
        return [f"cb.v{j + 1}.l{m + 1}" for j in range(self.n_exposure) for m in range(self.n_lag)]

    def describe(self) -> dict:
        e = self.exposure_basis
        out = {
            "max_lag": self.max_lag,
            "exposure_degree": e.degree,
            "exposure_knots": list(e.internal_knots),
            "exposure_boundary": list(e.boundary),
        }
        if self.lag_basis is not None:
            out["lag_knots"] = list(self.lag_basis.internal_knots)
        return out


def make_crossbasis_spec(exposure_knots, exposure_range, max_lag=3, degree=2, n_lag_knots=1) -> CrossBasisSpec:
    """Build a spec with a B-spline exposure basis and a natural-spline lag basis
    on log-spaced lag knots over ``[0, max_lag]``."""
    lo, hi = (float(v) for v in exposure_range)
    exposure = bspline(degree, sorted(exposure_knots), (lo, hi))
    lag = None
    if max_lag > 0:
        lag = natural_cubic(log_lag_knots(max_lag, n_lag_knots), (0.0, float(max_lag)))
    return CrossBasisSpec(exposure, lag, int(max_lag))


def exposure_matrix(spec: CrossBasisSpec, x) -> np.ndarray:
    return bspline_eval(spec.exposure_basis, x)[:, 1:]


def lag_matrix(spec: CrossBasisSpec) -> np.ndarray:
    if spec.lag_basis is None:
        return np.ones((spec.max_lag + 1, 1))
    return natural_cubic_eval(spec.lag_basis, np.arange(spec.max_lag + 1, dtype=float))


def crossbasis_rows(spec: CrossBasisSpec, lagged) -> np.ndarray:
    """Cross-basis rows for exposure histories of shape ``(n, max_lag + 1)``."""
    lagged = np.asarray(lagged, dtype=float)
    if lagged.ndim != 2 or lagged.shape[1] != spec.max_lag + 1:
        raise DimensionMismatch(f"expected histories of length {spec.max_lag + 1}, got shape {lagged.shape}")
    n, width = lagged.shape
    ex = exposure_matrix(spec, lagged.ravel()).reshape(n, width, spec.n_exposure)
    lag = lag_matrix(spec)
    out = np.zeros((n, spec.n_exposure, spec.n_lag))
    for l in range(width):
        out += ex[:, l, :, None] * lag[l][None, None, :]
    return out.reshape(n, spec.n_columns)


def crossbasis_row(spec: CrossBasisSpec, lagged) -> np.ndarray:
    return crossbasis_rows(spec, np.asarray(lagged, dtype=float)[None, :])[0]


class CrossBasis(TransformerMixin, BaseEstimator):
    """Cross-basis transformer over lagged exposure histories.

    ``fit`` sets the exposure boundaries to the range of the training
    histories (widened by ``extra_points``) and places exposure knots at the
    given temperatures, or at the training median when none are given.
    """

    def __init__(self, max_lag=3, degree=2, exposure_knots=None, n_lag_knots=1, extra_points=()):
        self.max_lag = max_lag
        self.degree = degree
        self.exposure_knots = exposure_knots
        self.n_lag_knots = n_lag_knots
        self.extra_points = extra_points

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != self.max_lag + 1:
            raise DimensionMismatch(f"expected {self.max_lag + 1} lag columns, got {X.shape[1]}")
        knots = self.exposure_knots
        if knots is None:
            knots = [float(np.median(X))]
        pool = np.concatenate([X.ravel(), np.asarray(self.extra_points, dtype=float)])
        self.spec_ = make_crossbasis_spec(knots, (pool.min(), pool.max()), self.max_lag,
                                          self.degree, self.n_lag_knots)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return crossbasis_rows(self.spec_, check_array(X, dtype=float))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spec_")
        return np.array(self.spec_.column_names(), dtype=object)


_CONTRAST = re.compile(r"^(lag(\d+)|cum(\d+)-(\d+))$")


def default_contrasts(max_lag: int) -> list[str]:
    lags = [f"lag{l}" for l in range(max_lag + 1)]
    cums = [f"cum0-{h}" for h in range(1, max_lag + 1)]
    return lags + cums


def _contrast_lags(name: str, max_lag: int) -> range:
    m = _CONTRAST.match(name)
    if not m:
        raise ValueError(f"unknown contrast {name!r}")
    if m.group(2) is not None:
        lo = hi = int(m.group(2))
    else:
        lo, hi = int(m.group(3)), int(m.group(4))
    if not 0 <= lo <= hi <= max_lag:
        raise ValueError(f"contrast {name!r} outside lags 0..{max_lag}")
    return range(lo, hi + 1)


def contrast_vector(spec: CrossBasisSpec, target: float, ref: float, name: str) -> np.ndarray:
    ex = exposure_matrix(spec, [target, ref])
    lag = lag_matrix(spec)
    d = np.zeros(spec.n_columns)
    for l in _contrast_lags(name, spec.max_lag):
        d += np.kron(ex[0], lag[l]) - np.kron(ex[1], lag[l])
    return d


def predict_or(spec: CrossBasisSpec, beta, cov, target_temp: float, ref_temp: float,
               contrasts=None, z: float = Z95) -> list[EffectEstimate]:
    """Odds ratios at ``target_temp`` versus ``ref_temp`` for each contrast.

    Lag contrasts (``lag3``) use one lag; cumulative contrasts (``cum0-3``)
    sum the difference vectors over the lag window before the inner product.
    """
    beta = np.asarray(beta, dtype=float)
    cov = np.asarray(cov, dtype=float)
    k = spec.n_columns
    if beta.shape != (k,) or cov.shape != (k, k):
        raise DimensionMismatch(f"spec has {k} columns; got beta {beta.shape}, cov {cov.shape}")
    contrasts = default_contrasts(spec.max_lag) if contrasts is None else list(contrasts)
    out = []
    for name in contrasts:
        d = contrast_vector(spec, target_temp, ref_temp, name)
        log_or = float(d @ beta)
        se = float(np.sqrt(max(d @ cov @ d, 0.0)))
        with np.errstate(over="ignore"):
            out.append(EffectEstimate(name, float(np.exp(log_or)), float(np.exp(log_or - z * se)),
                                      float(np.exp(log_or + z * se)), se))
    return out


def significance_filter(estimates) -> list[str]:
    """Codes whose lag-0 lower confidence bound exceeds 1 (strict, unrounded).

    ``estimates`` maps code to a list of EffectEstimate.
    """
    kept = []
    for code, rows in estimates.items():
        lag0 = [e for e in rows if e.contrast_name == "lag0"]
        if not lag0:
            raise ValueError(f"no lag0 estimate for {code}")
        if lag0[0].ci_low > 1.0:
            kept.append(code)
    return kept
