"""Conditional logistic regression for 1:M matched strata.

The likelihood is maximized by Newton-Raphson with step-halving. Strata are
given as flat arrays (design rows, case indicator, stratum id, stratum
frequency weight); a weight of ``w`` is equivalent to ``w`` identical strata.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import NoInformativeStrata

SE_LIMIT = 10.0
OR_LIMIT = 100.0


@dataclass
class Stratum:
    rows: np.ndarray
    is_case: np.ndarray
    stratum_id: object = None
    weight: float = 1.0

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.is_case = np.asarray(self.is_case, dtype=bool)
        if self.is_case.shape != (self.rows.shape[0],):
            raise ValueError("is_case must flag each member row")
        if self.is_case.sum() != 1:
            raise ValueError(f"stratum {self.stratum_id!r} needs exactly one case")
        if self.rows.shape[0] < 2:
            raise ValueError(f"stratum {self.stratum_id!r} needs at least one control")


@dataclass(frozen=True)
class StabilityFlags:
    nonconvergence: bool
    large_se: bool
    extreme_or: bool

    @property
    def is_stable(self) -> bool:
        return not (self.nonconvergence or self.large_se or self.extreme_or)

    @property
    def reason(self) -> str:
        parts = [n for n in ("nonconvergence", "large_se", "extreme_or") if getattr(self, n)]
        return ";".join(parts)


@dataclass
class ClogitFit:
    beta: np.ndarray
    cov: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    n_strata: float
    n_dropped_strata: float
    separated: bool = False
    pruned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    crossbasis_mask: np.ndarray | None = None
    stability: StabilityFlags | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def stability_check(fit: ClogitFit) -> StabilityFlags:
    """Flag non-convergence, any cross-basis SE > 10, any exp(beta) > 100 or non-finite.

    Columns pruned as unidentified are ignored.
    """
    p = fit.beta.shape[0]
    estimated = ~fit.pruned if fit.pruned.size == p else np.ones(p, dtype=bool)
    cb = fit.crossbasis_mask if fit.crossbasis_mask is not None else np.ones(p, dtype=bool)
    diag = np.diag(fit.cov)
    with np.errstate(invalid="ignore"):
        se = np.sqrt(diag)
    se_sel = se[cb & estimated]
    large_se = bool(np.any(~np.isfinite(se_sel) | (se_sel > SE_LIMIT)))
    with np.errstate(over="ignore"):
        ors = np.exp(fit.beta[estimated])
    extreme = bool(fit.separated or np.any(~np.isfinite(ors) | (ors > OR_LIMIT)))
    return StabilityFlags(nonconvergence=not fit.converged, large_se=large_se, extreme_or=extreme)


def _sorted_groups(groups):
    order = np.argsort(groups, kind="stable")
    g = np.asarray(groups)[order]
    starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
    return order, starts


class _Problem:
    """Flat strata prepared for likelihood evaluation (rows sorted by stratum)."""

    def __init__(self, X, is_case, starts, weights):
        self.X = X
        self.is_case = is_case
        self.starts = starts
        self.sizes = np.diff(np.r_[starts, X.shape[0]])
        self.gid = np.repeat(np.arange(starts.size), self.sizes)
        self.w = weights
        self.case_rows = np.flatnonzero(is_case)

    def evaluate(self, beta, need_hessian=True):
        eta = self.X @ beta
        m = np.maximum.reduceat(eta, self.starts)
        e = np.exp(eta - m[self.gid])
        s = np.add.reduceat(e, self.starts)
        ll = float(np.sum(self.w * (eta[self.case_rows] - m - np.log(s))))
        if not need_hessian:
            return ll, None, None
        p = e / s[self.gid]
        xbar = np.add.reduceat(p[:, None] * self.X, self.starts)
        grad = self.w @ (self.X[self.case_rows] - xbar)
        xc = self.X - xbar[self.gid]
        info = (xc * (p * self.w[self.gid])[:, None]).T @ xc
        return ll, grad, info


def clogit_newton(X, is_case, groups, weights=None, tol=1e-8, max_iter=50, max_halvings=20,
                  separation_threshold=50.0):
    """Fit on flat arrays; returns a ClogitFit.

    Strata whose rows are all identical carry no information and are dropped
    (their weight is counted in ``n_dropped_strata``). Columns that never vary
    within any stratum are pruned: their coefficient and variance are
    reported as 0 and ``pruned`` marks them.
    """
    X = check_array(X, dtype=float)
    is_case = np.asarray(is_case, dtype=bool)
    groups = np.asarray(groups)
    n, p = X.shape
    if is_case.shape != (n,) or groups.shape != (n,):
        raise ValueError("is_case and groups need one entry per row")
    order, starts = _sorted_groups(groups)
    X, is_case = X[order], is_case[order]
    sizes = np.diff(np.r_[starts, n])
    if np.any(np.add.reduceat(is_case.astype(int), starts) != 1):
        raise ValueError("every stratum needs exactly one case")
    if np.any(sizes < 2):
        raise ValueError("every stratum needs at least one control")
    if weights is None:
        w_strata = np.ones(starts.size)
    else:
        w_rows = np.asarray(weights, dtype=float)[order]
        w_strata = w_rows[starts]
        if np.any(w_rows != np.repeat(w_strata, sizes)):
            raise ValueError("weights must be constant within a stratum")

    # center within stratum on the case row; the conditional likelihood is unchanged
    gid = np.repeat(np.arange(starts.size), sizes)
    case_rows = np.flatnonzero(is_case)
    Xc = X - X[case_rows][gid]
    informative = np.maximum.reduceat(np.abs(Xc).max(axis=1), starts) > 0
    n_dropped = float(w_strata[~informative].sum())
    if not informative.any():
        raise NoInformativeStrata("no stratum has within-stratum exposure variation")
    keep_rows = informative[gid]
    Xc, is_case = Xc[keep_rows], is_case[keep_rows]
    w_strata = w_strata[informative]
    starts = np.flatnonzero(np.r_[True, np.diff(gid[keep_rows]) != 0])

    # prune directions with no within-stratum variation (incl. linear dependence)
    active = np.flatnonzero(np.any(Xc != 0, axis=0))
    if active.size:
        _, r, piv = linalg.qr(Xc[:, active], mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > diag[0] * 1e-10)) if diag.size and diag[0] > 0 else 0
        active = np.sort(active[piv[:rank]])
    pruned = np.ones(p, dtype=bool)
    pruned[active] = False
    if active.size == 0:
        raise NoInformativeStrata("no identifiable covariate")

    prob = _Problem(Xc[:, active], is_case, starts, w_strata)
    beta = np.zeros(active.size)
    ll, grad, info = prob.evaluate(beta)
    converged = bool(np.max(np.abs(grad)) < tol)
    separated = False
    iterations = 0
    while not converged and iterations < max_iter:
        iterations += 1
        try:
            step = linalg.solve(info, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            separated = True
            break
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = beta + scale * step
            new_ll, _, _ = prob.evaluate(cand, need_hessian=False)
            if np.isfinite(new_ll) and new_ll >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            scale *= 0.5
        else:
            break
        beta = cand
        ll, grad, info = prob.evaluate(beta)
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > separation_threshold:
            separated = True
            break
        converged = bool(np.max(np.abs(grad)) < tol)

    full_beta = np.zeros(p)
    full_beta[active] = beta
    full_cov = np.zeros((p, p))
    try:
        sub = linalg.inv(info)
        sub = 0.5 * (sub + sub.T)
    except (linalg.LinAlgError, ValueError):
        sub = np.full((active.size, active.size), np.inf)
    full_cov[np.ix_(active, active)] = sub
    if separated:
        converged = False
    fit = ClogitFit(
        beta=full_beta, cov=full_cov, converged=converged, iterations=iterations, loglik=ll,
        n_strata=float(w_strata.sum()), n_dropped_strata=n_dropped, separated=separated, pruned=pruned,
    )
    return fit


def strata_to_arrays(strata):
    rows, cases, groups, weights = [], [], [], []
    for i, s in enumerate(strata):
        rows.append(s.rows)
        cases.append(s.is_case)
        groups.append(np.full(s.rows.shape[0], i))
        weights.append(np.full(s.rows.shape[0], s.weight))
    widths = {r.shape[1] for r in rows}
    if len(widths) > 1:
        raise ValueError("all stratum rows must have the same width")
    return np.vstack(rows), np.concatenate(cases), np.concatenate(groups), np.concatenate(weights)


def fit_clogit(strata, tol=1e-8, max_iter=50, crossbasis_mask=None) -> ClogitFit:
    """Fit a conditional logistic model to a list of Stratum objects."""
    if not strata:
        raise NoInformativeStrata("no strata")
    X, is_case, groups, weights = strata_to_arrays(strata)
    fit = clogit_newton(X, is_case, groups, weights, tol=tol, max_iter=max_iter)
    fit.crossbasis_mask = crossbasis_mask
    fit.stability = stability_check(fit)
    return fit


class ConditionalLogisticRegression(BaseEstimator):
    """Conditional (fixed-effects) logistic regression for matched strata.

    ``fit(X, y, groups, sample_weight)`` takes one row per stratum member,
    ``y`` flagging the single case row of each stratum and ``groups`` the
    stratum id. ``sample_weight`` must be constant within a stratum.
    """

    def __init__(self, tol=1e-8, max_iter=50, max_halvings=20, separation_threshold=50.0):
        self.tol = tol
        self.max_iter = max_iter
        self.max_halvings = max_halvings
        self.separation_threshold = separation_threshold

    def fit(self, X, y, groups, sample_weight=None):
        X = check_array(X, dtype=float)
        fit = clogit_newton(X, np.asarray(y).astype(bool), groups, sample_weight, self.tol,
                            self.max_iter, self.max_halvings, self.separation_threshold)
        fit.stability = stability_check(fit)
        if not fit.converged:
            warnings.warn("conditional logit did not converge", ConvergenceWarning, stacklevel=2)
        self.fit_ = fit
        self.coef_ = fit.beta
        self.cov_ = fit.cov
        self.converged_ = fit.converged
        self.n_iter_ = fit.iterations
        self.loglik_ = fit.loglik
        self.stability_ = fit.stability
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X, dtype=float) @ self.coef_

    def predict_proba(self, X, groups):
        """Within-stratum probability that each row is the case."""
        eta = self.decision_function(X)
        groups = np.asarray(groups)
        out = np.empty_like(eta)
        for g in np.unique(groups):
            m = groups == g
            e = np.exp(eta[m] - eta[m].max())
            out[m] = e / e.sum()
        return out
