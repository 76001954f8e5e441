"""Quasi-Poisson regression by iteratively reweighted least squares."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .dlnm import EffectEstimate
from .errors import Collinear, UnknownCovariate

DISPERSION_FLOOR = 1e-12
Z95 = 1.96


@dataclass
class DesignMatrix:
    """Named design columns; ``prepare`` prunes all-zero columns and checks rank."""

    values: np.ndarray
    names: list[str]
    pruned: list[str] = field(default_factory=list)

    @classmethod
    def prepare(cls, X, names=None) -> "DesignMatrix":
        if isinstance(X, pd.DataFrame):
            names = [str(c) for c in X.columns] if names is None else list(names)
            X = X.to_numpy(dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if names is None:
            names = [f"x{i}" for i in range(X.shape[1])]
        if len(names) != X.shape[1]:
            raise ValueError("names must match the number of columns")
        if not np.isfinite(X).all():
            raise ValueError("X contains non-finite values")
        keep = np.any(X != 0, axis=0)
        pruned = [n for n, k in zip(names, keep) if not k]
        X = X[:, keep]
        names = [n for n, k in zip(names, keep) if k]
        rank = np.linalg.matrix_rank(X)
        if rank < X.shape[1]:
            raise Collinear(f"design has rank {rank} < {X.shape[1]} columns after pruning {pruned}")
        return cls(X, names, pruned)


@dataclass
class QuasiPoissonFit:
    beta: np.ndarray
    cov: np.ndarray
    dispersion_phi: float
    converged: bool
    iterations: int
    pruned_columns: list[str]
    names: list[str]
    deviance: float
    df_resid: int
    dispersion_floored: bool = False
    poisson_cov: np.ndarray | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownCovariate(name) from None


def _poisson_deviance(y, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return 2.0 * np.sum(term - (y - mu))


def _weighted_solve(X, w, z):
    xtw = X.T * w
    gram = xtw @ X
    try:
        c = linalg.cho_factor(gram, check_finite=False)
        return linalg.cho_solve(c, xtw @ z, check_finite=False), gram
    except linalg.LinAlgError:
        sw = np.sqrt(w)
        return np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0], gram


def irls_poisson(X, y, tol=1e-8, max_iter=50):
    """Poisson log-link IRLS with step-halving on deviance increases.

    Returns ``(beta, mu, deviance, converged, iterations, gram)`` where
    ``gram`` is X'WX at the returned fit.
    """
    y = np.asarray(y, dtype=float)
    mu = y + 0.1
    eta = np.log(mu)
    beta = None
    dev = _poisson_deviance(y, mu)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        new_beta, _ = _weighted_solve(X, mu, z)
        for _ in range(20):
            new_eta = X @ new_beta
            new_mu = np.exp(new_eta)
            new_dev = _poisson_deviance(y, new_mu)
            if np.isfinite(new_dev) and (beta is None or new_dev <= dev * (1 + 1e-12) + 1e-12):
                break
            new_beta = 0.5 * (new_beta + beta) if beta is not None else 0.5 * new_beta
        change = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        beta, eta, mu, dev = new_beta, new_eta, new_mu, new_dev
        if change < tol:
            converged = True
            break
    gram = (X.T * mu) @ X
    return beta, mu, dev, converged, iterations, gram


class QuasiPoissonRegressor(RegressorMixin, BaseEstimator):
    """Poisson regression with Pearson-estimated dispersion.

    Parameters
    ----------
    tol : float
        Relative deviance change that ends the IRLS loop.
    max_iter : int
    fixed_dispersion : float or None
        When set, use this dispersion instead of the Pearson estimate
        (``1.0`` gives plain Poisson standard errors).
    """

    def __init__(self, tol=1e-8, max_iter=50, fixed_dispersion=None):
        self.tol = tol
        self.max_iter = max_iter
        self.fixed_dispersion = fixed_dispersion

    def fit(self, X, y):
        names = [str(c) for c in X.columns] if isinstance(X, pd.DataFrame) else None
        design = DesignMatrix.prepare(X, names)
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] != design.values.shape[0]:
            raise ValueError("y must be 1-d with one entry per row of X")
        if (y < 0).any() or not np.all(np.isfinite(y)):
            raise ValueError("y must hold nonnegative counts")
        if not (y > 0).any():
            raise ValueError("y needs at least one nonzero count")
        self.fit_ = _fit_prepared(design, y, self.tol, self.max_iter, self.fixed_dispersion)
        all_names = names if names is not None else [f"x{i}" for i in range(np.shape(X)[1])]
        self.feature_names_ = self.fit_.names
        self.support_ = np.array([n in self.fit_.names for n in all_names])
        self.coef_ = self.fit_.beta
        self.cov_ = self.fit_.cov
        self.dispersion_ = self.fit_.dispersion_phi
        self.converged_ = self.fit_.converged
        self.n_iter_ = self.fit_.iterations
        self.n_features_in_ = len(all_names)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)[:, self.support_]
        return np.exp(X @ self.coef_)

    def score(self, X, y, sample_weight=None):
        """Fraction of null deviance explained (D^2)."""
        y = np.asarray(y, dtype=float)
        mu = self.predict(X)
        null = _poisson_deviance(y, np.full_like(y, y.mean()))
        return 1.0 - _poisson_deviance(y, mu) / null


def _fit_prepared(design: DesignMatrix, y, tol, max_iter, fixed_dispersion=None) -> QuasiPoissonFit:
    X = design.values
    beta, mu, dev, converged, iterations, gram = irls_poisson(X, y, tol, max_iter)
    if not converged:
        warnings.warn(f"IRLS did not converge in {max_iter} iterations", ConvergenceWarning, stacklevel=3)
    df_resid = X.shape[0] - X.shape[1]
    floored = False
    if fixed_dispersion is not None:
        phi = float(fixed_dispersion)
    else:
        pearson = float(np.sum((y - mu) ** 2 / mu))
        phi = pearson / df_resid if df_resid > 0 else 0.0
        if df_resid <= 0 or phi < DISPERSION_FLOOR:
            phi = DISPERSION_FLOOR
            floored = True
    poisson_cov = np.linalg.inv(gram)
    poisson_cov = 0.5 * (poisson_cov + poisson_cov.T)
    return QuasiPoissonFit(
        beta=beta, cov=phi * poisson_cov, dispersion_phi=phi, converged=converged,
        iterations=iterations, pruned_columns=list(design.pruned), names=list(design.names),
        deviance=float(dev), df_resid=int(df_resid), dispersion_floored=floored,
        poisson_cov=poisson_cov,
    )


def fit_quasipoisson(y, X, names=None, tol=1e-8, max_iter=50) -> QuasiPoissonFit:
    """Fit a quasi-Poisson model of counts ``y`` on design ``X``.

    ``X`` may be a DataFrame, an array (with ``names``), or a prepared
    DesignMatrix, which skips the pruning and rank check.
    """
    design = X if isinstance(X, DesignMatrix) else DesignMatrix.prepare(X, names)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != design.values.shape[0]:
        raise ValueError("length of y must equal rows of X")
    if (y < 0).any():
        raise ValueError("counts must be nonnegative")
    if not (y > 0).any():
        raise ValueError("at least one nonzero count is required")
    return _fit_prepared(design, y, tol, max_iter)


def irr_and_pvalue(fit: QuasiPoissonFit, covariate: str, z: float = Z95) -> EffectEstimate:
    """Rate ratio per unit of ``covariate`` with Wald CI and two-sided p-value."""
    i = fit.index(covariate)
    beta = float(fit.beta[i])
    se = float(np.sqrt(fit.cov[i, i]))
    return wald_effect(covariate, beta, se, z)


def wald_effect(name: str, beta: float, se: float, z: float = Z95) -> EffectEstimate:
    if beta == 0.0:
        p = 1.0
    else:
        p = float(2.0 * stats.norm.sf(abs(beta / se))) if se > 0 else 0.0
    return EffectEstimate(
        contrast_name=name, point=float(np.exp(beta)),
        ci_low=float(np.exp(beta - z * se)), ci_high=float(np.exp(beta + z * se)),
        log_se=se, p_value=p,
    )
