"""B-spline and natural cubic spline bases.

The B-spline basis is evaluated with the Cox-de Boor recursion on a clamped
knot vector (each boundary knot repeated ``degree + 1`` times). The natural
cubic basis is the cubic B-spline basis projected onto the null space of the
second-derivative constraints at both boundary knots, so it has
``len(internal_knots) + 2`` columns and is extrapolated linearly outside the
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import OutOfDomain


class BasisKind(str, Enum):
    BSPLINE = "BSpline"
    NATURAL_CUBIC = "NaturalCubic"


@dataclass(frozen=True)
class BasisSpec:
    kind: BasisKind
    internal_knots: tuple[float, ...]
    boundary: tuple[float, float]
    degree: int = 3
    clamp: bool = False
    # natural basis only: null-space projection, filled in __post_init__
    _projection: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        kind = BasisKind(self.kind)
        object.__setattr__(self, "kind", kind)
        knots = tuple(float(k) for k in self.internal_knots)
        object.__setattr__(self, "internal_knots", knots)
        lo, hi = (float(b) for b in self.boundary)
        object.__setattr__(self, "boundary", (lo, hi))
        if not lo < hi:
            raise ValueError(f"boundary must satisfy lo < hi, got {self.boundary}")
        if any(not lo < k < hi for k in knots):
            raise ValueError(f"internal knots {knots} must lie strictly inside ({lo}, {hi})")
        if list(knots) != sorted(knots):
            raise ValueError("internal knots must be sorted")
        if kind is BasisKind.NATURAL_CUBIC:
            object.__setattr__(self, "degree", 3)
            object.__setattr__(self, "_projection", _natural_projection(self))
        elif self.degree < 0:
            raise ValueError("degree must be >= 0")

    @property
    def n_columns(self) -> int:
        if self.kind is BasisKind.NATURAL_CUBIC:
            return len(self.internal_knots) + 2
        return len(self.internal_knots) + self.degree + 1

    @property
    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary
        p = self.degree
        return np.concatenate([[lo] * (p + 1), self.internal_knots, [hi] * (p + 1)])


def bspline(degree, internal_knots, boundary, clamp=False) -> BasisSpec:
    return BasisSpec(BasisKind.BSPLINE, tuple(internal_knots), tuple(boundary), degree, clamp)


def natural_cubic(internal_knots, boundary) -> BasisSpec:
    return BasisSpec(BasisKind.NATURAL_CUBIC, tuple(internal_knots), tuple(boundary))


def _basis_functions(x, t, p, deriv=0):
    """Cox-de Boor evaluation of all degree-``p`` B-splines on knot vector ``t``.

    Points outside ``[t[0], t[-1]]`` are evaluated on the polynomial piece of
    the nearest boundary interval. Returns shape ``(len(x), len(t) - p - 1)``.
    """
    x = np.asarray(x, dtype=float)
    if deriv > 0:
        if p == 0:
            return np.zeros((x.size, len(t) - 1))
        lower = _basis_functions(x, t, p - 1, deriv - 1)
        out = np.zeros((x.size, len(t) - p - 1))
        for i in range(out.shape[1]):
            d1 = t[i + p] - t[i]
            d2 = t[i + p + 1] - t[i + 1]
            if d1 > 0:
                out[:, i] += p * lower[:, i] / d1
            if d2 > 0:
                out[:, i] -= p * lower[:, i + 1] / d2
        return out

    # degree 0: one active interval per point, restricted to non-degenerate spans
    spans = np.flatnonzero(np.diff(t) > 0)
    idx = np.searchsorted(t[spans], x, side="right") - 1
    idx = np.clip(idx, 0, len(spans) - 1)
    basis = np.zeros((x.size, len(t) - 1))
    basis[np.arange(x.size), spans[idx]] = 1.0
    for q in range(1, p + 1):
        nxt = np.zeros((x.size, len(t) - q - 1))
        for i in range(nxt.shape[1]):
            d1 = t[i + q] - t[i]
            d2 = t[i + q + 1] - t[i + 1]
            if d1 > 0:
                nxt[:, i] += (x - t[i]) / d1 * basis[:, i]
            if d2 > 0:
                nxt[:, i] += (t[i + q + 1] - x) / d2 * basis[:, i + 1]
        basis = nxt
    return basis


def _rowwise_matmul(a, b):
    # fixed summation order so single-row and batch evaluation agree bit for bit
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[1]):
        out += a[:, i, None] * b[i]
    return out


def _natural_projection(spec: BasisSpec) -> np.ndarray:
    lo, hi = spec.boundary
    t = spec.knot_vector
    constraint = _basis_functions(np.array([lo, hi]), t, 3, deriv=2)
    q, _ = np.linalg.qr(constraint.T, mode="complete")
    return q[:, 2:]


def bspline_eval(spec: BasisSpec, x, deriv: int = 0) -> np.ndarray:
    """Evaluate a B-spline basis at ``x``; rows sum to one inside the domain.

    Raises OutOfDomain for points outside ``spec.boundary`` unless
    ``spec.clamp`` is set, in which case points are clipped to the boundary.
    """
    if spec.kind is not BasisKind.BSPLINE:
        raise ValueError("bspline_eval requires a BSpline spec")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = spec.boundary
    outside = (x < lo) | (x > hi)
    if outside.any():
        if not spec.clamp:
            bad = x[outside][:3]
            raise OutOfDomain(f"values {bad.tolist()} outside [{lo}, {hi}]")
        x = np.clip(x, lo, hi)
    return _basis_functions(x, spec.knot_vector, spec.degree, deriv)


def natural_cubic_eval(spec: BasisSpec, x, deriv: int = 0, extrapolate: str = "linear") -> np.ndarray:
    """Evaluate a natural cubic spline basis at ``x``.

    ``extrapolate="linear"`` continues each column linearly beyond the
    boundary knots (value and slope matched at the knot).
    ``extrapolate="polynomial"`` continues the boundary cubic piece instead;
    it exists for inspecting the boundary constraint numerically.
    """
    if spec.kind is not BasisKind.NATURAL_CUBIC:
        raise ValueError("natural_cubic_eval requires a NaturalCubic spec")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = spec.knot_vector
    z = spec._projection
    if extrapolate == "polynomial":
        return _rowwise_matmul(_basis_functions(x, t, 3, deriv), z)
    if extrapolate != "linear":
        raise ValueError(f"unknown extrapolate mode {extrapolate!r}")

    lo, hi = spec.boundary
    out = _rowwise_matmul(_basis_functions(x, t, 3, deriv), z)
    for edge, mask in ((lo, x < lo), (hi, x > hi)):
        if not mask.any():
            continue
        at = np.array([edge])
        value = _rowwise_matmul(_basis_functions(at, t, 3, 0), z)[0]
        slope = _rowwise_matmul(_basis_functions(at, t, 3, 1), z)[0]
        if deriv == 0:
            out[mask] = value + (x[mask] - edge)[:, None] * slope
        elif deriv == 1:
            out[mask] = slope
        else:
            out[mask] = 0.0
    return out


def basis_eval(spec: BasisSpec, x) -> np.ndarray:
    if spec.kind is BasisKind.BSPLINE:
        return bspline_eval(spec, x)
    return natural_cubic_eval(spec, x)


def log_lag_knots(max_lag: int, k: int) -> list[float]:
    """Internal lag knots equally spaced on the log scale between lag 1 and ``max_lag``."""
    if max_lag < 1 or k < 0:
        raise ValueError("need max_lag >= 1 and k >= 0")
    return [float(max_lag ** (i / (k + 1))) for i in range(1, k + 1)]
