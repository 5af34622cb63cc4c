"""B-spline bases, roughness penalties and the step-knot partition.

Evaluation uses the Cox--de Boor recurrence over a clamped knot vector
(boundary knots repeated ``order`` times). Points are treated as
right-continuous everywhere except at the right end of the domain, where the
last non-empty span is closed so that every row of a design matrix sums to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

__all__ = [
    "BSplineBasis",
    "StepKnots",
    "make_basis",
    "evaluate_basis",
    "design_matrix",
    "roughness_matrix",
    "gram_matrix",
    "step_knots",
    "step_approximation_error",
    "greville_abscissae",
    "interpolate",
]

# Relative slack allowed when checking that points lie in the domain.
_DOMAIN_RTOL = 1e-12


@dataclass(frozen=True)
class BSplineBasis:
    """B-spline basis of a given order on a closed interval.

    Parameters
    ----------
    order : int
        Spline order ``k`` (degree ``k - 1``).
    domain : tuple of float
        Closed interval ``(lo, hi)`` with ``lo < hi``.
    interior_knots : ndarray
        Non-decreasing knots strictly inside the domain.
    """

    order: int
    domain: Tuple[float, float]
    interior_knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = int(self.order)
        if k < 1:
            raise ValueError(f"spline order must be >= 1, got {self.order}")
        lo, hi = (float(v) for v in self.domain)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise ValueError(f"domain must be a finite interval with lo < hi, got {self.domain}")
        inner = np.asarray(self.interior_knots, dtype=float).ravel()
        if inner.size and (np.any(np.diff(inner) < 0) or inner[0] <= lo or inner[-1] >= hi):
            raise ValueError("interior knots must be non-decreasing and strictly inside the domain")
        inner = inner.copy()
        inner.setflags(write=False)
        object.__setattr__(self, "order", k)
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "interior_knots", inner)

    @property
    def n_interior(self) -> int:
        return int(self.interior_knots.size)

    @property
    def dimension(self) -> int:
        """Number of basis functions ``q = M + k``."""
        return self.n_interior + self.order

    @property
    def breakpoints(self) -> np.ndarray:
        """Knots ``x_0, ..., x_{M+1}`` with the boundary taken once."""
        lo, hi = self.domain
        return np.concatenate(([lo], self.interior_knots, [hi]))

    @property
    def knots(self) -> np.ndarray:
        """Clamped knot vector of length ``q + k``."""
        lo, hi = self.domain
        k = self.order
        return np.concatenate((np.full(k, lo), self.interior_knots, np.full(k, hi)))

    def __eq__(self, other):
        if not isinstance(other, BSplineBasis):
            return NotImplemented
        return (
            self.order == other.order
            and self.domain == other.domain
            and np.array_equal(self.interior_knots, other.interior_knots)
        )

    def __hash__(self):
        return hash((self.order, self.domain, self.interior_knots.tobytes()))

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "domain": list(self.domain),
            "interior_knots": self.interior_knots.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BSplineBasis":
        return cls(int(d["order"]), tuple(d["domain"]), np.asarray(d["interior_knots"], dtype=float))


@dataclass(frozen=True)
class StepKnots:
    """Partition ``tau_1 <= ... <= tau_{q+1}`` assigning one interval per coefficient."""

    tau: np.ndarray
    gaps: np.ndarray

    def interval(self, j: int) -> Tuple[float, float]:
        return float(self.tau[j]), float(self.tau[j + 1])


def make_basis(k: int, n_interior: int, domain: Tuple[float, float] = (0.0, 1.0)) -> BSplineBasis:
    """Basis of order ``k`` with ``n_interior`` evenly spaced interior knots."""
    if n_interior < 0:
        raise ValueError(f"n_interior must be >= 0, got {n_interior}")
    lo, hi = (float(v) for v in domain)
    if not hi > lo:
        raise ValueError(f"degenerate domain {domain}")
    inner = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return BSplineBasis(k, (lo, hi), inner)


def _check_points(basis: BSplineBasis, t) -> np.ndarray:
    x = np.atleast_1d(np.asarray(t, dtype=float))
    if x.ndim != 1:
        raise ValueError("evaluation points must be a scalar or a 1-d array")
    lo, hi = basis.domain
    slack = _DOMAIN_RTOL * (hi - lo)
    if not np.all(np.isfinite(x)) or np.any(x < lo - slack) or np.any(x > hi + slack):
        bad = x[~((x >= lo - slack) & (x <= hi + slack))]
        raise ValueError(f"points outside domain [{lo}, {hi}]: {bad[:5]}")
    return np.clip(x, lo, hi)


def _bspline_table(x: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    """Values of all order-``order`` B-splines on ``knots`` at ``x``; shape (n, len(knots) - order)."""
    n_spans = knots.size - 1
    # order-1 indicators; right-continuous, except the last non-empty span is closed on the right
    B = ((knots[:-1] <= x[:, None]) & (x[:, None] < knots[1:])).astype(float)
    nonempty = np.flatnonzero(knots[1:] > knots[:-1])
    last = nonempty[-1]
    at_end = x == knots[last + 1]
    B[at_end] = 0.0
    B[at_end, last] = 1.0
    for r in range(2, order + 1):
        m = n_spans - r + 1
        left_den = knots[r - 1 : r - 1 + m] - knots[:m]
        right_den = knots[r : r + m] - knots[1 : 1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (x[:, None] - knots[:m]) / left_den, 0.0)
            right = np.where(right_den > 0, (knots[r : r + m] - x[:, None]) / right_den, 0.0)
        B = left * B[:, :m] + right * B[:, 1 : m + 1]
    return B


def _derivative_table(x: np.ndarray, knots: np.ndarray, order: int, deriv: int) -> np.ndarray:
    if deriv == 0:
        return _bspline_table(x, knots, order)
    lower = _derivative_table(x, knots, order - 1, deriv - 1)
    m = knots.size - order
    left_den = knots[order - 1 : order - 1 + m] - knots[:m]
    right_den = knots[order : order + m] - knots[1 : 1 + m]
    with np.errstate(divide="ignore"):
        a = np.where(left_den > 0, (order - 1) / left_den, 0.0)
        b = np.where(right_den > 0, (order - 1) / right_den, 0.0)
    return a * lower[:, :m] - b * lower[:, 1 : m + 1]


def design_matrix(basis: BSplineBasis, timepoints, deriv: int = 0) -> np.ndarray:
    """Matrix whose row ``i`` holds the basis (or its ``deriv``-th derivative) at ``timepoints[i]``."""
    if deriv < 0 or deriv >= basis.order:
        raise ValueError(f"derivative order must be in [0, {basis.order - 1}], got {deriv}")
    x = _check_points(basis, timepoints)
    return _derivative_table(x, basis.knots, basis.order, deriv)


def evaluate_basis(basis: BSplineBasis, t: float) -> np.ndarray:
    """Vector of the ``q`` basis values at a single point."""
    if np.ndim(t) != 0:
        raise ValueError("evaluate_basis expects a scalar; use design_matrix for arrays")
    return design_matrix(basis, [t])[0]


def _span_quadrature(basis: BSplineBasis, n_nodes: int):
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    bp = np.unique(basis.breakpoints)
    a, b = bp[:-1], bp[1:]
    half = 0.5 * (b - a)
    x = (half[:, None] * nodes + (0.5 * (a + b))[:, None]).ravel()
    w = (half[:, None] * weights).ravel()
    return x, w


def roughness_matrix(basis: BSplineBasis, s: int = 2) -> np.ndarray:
    """Integral of ``Phi^(s) Phi^(s)^T`` over the domain.

    Exact: per-span Gauss--Legendre with ``max(1, k - s)`` nodes integrates
    the degree ``2 (k - 1 - s)`` integrand without error.
    """
    if s < 0 or s >= basis.order:
        raise ValueError(f"derivative order s={s} requires s < order={basis.order}")
    x, w = _span_quadrature(basis, max(1, basis.order - s))
    D = _derivative_table(x, basis.knots, basis.order, s)
    W = (D * w[:, None]).T @ D
    return 0.5 * (W + W.T)


def gram_matrix(basis: BSplineBasis) -> np.ndarray:
    """Integral of ``Phi Phi^T`` over the domain."""
    return roughness_matrix(basis, 0)


def step_knots(basis: BSplineBasis) -> StepKnots:
    """Partition of the domain into one interval per basis coefficient.

    Interval ``j`` has width ``(x_{min(j, M+1)} - x_{max(0, j-k)}) / k``,
    i.e. the support length of the ``j``-th B-spline divided by the order,
    so the widths telescope to the domain length.
    """
    x = basis.breakpoints
    k, M, q = basis.order, basis.n_interior, basis.dimension
    j = np.arange(1, q + 1)
    gaps = (x[np.minimum(j, M + 1)] - x[np.maximum(0, j - k)]) / k
    tau = np.concatenate(([x[0]], x[0] + np.cumsum(gaps)))
    # pin the end exactly; the cumulative sum may be off by rounding
    tau[-1] = x[-1]
    tau = np.maximum.accumulate(tau)
    return StepKnots(tau=tau, gaps=np.diff(tau))


def step_function_values(tau: np.ndarray, coefficients: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate the step function taking value ``c_j`` on ``[tau_j, tau_{j+1})``.

    Shared endpoints go to the right interval, matching the right-continuous
    basis evaluation; the last interval is closed.
    """
    idx = np.searchsorted(tau, t, side="right") - 1
    idx = np.clip(idx, 0, len(coefficients) - 1)
    return np.asarray(coefficients)[idx]


def step_approximation_error(basis: BSplineBasis, coefficients, grid) -> float:
    """Sup-norm distance on ``grid`` between a spline and its step approximation."""
    c = np.asarray(coefficients, dtype=float)
    if c.shape != (basis.dimension,):
        raise ValueError(f"expected {basis.dimension} coefficients, got shape {c.shape}")
    t = _check_points(basis, grid)
    f = design_matrix(basis, t) @ c
    f_step = step_function_values(step_knots(basis).tau, c, t)
    return float(np.max(np.abs(f - f_step)))


def greville_abscissae(basis: BSplineBasis) -> np.ndarray:
    """Knot averages ``(t_{j+1} + ... + t_{j+k-1}) / (k - 1)``; midpoints of spans when ``k = 1``."""
    t, k, q = basis.knots, basis.order, basis.dimension
    if k == 1:
        return 0.5 * (t[:-1] + t[1:])
    return np.array([t[j + 1 : j + k].mean() for j in range(q)])


def interpolate(basis: BSplineBasis, f) -> np.ndarray:
    """Coefficients of the spline interpolating callable ``f`` at the Greville abscissae."""
    g = greville_abscissae(basis)
    return np.linalg.solve(design_matrix(basis, g), np.asarray(f(g), dtype=float))
