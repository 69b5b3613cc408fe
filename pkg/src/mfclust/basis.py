"""Clamped B-spline basis shared by all sensors.

A basis is defined by its domain, order (degree + 1), and number of basis
functions. Knots are clamped (endpoint multiplicity = order) with equally
spaced interior knots, so every basis is fully determined by four numbers.
Evaluation uses the Cox-de Boor recurrence; curve fitting is plain least
squares on the evaluated design matrix; inner products come from per-span
Gauss-Legendre quadrature, which is exact for piecewise-polynomial
integrands of the orders used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BasisSpec:
    """A clamped B-spline basis on [domain_lo, domain_hi]."""

    domain_lo: float
    domain_hi: float
    order: int
    n_basis: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if self.order < 1 or self.n_basis < self.order:
            raise ValueError(
                f"need n_basis >= order >= 1, got n_basis={self.n_basis}, order={self.order}"
            )
        if not self.domain_lo < self.domain_hi:
            raise ValueError("domain_lo must be strictly below domain_hi")
        if knots.shape != (self.n_basis + self.order,):
            raise ValueError(
                f"knot sequence must have length n_basis + order = {self.n_basis + self.order}"
            )
        if np.any(np.diff(knots) < 0):
            raise ValueError("knot sequence must be nondecreasing")
        object.__setattr__(self, "knots", knots)

    @property
    def degree(self) -> int:
        return self.order - 1


def build_basis(domain_lo: float, domain_hi: float, n_basis: int, order: int = 3) -> BasisSpec:
    """Build a clamped basis with equally spaced interior knots.

    The knot sequence repeats each endpoint `order` times and places the
    remaining n_basis - order knots uniformly inside the domain.
    """
    if order < 1 or n_basis < order:
        raise ValueError(f"need n_basis >= order >= 1, got n_basis={n_basis}, order={order}")
    if not domain_lo < domain_hi:
        raise ValueError("domain_lo must be strictly below domain_hi")
    n_interior = n_basis - order
    interior = np.linspace(domain_lo, domain_hi, n_interior + 2)[1:-1]
    knots = np.concatenate([
        np.full(order, float(domain_lo)),
        interior,
        np.full(order, float(domain_hi)),
    ])
    return BasisSpec(float(domain_lo), float(domain_hi), int(order), int(n_basis), knots)


def _find_spans(basis: BasisSpec, t: np.ndarray) -> np.ndarray:
    # Span i satisfies knots[i] <= t < knots[i+1]; the right endpoint maps
    # to the last nonempty span so clamped evaluation covers [lo, hi].
    spans = np.searchsorted(basis.knots, t, side="right") - 1
    return np.clip(spans, basis.degree, basis.n_basis - 1)


def design_matrix(basis: BasisSpec, times: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions at each time; returns (len(times), n_basis)."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(t < basis.domain_lo) or np.any(t > basis.domain_hi):
        bad = t[(t < basis.domain_lo) | (t > basis.domain_hi)][0]
        raise ValueError(f"time {bad} outside basis domain [{basis.domain_lo}, {basis.domain_hi}]")
    d = basis.degree
    knots = basis.knots
    spans = _find_spans(basis, t)

    # Cox-de Boor triangle, vectorized over evaluation points. vals[:, r]
    # holds B_{span-d+r, degree j} at stage j of the recurrence.
    n_pts = t.shape[0]
    vals = np.zeros((n_pts, d + 1))
    vals[:, 0] = 1.0
    left = np.zeros((n_pts, d + 1))
    right = np.zeros((n_pts, d + 1))
    for j in range(1, d + 1):
        left[:, j] = t - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - t
        saved = np.zeros(n_pts)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.where(denom > 0, vals[:, r] / np.where(denom > 0, denom, 1.0), 0.0)
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((n_pts, basis.n_basis))
    cols = spans[:, None] - d + np.arange(d + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def evaluate_basis(basis: BasisSpec, t: float) -> np.ndarray:
    """Values of all n_basis functions at a single t inside the domain."""
    return design_matrix(basis, np.array([float(t)]))[0]


def fit_coefficients(basis: BasisSpec, times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Least-squares spline coefficients for samples (times, values).

    `values` may be a vector or a (n_curves, len(times)) matrix; the
    returned coefficients have matching shape (n_basis,) or
    (n_curves, n_basis). Raises on a rank-deficient design.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    single = values.ndim == 1
    y = values[None, :] if single else values
    if times.shape[0] != y.shape[1]:
        raise ValueError("times and values length mismatch")
    if times.shape[0] < basis.n_basis:
        raise ValueError(
            f"rank-deficient fit: {times.shape[0]} samples for {basis.n_basis} basis functions"
        )
    dm = design_matrix(basis, times)
    coef, _, rank, _ = np.linalg.lstsq(dm, y.T, rcond=None)
    if rank < basis.n_basis:
        raise ValueError(
            f"rank-deficient fit: design rank {rank} < {basis.n_basis} basis functions"
        )
    return coef[:, 0] if single else coef.T


def gram_matrix(basis: BasisSpec) -> np.ndarray:
    """Matrix of pairwise basis inner products over the domain.

    Integrates with an `order`-point Gauss-Legendre rule on each knot span,
    exact for the degree 2*(order-1) products of basis functions.
    """
    nodes, weights = np.polynomial.legendre.leggauss(basis.order)
    gram = np.zeros((basis.n_basis, basis.n_basis))
    knots = basis.knots
    for i in range(basis.degree, basis.n_basis):
        a, b = knots[i], knots[i + 1]
        if b <= a:
            continue
        half = 0.5 * (b - a)
        ts = 0.5 * (a + b) + half * nodes
        dm = design_matrix(basis, ts)
        gram += (dm * (half * weights)[:, None]).T @ dm
    return gram
