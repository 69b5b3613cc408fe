"""Hyper-parameter search: adjusted BIC over (m, lambda, gamma) grids.

Each penalty kind is fitted in two phases. The pilot phase runs the lambda
grid with unit weights (the gamma = 0 member of the adaptive family) and
keeps the minimum-BIC fit; its means become the reference for the adaptive
weights. The adaptive phase reruns the lambda grid for every gamma in the
grid with those weights. All rows, pilot and adaptive, compete for the
final model under the adjusted BIC, whose effective dimension credits
every mean component forced to zero.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mfclust.em import (
    FitResult,
    NumericalError,
    PenaltySpec,
    initialize,
    run_em,
)
from mfclust.fpca import CoefficientMatrix

log = logging.getLogger(__name__)

DEFAULT_M_VALUES = (1, 2, 3, 4, 5, 6)
DEFAULT_GAMMA_VALUES = (0.5, 1.0, 1.5, 2.0)
DEFAULT_LAMBDA_MULTIPLIERS = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0)


@dataclass(frozen=True)
class SearchGrid:
    """Grids for the model search; lambda values scale with n**(1/3)."""

    m_values: tuple[int, ...] = DEFAULT_M_VALUES
    gamma_values: tuple[float, ...] = DEFAULT_GAMMA_VALUES
    lambda_multipliers: tuple[float, ...] = DEFAULT_LAMBDA_MULTIPLIERS

    def __post_init__(self):
        if not self.m_values or not self.gamma_values or not self.lambda_multipliers:
            raise ValueError("grids must be nonempty")
        if any(m < 1 for m in self.m_values):
            raise ValueError("cluster counts must be positive")
        if any(g <= 0 for g in self.gamma_values):
            raise ValueError("gamma grid must be positive (0 is the built-in pilot phase)")

    def lambdas(self, n: int) -> tuple[float, ...]:
        scale = n ** (1.0 / 3.0)
        return tuple(mult * scale for mult in self.lambda_multipliers)


@dataclass(frozen=True)
class SelectionRow:
    """One evaluated grid point."""

    m: int
    lam: float
    gamma: float
    kind: str
    phase: str  # "pilot" or "adaptive"
    bic: float
    n_zero: int
    n_removed_sensors: int
    converged: bool
    plain_nll: float
    penalized_nll: float
    iterations: int
    max_rise: float = 0.0


@dataclass
class SelectionReport:
    """All evaluated rows plus the winning fit."""

    kind: str
    rows: list[SelectionRow]
    best_fit: FitResult | None
    chosen: tuple[int, float, float, str] | None  # (m, lam, gamma, kind)
    reference_means: dict[int, np.ndarray] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def best_row(self) -> SelectionRow | None:
        candidates = [r for r in self.rows if r.converged]
        if not candidates:
            return None
        return min(candidates, key=row_sort_key)


def row_sort_key(row: SelectionRow):
    """Total order for picking the winning row: BIC, then smaller model."""
    return (row.bic, row.m, row.lam, row.gamma)


def adjusted_bic(fit: FitResult, n: int, q: int) -> float:
    """2 * NLL + log(n*q) * d_e with d_e = m + q + m*q - n_zero - 1.

    The likelihood term is the unpenalized observed-data negative
    log-likelihood at the fitted parameters; zeroed mean components reduce
    the effective dimension one for one.
    """
    d_e = fit.m + q + fit.m * q - fit.n_zero_means - 1
    return 2.0 * fit.plain_nll + math.log(n * q) * d_e


def _evaluate_point(B, m, spec, seed, tol, max_iter, init, phase):
    fit = run_em(B, m, spec, seed=seed, tol=tol, max_iter=max_iter, init=init)
    row = SelectionRow(
        m=m,
        lam=spec.lam,
        gamma=spec.gamma,
        kind=spec.kind,
        phase=phase,
        bic=adjusted_bic(fit, B.n, B.q),
        n_zero=fit.n_zero_means,
        n_removed_sensors=len(fit.removed_sensors),
        converged=fit.converged,
        plain_nll=fit.plain_nll,
        penalized_nll=fit.penalized_nll,
        iterations=fit.iterations,
        max_rise=fit.max_objective_rise,
    )
    return row, fit


def _lambda_sweep(B, m, kind, lambdas, seed, tol, max_iter, init, phase, gamma=0.0, reference=None):
    """Fit every lambda; return rows, fits, the best converged index, failures."""
    rows, fits, failures = [], [], []
    for lam in lambdas:
        if kind == "none" or lam == 0.0:
            spec = PenaltySpec.none() if kind == "none" else PenaltySpec.unit(kind, 0.0, m, B.q)
        elif reference is None:
            spec = PenaltySpec.unit(kind, lam, m, B.q)
        else:
            spec = PenaltySpec.adaptive(kind, lam, gamma, reference)
        try:
            row, fit = _evaluate_point(B, m, spec, seed, tol, max_iter, init, phase)
        except NumericalError as exc:
            failures.append(f"m={m}, kind={kind}, lam={lam:.4g}, gamma={gamma:g} ({phase}): {exc}")
            continue
        rows.append(row)
        fits.append(fit)
    best_idx = None
    for i, row in enumerate(rows):
        if row.converged and (best_idx is None or row_sort_key(row) < row_sort_key(rows[best_idx])):
            best_idx = i
    return rows, fits, best_idx, failures


def two_phase_fit(
    B: CoefficientMatrix,
    m: int,
    kind: str,
    gamma: float,
    grid: SearchGrid,
    seed: int = 0,
    tol: float = 1e-4,
    max_iter: int = 500,
) -> tuple[FitResult, np.ndarray]:
    """Pilot-then-adaptive fit for one (m, kind, gamma).

    Phase one sweeps the lambda grid with unit weights and takes the
    minimum-BIC means as the reference; phase two re-sweeps the grid with
    the gamma-powered adaptive weights. Returns the best phase-two fit and
    the reference means.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive; the pilot phase covers gamma = 0")
    lambdas = grid.lambdas(B.n)
    init = initialize(B, m, seed + m)
    rows1, fits1, best1, _ = _lambda_sweep(
        B, m, kind, lambdas, seed + m, tol, max_iter, init, "pilot"
    )
    if best1 is None:
        raise NumericalError(f"no pilot fit converged for m={m}, kind={kind}")
    reference = fits1[best1].params.means
    rows2, fits2, best2, _ = _lambda_sweep(
        B, m, kind, lambdas, seed + m, tol, max_iter, init, "adaptive",
        gamma=gamma, reference=reference,
    )
    if best2 is None:
        raise NumericalError(f"no adaptive fit converged for m={m}, kind={kind}, gamma={gamma}")
    return fits2[best2], reference


def _search_one_m(args):
    B, m, kind, grid, seed, tol, max_iter = args
    rows: list[SelectionRow] = []
    keep: list[tuple[SelectionRow, FitResult]] = []
    failures: list[str] = []
    reference = None
    try:
        init = initialize(B, m, seed + m)
    except NumericalError as exc:
        return m, rows, keep, None, [f"m={m}: initialization failed: {exc}"]

    if kind == "none":
        try:
            row, fit = _evaluate_point(
                B, m, PenaltySpec.none(), seed + m, tol, max_iter, init, "pilot"
            )
            rows.append(row)
            keep.append((row, fit))
        except NumericalError as exc:
            failures.append(f"m={m}, kind=none: {exc}")
        return m, rows, keep, None, failures

    lambdas = grid.lambdas(B.n)
    rows1, fits1, best1, fails1 = _lambda_sweep(
        B, m, kind, lambdas, seed + m, tol, max_iter, init, "pilot"
    )
    rows.extend(rows1)
    failures.extend(fails1)
    for row, fit in zip(rows1, fits1):
        if row.converged:
            keep.append((row, fit))
    if best1 is None:
        failures.append(f"m={m}, kind={kind}: no pilot fit converged, adaptive phase skipped")
        return m, rows, keep, None, failures

    reference = fits1[best1].params.means
    for gamma in grid.gamma_values:
        rows2, fits2, _, fails2 = _lambda_sweep(
            B, m, kind, lambdas, seed + m, tol, max_iter, init, "adaptive",
            gamma=gamma, reference=reference,
        )
        rows.extend(rows2)
        failures.extend(fails2)
        for row, fit in zip(rows2, fits2):
            if row.converged:
                keep.append((row, fit))
    return m, rows, keep, reference, failures


def model_search(
    B: CoefficientMatrix,
    grid: SearchGrid,
    kind: str,
    seed: int = 0,
    tol: float = 1e-4,
    max_iter: int = 500,
    n_jobs: int = 1,
) -> SelectionReport:
    """Evaluate the full (m, lambda, gamma) grid for one penalty kind.

    Pilot rows compete alongside adaptive rows, so with 0 in the lambda
    grid the unpenalized model is always a candidate. Non-converged fits
    are reported but excluded from the minimum-BIC choice; ties resolve to
    the smaller (m, lambda, gamma). Cluster-count tasks are independent
    and may run in a process pool.
    """
    tasks = [(B, m, kind, grid, seed, tol, max_iter) for m in grid.m_values]
    if n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(tasks))) as pool:
            outcomes = list(pool.map(_search_one_m, tasks))
    else:
        outcomes = [_search_one_m(t) for t in tasks]
    outcomes.sort(key=lambda item: item[0])

    report = SelectionReport(kind=kind, rows=[], best_fit=None, chosen=None)
    best_pair: tuple[SelectionRow, FitResult] | None = None
    for m, rows, keep, reference, failures in outcomes:
        report.rows.extend(rows)
        report.failures.extend(failures)
        if reference is not None:
            report.reference_means[m] = reference
        for row, fit in keep:
            if best_pair is None or row_sort_key(row) < row_sort_key(best_pair[0]):
                best_pair = (row, fit)
    for message in report.failures:
        log.warning("model search: %s", message)
    if best_pair is None:
        raise NumericalError(
            "no grid point produced a converged fit: " + "; ".join(report.failures or ["(no detail)"])
        )
    row, fit = best_pair
    report.best_fit = fit
    report.chosen = (row.m, row.lam, row.gamma, row.kind)
    return report
