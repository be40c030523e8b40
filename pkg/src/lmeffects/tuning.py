"""Hyperparameter selection from placebo fits on pre-treatment data.

Before the treatment exists, the arms (defined by their future
assignment) should look identical, so a fit on a pre-treatment period
should land on the null parameters.  The grid point whose placebo fits
stay closest to the null, averaged over pre-periods, wins.  Placebo fits
use identity weighting so the criterion is a pure function of the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import DegenerateDesignError, NonMonotoneFitError, TuningError
from .lmoments import Sample, basis_integrals, check_trim, lmoments


@dataclass(frozen=True)
class HyperGrid:
    """Candidate moment counts and trim ranges.

    Iteration follows the tie-break order: smaller moment count first,
    wider trim first.
    """

    orders: Tuple[int, ...] = tuple(range(2, 17))
    trims: Tuple[Tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        if not self.orders or not self.trims:
            raise ValueError("grid must contain at least one order and one trim")
        for trim in self.trims:
            check_trim(trim)
        if any(r < 1 for r in self.orders):
            raise ValueError("moment counts must be positive")

    def points(self):
        """Grid points in deterministic tie-break order."""
        trims = sorted(self.trims, key=lambda t: -(t[1] - t[0]))
        return [(int(r), trim) for r in sorted(set(self.orders)) for trim in trims]


@dataclass
class TuningReport:
    """Outcome of a placebo-criterion grid search.

    ``criteria[point]`` holds the per-pre-period squared distances from
    the null parameters, or None where the point was infeasible.
    """

    n_moments: int
    trim: Tuple[float, float]
    best_value: float
    criteria: dict = field(repr=False)
    n_pre_periods: int = 0

    @property
    def chosen(self):
        return self.n_moments, self.trim


def placebo_fit(
    treated_values, control_values, n_moments, trim=(0.0, 1.0), location_only=False
):
    """Identity-weighted fit of one pre-period pair; returns theta."""
    from .estimators import fit_location_scale  # deferred to avoid cycle

    fit = fit_location_scale(
        Sample(treated_values),
        Sample(control_values),
        n_moments,
        trim,
        location_only=location_only,
    )
    return fit.theta


def null_params(location_only: bool) -> np.ndarray:
    return np.array([0.0]) if location_only else np.array([0.0, 1.0])


def _criterion_for_trim(pair, max_order, trim, location_only, theta_null):
    """Placebo criterion for every order 1..max_order at one trim.

    The moment integrals at the largest order are computed once; smaller
    orders reuse their leading entries, so the whole order grid costs one
    integration per period.  Returns a vector indexed by order-1, with
    NaN marking infeasible orders.
    """
    treated, control = Sample(pair[0]), Sample(pair[1])
    lam1 = lmoments(treated, max_order, trim)
    lam0 = lmoments(control, max_order, trim)
    const = basis_integrals(max_order, trim)
    out = np.full(max_order, np.nan)
    for order in range(1 if location_only else 2, max_order + 1):
        y1, y0, c = lam1[:order], lam0[:order], const[:order]
        if location_only:
            denom = c @ c
            if denom <= 0:
                continue
            theta = np.array([(c @ (y1 - y0)) / denom])
        else:
            X = np.column_stack([c, y0])
            normal = X.T @ X
            if not np.isfinite(normal).all() or np.linalg.cond(normal) > 1e12:
                continue
            theta = np.linalg.solve(normal, X.T @ y1)
            if theta[1] <= 0:
                continue
        out[order - 1] = float(np.sum((theta - theta_null) ** 2))
    return out


def select_hyperparams(
    pre_period_pairs: Sequence,
    grid: Optional[HyperGrid] = None,
    location_only: bool = False,
) -> TuningReport:
    """Pick the grid point whose placebo fits average closest to the null.

    Parameters
    ----------
    pre_period_pairs : sequence of (treated_values, control_values)
        One pair per pre-treatment period, split by future assignment.
    grid : HyperGrid
    location_only : fit the pure location shift instead of location-scale.

    A grid point that fails (degenerate design, nonpositive scale) on any
    pre-period is infeasible and excluded.  Ties go to the smaller moment
    count, then the wider trim.  All points infeasible raises TuningError.
    """
    grid = grid or HyperGrid()
    if not pre_period_pairs:
        raise TuningError("at least one pre-treatment period is required")
    p = 1 if location_only else 2
    if all(r < p for r in grid.orders):
        raise TuningError("no grid order can identify the model parameters")
    theta_null = null_params(location_only)
    max_order = max(grid.orders)

    # per-period criterion for every order, one pass per (period, trim)
    per_trim = {}
    for trim in set(grid.trims):
        rows = []
        for pair in pre_period_pairs:
            try:
                rows.append(
                    _criterion_for_trim(pair, max_order, trim, location_only, theta_null)
                )
            except (DegenerateDesignError, NonMonotoneFitError, ValueError):
                rows.append(np.full(max_order, np.nan))
        per_trim[trim] = np.array(rows)  # (T0, max_order)

    criteria = {}
    best_point, best_value = None, np.inf
    for order, trim in grid.points():
        if order < p:
            criteria[(order, trim)] = None
            continue
        column = per_trim[trim][:, order - 1]
        if np.isnan(column).any():
            criteria[(order, trim)] = None
            continue
        criteria[(order, trim)] = column.copy()
        value = float(column.mean())
        # criteria within float rounding of the incumbent count as ties,
        # which the grid order already resolved
        if value < best_value * (1.0 - 1e-9) - 1e-24:
            best_point, best_value = (order, trim), value
    if best_point is None:
        raise TuningError("every grid point was infeasible on some pre-period")
    return TuningReport(
        n_moments=best_point[0],
        trim=best_point[1],
        best_value=best_value,
        criteria=criteria,
        n_pre_periods=len(pre_period_pairs),
    )
