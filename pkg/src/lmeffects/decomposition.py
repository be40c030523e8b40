"""Calibrated decomposition of a contemporaneous demand response into a
direct price effect and a residual learning (experimentation) share.

The consumer's first-order conditions for the three transport modes form
a linear system whose coefficient matrix is the Gram matrix of
(1, gamma * A^phi, A) under a log-normal prior on relative quality A.
The direct effect of a bundle-price change follows from that system; the
share of an estimated total effect not explained by it is attributed to
learning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegeneratePriorError

#: demand-matrix condition numbers above this mean the prior is degenerate
PRIOR_CONDITION_LIMIT = 1e10

#: fortnights per year, for converting annual rates
PERIODS_PER_YEAR = 26


@dataclass(frozen=True)
class QualityPrior:
    """Log-normal prior on relative quality: log A ~ N(mu, sigma2)."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")


@dataclass(frozen=True)
class BundleTech:
    """Bundle technology gamma * A^phi combining the two modes."""

    gamma: float
    phi: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0.0 < self.phi <= 1.0:
            raise ValueError("phi must lie in (0, 1]")


@dataclass(frozen=True)
class CalibrationParams:
    """Inputs to the direct-price-effect computation.

    ``lam`` is the sensitivity-to-target utility curvature;
    ``price_change`` the bundle price change (negative for a discount).
    """

    prior: QualityPrior
    tech: BundleTech
    lam: float
    price_change: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


def lognormal_moment(prior: QualityPrior, s: float) -> float:
    """E[A^s] = exp(s mu + s^2 sigma2 / 2) under the log-normal prior."""
    return float(np.exp(s * prior.mu + s * s * prior.sigma2 / 2.0))


def demand_matrix(prior: QualityPrior, tech: BundleTech) -> np.ndarray:
    """Gram matrix E[v v'] with v = (1, gamma A^phi, A)."""
    g, phi = tech.gamma, tech.phi
    m = lambda s: lognormal_moment(prior, s)  # noqa: E731
    return np.array(
        [
            [1.0, g * m(phi), m(1.0)],
            [g * m(phi), g * g * m(2.0 * phi), g * m(1.0 + phi)],
            [m(1.0), g * m(1.0 + phi), m(2.0)],
        ]
    )


def direct_price_effect(params: CalibrationParams) -> np.ndarray:
    """Demand response (outside option, bundle, new mode) to the price
    change, holding learning incentives fixed.

    Solves -(1/lambda) M^-1 e_bundle * price_change; the bundle component
    is positive for a discount because M is positive definite.
    """
    mat = demand_matrix(params.prior, params.tech)
    if np.linalg.cond(mat) > PRIOR_CONDITION_LIMIT:
        raise DegeneratePriorError(
            "demand system is singular; a degenerate quality prior "
            "(sigma2 = 0 with phi = 1) does not identify the three modes"
        )
    rhs = np.zeros(3)
    rhs[1] = -params.price_change / params.lam
    return np.linalg.solve(mat, rhs)


def learning_share(total_effect: float, direct_effect: float) -> float:
    """Share of the total effect not explained by the direct price effect."""
    if total_effect == 0:
        raise ValueError("learning share is undefined for a zero total effect")
    return 1.0 - direct_effect / total_effect


def calibrate_bundle_tech(
    logmean_quality: float,
    logvar_quality: float,
    logmean_bundle: float,
    logvar_bundle: float,
) -> BundleTech:
    """Match gamma * A^phi to observed bundle-quality log-moments.

    log(gamma A^phi) = log gamma + phi log A, so phi is the ratio of log
    standard deviations and gamma matches the log means; the match is
    unique.
    """
    if logvar_quality <= 0:
        raise ValueError("logvar_quality must be positive")
    if logvar_bundle < 0:
        raise ValueError("logvar_bundle must be nonnegative")
    phi = float(np.sqrt(logvar_bundle / logvar_quality))
    gamma = float(np.exp(logmean_bundle - phi * logmean_quality))
    return BundleTech(gamma=gamma, phi=phi)


def biweekly_rate(annual_rate: float) -> float:
    """Geometric per-fortnight rate equivalent to an annual rate."""
    if annual_rate <= -1:
        raise ValueError("annual_rate must exceed -1")
    return float((1.0 + annual_rate) ** (1.0 / PERIODS_PER_YEAR) - 1.0)


def backout_lambda(monthly_income: float, per_period_rate: float, target: float):
    """Sensitivity-to-target implied by losing two periods of income.

    Missing the travel target forfeits the present value of one month's
    income: (lambda / 2) * target = (w + w / (1 + r)) / 2.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    if per_period_rate <= -1:
        raise ValueError("per_period_rate must exceed -1")
    return float(monthly_income * (1.0 + 1.0 / (1.0 + per_period_rate)) / target)
