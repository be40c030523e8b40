"""Treatment-effect functionals of a fitted location-scale model.

The fitted (alpha, sigma) imputes each arm's missing potential outcome,
which turns into an average-effect estimate; sigma alone carries the
relative change in dispersion.  Standard errors propagate the joint
bootstrap covariance of (alpha, sigma, treated mean, control mean)
through analytic gradients.
"""

from __future__ import annotations

import warnings

import numpy as np


def _check_shares(p_treated, p_control):
    if p_treated <= 0 or p_control <= 0:
        raise ValueError("arm shares must be positive")


def average_effect(alpha, sigma, treated_mean, control_mean, p_treated, p_control):
    """Average effect from imputed potential outcomes.

    Weighted combination of the treated-arm effect (observed mean minus
    back-transformed mean) and the control-arm effect (forward-transformed
    mean minus observed mean), weighted by the arm shares.  Shares only
    need to be positive; they are normalised internally.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    _check_shares(p_treated, p_control)
    w_t = p_treated / (p_treated + p_control)
    w_c = 1.0 - w_t
    treated_part = treated_mean - (treated_mean - alpha) / sigma
    control_part = alpha + (sigma - 1.0) * control_mean
    return w_t * treated_part + w_c * control_part


def average_effect_gradient(
    alpha, sigma, treated_mean, control_mean, p_treated, p_control
):
    """Gradient of ``average_effect`` in (alpha, sigma, treated mean,
    control mean) order, for delta-method standard errors."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    _check_shares(p_treated, p_control)
    w_t = p_treated / (p_treated + p_control)
    w_c = 1.0 - w_t
    return np.array(
        [
            w_t / sigma + w_c,
            w_t * (treated_mean - alpha) / sigma**2 + w_c * control_mean,
            w_t * (1.0 - 1.0 / sigma),
            w_c * (sigma - 1.0),
        ]
    )


def dispersion_change(sigma):
    """Relative change in outcome dispersion implied by the fitted scale."""
    return sigma - 1.0


#: gradient of ``dispersion_change`` in (alpha, sigma, means) order
DISPERSION_GRADIENT = np.array([0.0, 1.0, 0.0, 0.0])


def delta_method_se(gradient, covariance):
    """sqrt(g' C g); a negative variance from rounding is clamped to 0."""
    g = np.asarray(gradient, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (g.size, g.size):
        raise ValueError(
            f"gradient length {g.size} does not match covariance {cov.shape}"
        )
    var = float(g @ cov @ g)
    if var < 0.0:
        warnings.warn(
            f"delta-method variance {var:.3g} is negative; clamping to zero",
            stacklevel=2,
        )
        var = 0.0
    return float(np.sqrt(var))


def aggregate_strata(values, ses, proportions):
    """Combine per-stratum estimates with fixed stratum proportions.

    Strata are treated as independent, so the aggregated variance is the
    proportion-squared-weighted sum.  Returns (value, se).
    """
    values = np.asarray(values, dtype=float)
    ses = np.asarray(ses, dtype=float)
    props = np.asarray(proportions, dtype=float)
    if not (values.shape == ses.shape == props.shape) or values.ndim != 1:
        raise ValueError("values, ses, and proportions must be equal-length vectors")
    if np.any(props < 0) or abs(props.sum() - 1.0) > 1e-8:
        raise ValueError("proportions must be nonnegative and sum to one")
    value = float(props @ values)
    se = float(np.sqrt(np.sum(props**2 * ses**2)))
    return value, se
