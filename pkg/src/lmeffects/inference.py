"""Weighted (Bayesian) bootstrap inference for L-moment estimators.

The sampling noise of the residual L-moment vector is estimated by
reweighting each arm's empirical cdf with normalised unit exponentials and
recomputing the L-moments.  The pseudoinverse of that covariance is the
variance-minimising weighting matrix; the same covariance feeds the
parameter sandwich and, through a joint refit bootstrap, the delta method
for downstream functionals.

Every replicate's weights are a pure function of (seed, replicate index,
arm), so results do not depend on execution order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .exceptions import DegenerateDesignError, InferenceUnstableError
from .lmoments import Sample, basis_integrals, check_trim, step_lmoments

#: bootstrap replicates processed per batch (bounds peak memory)
_CHUNK = 128

_TREATED_ARM = 1
_CONTROL_ARM = 0
_PRIMITIVE_TREATED_ARM = 2
_PRIMITIVE_CONTROL_ARM = 3

MIN_BOOT = 50
RECOMMENDED_BOOT = 200


def replicate_rng(seed: int, replicate: int, arm: int) -> np.random.Generator:
    """Independent generator keyed by (seed, replicate, arm)."""
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(int(arm), int(replicate))
    )
    return np.random.default_rng(ss)


def bootstrap_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """Normalised unit-mean exponential weights (the Bayesian bootstrap)."""
    if n < 1:
        raise ValueError("need at least one observation to reweight")
    z = rng.standard_exponential(n)
    return z / z.sum()


def reweighted_quantile(sample: Sample, weights, u):
    """Quantile of the reweighted empirical cdf, inf{x : F~(x) >= u}.

    ``weights`` align with the sample's sorted values and must be
    nonnegative and sum to one.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (sample.n,):
        raise ValueError(f"weights must have length {sample.n}, got {w.shape}")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to one")
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
        raise ValueError("quantile level must lie in [0, 1]")
    cum = np.cumsum(w)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, u_arr, side="left")
    out = sample.values[np.minimum(idx, sample.n - 1)]
    return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out


@dataclass(frozen=True)
class MomentWeighting:
    """Residual L-moment covariance and its pseudoinverse.

    ``weight`` is the variance-minimising weighting matrix;
    ``residual_cov`` the covariance it inverts; ``rank`` the number of
    eigenvalues the pseudoinverse kept.
    """

    weight: np.ndarray
    residual_cov: np.ndarray
    rank: int


def psd_pinv(matrix, rtol: float = 1e-12, atol: float = 0.0):
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Negative eigenvalues from rounding are clamped to zero; eigenvalues
    below rtol times the largest (or below the absolute floor ``atol``)
    are treated as rank deficiency.  Returns the (symmetric PSD)
    pseudoinverse and the retained rank.
    """
    sym = (np.asarray(matrix, dtype=float) + np.asarray(matrix, dtype=float).T) / 2.0
    eigval, eigvec = np.linalg.eigh(sym)
    cutoff = max(max(eigval.max(initial=0.0), 0.0) * rtol, atol)
    keep = eigval > cutoff
    inv_vals = np.zeros_like(eigval)
    inv_vals[keep] = 1.0 / eigval[keep]
    pinv = (eigvec * inv_vals) @ eigvec.T
    return (pinv + pinv.T) / 2.0, int(keep.sum())


def _check_n_boot(n_boot):
    if n_boot < MIN_BOOT:
        raise ValueError(
            f"need at least {MIN_BOOT} bootstrap replicates for a usable "
            f"covariance, got {n_boot}"
        )
    if n_boot < RECOMMENDED_BOOT:
        warnings.warn(
            f"{n_boot} bootstrap replicates is low for covariance "
            f"estimation; {RECOMMENDED_BOOT}+ is recommended",
            stacklevel=3,
        )


def _bootstrap_cum_weights(n, n_boot, seed, arm, start, stop):
    """Cumulative weights for replicates [start, stop); rows sum to 1."""
    cums = np.empty((stop - start, n))
    for b in range(start, stop):
        cums[b - start] = bootstrap_weights(n, replicate_rng(seed, b, arm))
    raw = cums.copy()
    np.cumsum(cums, axis=1, out=cums)
    cums[:, -1] = 1.0
    return raw, cums


def _lmoment_deviations(values, n_moments, trim, n_boot, seed, arm):
    """(B, R) matrix of reweighted-minus-empirical L-moment vectors."""
    n = values.size
    base = step_lmoments(values, np.arange(1, n + 1) / n, n_moments, trim)
    out = np.empty((n_boot, n_moments))
    for start in range(0, n_boot, _CHUNK):
        stop = min(start + _CHUNK, n_boot)
        _, cums = _bootstrap_cum_weights(n, n_boot, seed, arm, start, stop)
        out[start:stop] = step_lmoments(values, cums, n_moments, trim)
    return out - base


def estimate_optimal_weighting(
    treated: Sample,
    control: Sample,
    n_moments: int,
    trim=(0.0, 1.0),
    n_boot: int = 500,
    seed: int = 0,
    first_step_scale: Optional[float] = None,
    transformed_control=None,
) -> MomentWeighting:
    """Two-step optimal weighting matrix via the weighted bootstrap.

    Each replicate reweights the two arms independently and records

        v_b = sqrt(N) * ((L~_1 - L_1) - (L~_0' - L_0')),

    where the control-side L-moments are taken on the control values
    mapped to the treated scale: ``first_step_scale * control`` for
    location-scale (the nonparametric sd-ratio first step), the raw
    control values for a pure location shift, or an explicitly
    ``transformed_control`` array for generic models.  The weighting
    matrix is the pseudoinverse of the sample covariance of {v_b}.
    """
    check_trim(trim)
    _check_n_boot(n_boot)
    if transformed_control is None:
        scale = 1.0 if first_step_scale is None else float(first_step_scale)
        if scale <= 0:
            raise ValueError("first_step_scale must be positive")
        transformed_control = scale * control.values
    z0 = np.asarray(transformed_control, dtype=float)
    if z0.shape != (control.n,):
        raise ValueError("transformed_control must match the control sample size")

    n_total = treated.n + control.n
    dev1 = _lmoment_deviations(
        treated.values, n_moments, trim, n_boot, seed, _TREATED_ARM
    )
    dev0 = _lmoment_deviations(z0, n_moments, trim, n_boot, seed, _CONTROL_ARM)
    v = np.sqrt(n_total) * (dev1 - dev0)
    cov = np.atleast_2d(np.cov(v, rowvar=False, ddof=1))
    # variance floor at the square of the worst-case float rounding of one
    # deviation entry, so exactly degenerate data comes out rank 0
    scale = max(np.abs(treated.values).max(), np.abs(z0).max(initial=0.0), 1e-300)
    noise_sd = np.sqrt(n_total) * scale * max(treated.n, control.n) * 1e-15
    weight, rank = psd_pinv(cov, atol=noise_sd**2)
    return MomentWeighting(weight=weight, residual_cov=cov, rank=rank)


def theta_covariance(jacobian, weight, residual_cov, n_total) -> np.ndarray:
    """Sandwich covariance of the fitted parameters.

    (J'WJ)^-1 J'W V W J (J'WJ)^-1 / N; when W is the pseudoinverse of V
    this collapses to (J'V^-J)^-1 / N.
    """
    jac = np.atleast_2d(np.asarray(jacobian, dtype=float))
    jt_w = jac.T @ weight
    bread = jt_w @ jac
    if not np.all(np.isfinite(bread)) or np.linalg.cond(bread) > 1e12:
        raise DegenerateDesignError("J'WJ is singular; cannot form a covariance")
    bread_inv = np.linalg.inv(bread)
    meat = jt_w @ residual_cov @ jt_w.T
    cov = bread_inv @ meat @ bread_inv / n_total
    return (cov + cov.T) / 2.0


def jtest_pvalue(j: float, df: int) -> float:
    """Upper-tail chi-squared probability of the overidentification test."""
    if df < 0:
        raise ValueError("degrees of freedom must be nonnegative")
    if j < -1e-10:
        raise ValueError("J statistic must be nonnegative")
    j = max(float(j), 0.0)
    if df == 0:
        return 1.0 if j <= 1e-8 else 0.0
    return float(special.gammaincc(df / 2.0, j / 2.0))


@dataclass(frozen=True)
class PrimitiveCovariance:
    """Joint covariance of (theta components, treated mean, control mean).

    Entries are on the scale of the estimates (the 1/N factor is already
    inside), so delta-method standard errors come out directly.
    """

    matrix: np.ndarray
    n_failed: int
    n_boot: int

    @property
    def n_params(self) -> int:
        return self.matrix.shape[0] - 2


def primitive_joint_cov(
    treated: Sample,
    control: Sample,
    weight,
    n_moments: int,
    trim=(0.0, 1.0),
    n_boot: int = 500,
    seed: int = 0,
    location_only: bool = False,
    model=None,
    theta_init=None,
    max_failure_frac: float = 0.05,
) -> PrimitiveCovariance:
    """Bootstrap covariance of (theta, treated mean, control mean).

    Each replicate reweights both arms, refits the model with the
    weighting matrix held fixed, and records theta plus the two weighted
    means.  Replicates where the refit degenerates are dropped; more than
    ``max_failure_frac`` of them failing raises InferenceUnstableError.
    ``model``/``theta_init`` switch the refit to a generic ModelSpec.
    """
    check_trim(trim)
    _check_n_boot(n_boot)
    weight = np.asarray(weight, dtype=float)
    const = basis_integrals(n_moments, trim)
    p = (model.n_params if model is not None else (1 if location_only else 2))
    y1, y0 = treated.values, control.values

    rows = np.empty((n_boot, p + 2))
    failed = np.zeros(n_boot, dtype=bool)
    w_const = weight @ const
    a_const = float(const @ w_const)

    for start in range(0, n_boot, _CHUNK):
        stop = min(start + _CHUNK, n_boot)
        raw1, cums1 = _bootstrap_cum_weights(
            treated.n, n_boot, seed, _PRIMITIVE_TREATED_ARM, start, stop
        )
        raw0, cums0 = _bootstrap_cum_weights(
            control.n, n_boot, seed, _PRIMITIVE_CONTROL_ARM, start, stop
        )
        rows[start:stop, p] = raw1 @ y1
        rows[start:stop, p + 1] = raw0 @ y0

        if model is not None:
            from .estimators import fit_generic  # local import avoids a cycle

            for k in range(start, stop):
                try:
                    fit = fit_generic(
                        treated,
                        control,
                        model,
                        n_moments,
                        trim,
                        weight=weight,
                        theta_init=theta_init,
                        treated_edges=cums1[k - start],
                        control_edges=cums0[k - start],
                    )
                    if not fit.converged:
                        raise DegenerateDesignError("replicate did not converge")
                    rows[k, :p] = fit.theta
                except (DegenerateDesignError, np.linalg.LinAlgError):
                    failed[k] = True
            continue

        lam1 = step_lmoments(y1, cums1, n_moments, trim)  # (C, R)
        lam0 = step_lmoments(y0, cums0, n_moments, trim)
        if location_only:
            if a_const <= 0:
                failed[start:stop] = True
                continue
            rows[start:stop, 0] = (lam1 - lam0) @ w_const / a_const
        else:
            b_vec = lam0 @ w_const
            c_vec = np.einsum("br,rs,bs->b", lam0, weight, lam0)
            rhs1 = lam1 @ w_const
            rhs2 = np.einsum("br,rs,bs->b", lam0, weight, lam1)
            det = a_const * c_vec - b_vec**2
            trace = a_const + c_vec
            disc = np.sqrt(np.maximum(trace**2 - 4.0 * det, 0.0))
            lam_min = (trace - disc) / 2.0
            lam_max = (trace + disc) / 2.0
            bad = ~np.isfinite(det) | (lam_min <= lam_max / 1e12)
            safe_det = np.where(bad, 1.0, det)
            alpha = (c_vec * rhs1 - b_vec * rhs2) / safe_det
            sigma = (a_const * rhs2 - b_vec * rhs1) / safe_det
            bad |= sigma <= 0.0
            rows[start:stop, 0] = alpha
            rows[start:stop, 1] = sigma
            failed[start:stop] = bad

    n_failed = int(failed.sum())
    if n_failed > max_failure_frac * n_boot:
        raise InferenceUnstableError(
            f"{n_failed} of {n_boot} bootstrap refits failed; inference on "
            "this cell is unstable"
        )
    good = rows[~failed]
    cov = np.atleast_2d(np.cov(good, rowvar=False, ddof=1))
    return PrimitiveCovariance(matrix=cov, n_failed=n_failed, n_boot=n_boot)
