"""Minimum weighted L-moment distance estimators for two-sample
transformation models.

The model states that treated outcomes are a monotone transformation
``G(. ; theta)`` of control outcomes.  Estimation minimises the weighted
distance between the treated sample's L-moments and the model-implied
L-moments of the transformed control sample.  For affine families
(location, location-scale) the minimiser is a generalised least squares
solve; other transformations go through Gauss-Newton.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_consistent_length, column_or_1d

from . import inference
from .exceptions import DegenerateDesignError, NonMonotoneFitError
from .lmoments import (
    Sample,
    basis_integrals,
    check_trim,
    lmoments,
    step_integral_weights,
    step_lmoments,
)

#: X'WX (or J'WJ) condition numbers above this raise DegenerateDesignError.
CONDITION_LIMIT = 1e12

_NULL_PROBE = np.array([-7.3, -1.0, 0.0, 0.4, 1.0, 55.0])


@dataclass(frozen=True)
class ModelSpec:
    """A monotone outcome transformation y -> G(y; theta).

    Parameters
    ----------
    transform : callable (values, theta) -> array
        Evaluates G elementwise; must be increasing in the outcome for
        every admissible theta.
    outcome_derivative : callable (values, theta) -> array
        dG/dy, used for first-step weighting of generic models.
    parameter_gradient : callable (values, theta) -> (n, p) array
        Gradient of G with respect to theta at each outcome value.
    n_params : int
        Dimension p of theta.
    null_params : array
        The "no effect" value theta~ with G(y; theta~) = y for all y.
    name : str
    """

    transform: Callable
    outcome_derivative: Callable
    parameter_gradient: Callable
    n_params: int
    null_params: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        null = np.atleast_1d(np.asarray(self.null_params, dtype=float))
        if null.shape != (self.n_params,):
            raise ValueError("null_params length must equal n_params")
        object.__setattr__(self, "null_params", null)
        probe = self.transform(_NULL_PROBE, null)
        if not np.allclose(probe, _NULL_PROBE, atol=1e-10):
            raise ValueError("transform at null_params must be the identity")


def location_scale_model() -> ModelSpec:
    """G(y; (alpha, sigma)) = alpha + sigma * y, sigma > 0."""
    return ModelSpec(
        transform=lambda y, t: t[0] + t[1] * np.asarray(y, dtype=float),
        outcome_derivative=lambda y, t: np.full(np.shape(y), t[1], dtype=float),
        parameter_gradient=lambda y, t: np.column_stack(
            [np.ones(np.size(y)), np.asarray(y, dtype=float)]
        ),
        n_params=2,
        null_params=np.array([0.0, 1.0]),
        name="location-scale",
    )


def location_model() -> ModelSpec:
    """G(y; theta) = theta + y."""
    return ModelSpec(
        transform=lambda y, t: t[0] + np.asarray(y, dtype=float),
        outcome_derivative=lambda y, t: np.ones(np.shape(y)),
        parameter_gradient=lambda y, t: np.ones((np.size(y), 1)),
        n_params=1,
        null_params=np.array([0.0]),
        name="location",
    )


@dataclass
class GmlmFit:
    """Result of one minimum-distance fit.

    ``j_stat`` is n_total times the weighted squared norm of the residual
    L-moment vector; it is chi-squared with ``df`` degrees of freedom when
    the weighting matrix is the optimal one.  ``covariance`` is filled by
    the inference layer and is on the scale of the estimates themselves
    (already divided by total sample size).
    """

    theta: np.ndarray
    residual: np.ndarray
    j_stat: float
    df: int
    n_total: int
    converged: bool
    n_iter: int
    covariance: Optional[np.ndarray] = None

    @property
    def n_moments(self) -> int:
        return self.residual.size


def j_statistic(residual, weight, n_total) -> float:
    """n_total * residual' W residual, the overidentification statistic."""
    residual = np.asarray(residual, dtype=float)
    return float(n_total * residual @ weight @ residual)


def _as_weight(weight, n_moments):
    if weight is None:
        return np.eye(n_moments)
    weight = np.asarray(weight, dtype=float)
    if weight.shape != (n_moments, n_moments):
        raise ValueError(
            f"weight must be {(n_moments, n_moments)}, got {weight.shape}"
        )
    return weight


def design_vectors(
    treated: Sample,
    control: Sample,
    n_moments: int,
    trim=(0.0, 1.0),
    location_only: bool = False,
):
    """Moment target y and design X for the affine families.

    Location-scale: y holds the treated L-moments and X has columns
    (basis integrals, control L-moments), so the GLS residual is
    y - X (alpha, sigma)'.  Location-only: y holds the difference of
    treated and control L-moments and X is the single basis-integral
    column.
    """
    target = lmoments(treated, n_moments, trim)
    const = basis_integrals(n_moments, trim)
    if location_only:
        return target - lmoments(control, n_moments, trim), const[:, None]
    return target, np.column_stack([const, lmoments(control, n_moments, trim)])


def _gls_solve(y, X, weight):
    XtW = X.T @ weight
    normal = XtW @ X
    if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > CONDITION_LIMIT:
        raise DegenerateDesignError(
            "moment design is singular or near-singular; the control "
            "quantile function may be constant over the trim range"
        )
    return np.linalg.solve(normal, XtW @ y)


def _both_constant(treated: Sample, control: Sample) -> bool:
    return (
        treated.values[0] == treated.values[-1]
        and control.values[0] == control.values[-1]
    )


def fit_location_scale(
    treated: Sample,
    control: Sample,
    n_moments: int,
    trim=(0.0, 1.0),
    weight=None,
    location_only: bool = False,
) -> GmlmFit:
    """Closed-form GLS fit of the location(-scale) transformation model."""
    p = 1 if location_only else 2
    if n_moments < p:
        raise ValueError(f"n_moments must be at least {p}")
    weight = _as_weight(weight, n_moments)
    y, X = design_vectors(treated, control, n_moments, trim, location_only)
    if _both_constant(treated, control):
        # flat objective: any transformation mapping one constant to the
        # other fits, so anchor at the null for reproducibility
        theta = np.zeros(1) if location_only else np.array([0.0, 1.0])
        residual = y - X @ theta
        n_total = treated.n + control.n
        return GmlmFit(
            theta=theta,
            residual=residual,
            j_stat=j_statistic(residual, weight, n_total),
            df=n_moments - p,
            n_total=n_total,
            converged=True,
            n_iter=0,
        )
    theta = _gls_solve(y, X, weight)
    if not location_only and theta[1] <= 0.0:
        raise NonMonotoneFitError(
            f"fitted scale {theta[1]:.6g} is not positive; the location-scale "
            "model cannot be increasing for these samples"
        )
    residual = y - X @ theta
    n_total = treated.n + control.n
    return GmlmFit(
        theta=theta,
        residual=residual,
        j_stat=j_statistic(residual, weight, n_total),
        df=n_moments - p,
        n_total=n_total,
        converged=True,
        n_iter=0,
    )


def fit_generic(
    treated: Sample,
    control: Sample,
    model: ModelSpec,
    n_moments: int,
    trim=(0.0, 1.0),
    weight=None,
    theta_init=None,
    gradient_tol: float = 1e-10,
    step_tol: float = 1e-12,
    max_iter: int = 200,
    treated_edges=None,
    control_edges=None,
) -> GmlmFit:
    """Gauss-Newton fit of a generic monotone transformation model.

    The residual is the treated L-moment vector minus the L-moments of the
    transformed control step function; both are exact integrals.  Steps
    use step-halving and never increase the weighted objective.  The
    ``*_edges`` arguments substitute reweighted quantile breakpoints and
    exist for bootstrap refits.
    """
    if n_moments < model.n_params:
        raise ValueError("n_moments must be at least the parameter dimension")
    check_trim(trim)
    weight = _as_weight(weight, n_moments)
    n_total = treated.n + control.n
    if treated_edges is None:
        treated_edges = np.arange(1, treated.n + 1) / treated.n
    if control_edges is None:
        control_edges = np.arange(1, control.n + 1) / control.n

    target = step_lmoments(treated.values, treated_edges, n_moments, trim)
    y0 = control.values

    def residual_at(theta):
        return target - step_lmoments(
            model.transform(y0, theta), control_edges, n_moments, trim
        )

    theta = np.asarray(
        model.null_params if theta_init is None else theta_init, dtype=float
    ).copy()

    # flat objective: anchor at the null for reproducibility
    if _both_constant(treated, control):
        theta = model.null_params.copy()
        residual = residual_at(theta)
        return GmlmFit(
            theta=theta,
            residual=residual,
            j_stat=j_statistic(residual, weight, n_total),
            df=n_moments - model.n_params,
            n_total=n_total,
            converged=True,
            n_iter=0,
        )

    control_weights = step_integral_weights(control_edges, n_moments, trim)

    residual = residual_at(theta)
    objective = float(residual @ weight @ residual)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        jac = -(control_weights @ model.parameter_gradient(y0, theta))
        grad = 2.0 * jac.T @ weight @ residual
        if np.linalg.norm(grad) < gradient_tol:
            converged = True
            n_iter -= 1
            break
        step = -_gls_solve(residual, jac, weight)
        # theta + step solves the linearised problem; halve until the true
        # objective does not increase
        scale_factor = 1.0
        accepted = False
        for _ in range(50):
            candidate = theta + scale_factor * step
            cand_residual = residual_at(candidate)
            cand_objective = float(cand_residual @ weight @ cand_residual)
            if np.isfinite(cand_objective) and cand_objective <= objective:
                accepted = True
                break
            scale_factor *= 0.5
        if not accepted:
            break
        theta = candidate
        residual = cand_residual
        objective = cand_objective
        if np.linalg.norm(scale_factor * step) < step_tol:
            converged = True
            break

    return GmlmFit(
        theta=theta,
        residual=residual,
        j_stat=j_statistic(residual, weight, n_total),
        df=n_moments - model.n_params,
        n_total=n_total,
        converged=converged,
        n_iter=n_iter,
    )


def _resolve_model(model) -> Union[ModelSpec, str]:
    if isinstance(model, ModelSpec):
        return model
    if model == "location-scale":
        return "location-scale"
    if model == "location":
        return "location"
    raise ValueError(
        "model must be 'location-scale', 'location', or a ModelSpec, "
        f"got {model!r}"
    )


class GMLM(BaseEstimator):
    """Treatment-effect estimator matching L-moments of two outcome samples.

    Fits the transformation model "treated = G(control; theta)" by
    minimising a weighted distance between treated and model-implied
    L-moments.  With ``weighting='optimal'`` the weighting matrix is the
    pseudoinverse of a weighted-bootstrap estimate of the residual
    L-moment covariance, which minimises asymptotic variance and makes the
    reported J statistic a valid overidentification test.

    Parameters
    ----------
    model : {'location-scale', 'location'} or ModelSpec, default 'location-scale'
        Transformation family.  Affine families use the closed-form GLS
        solution; a ModelSpec is fitted by Gauss-Newton.
    n_moments : int, default 8
        Number of L-moments R (must be >= number of parameters).
    trim : pair of floats, default (0, 1)
        Quantile integration range; (0, 1) means no trimming.
    weighting : {'optimal', 'identity'} or (R, R) array, default 'optimal'
    n_boot : int, default 500
        Weighted-bootstrap replicates for the optimal weighting and the
        parameter covariance; 0 disables inference.
    random_state : int, default 0
        Seed for the bootstrap streams.
    theta_init : array, optional
        Start value for Gauss-Newton; defaults to the model's null
        parameters.  Required as the first step when a ModelSpec is
        combined with optimal weighting.

    Attributes
    ----------
    theta_ : fitted parameters; ``alpha_`` / ``sigma_`` for affine families
    residual_ : residual L-moment vector
    j_stat_, df_, j_pvalue_ : overidentification test (p-value is
        meaningful under optimal weighting)
    weight_ : weighting matrix actually used
    residual_cov_ : bootstrap covariance of the residual L-moment vector
    weight_rank_ : rank of ``residual_cov_`` used by the pseudoinverse
    covariance_ : covariance of ``theta_`` (None when n_boot = 0)
    converged_, n_iter_ : solver diagnostics
    """

    def __init__(
        self,
        model="location-scale",
        n_moments=8,
        trim=(0.0, 1.0),
        weighting="optimal",
        n_boot=500,
        random_state=0,
        theta_init=None,
    ):
        self.model = model
        self.n_moments = n_moments
        self.trim = trim
        self.weighting = weighting
        self.n_boot = n_boot
        self.random_state = random_state
        self.theta_init = theta_init

    def fit(self, y, d):
        """Fit from pooled outcomes ``y`` and binary treatment marker ``d``."""
        y = column_or_1d(np.asarray(y, dtype=float))
        d = column_or_1d(np.asarray(d))
        check_consistent_length(y, d)
        levels = np.unique(d)
        if not np.isin(levels, [0, 1]).all() or levels.size != 2:
            raise ValueError("treatment marker must contain both 0 and 1")
        mask = d == 1
        return self.fit_samples(Sample(y[mask]), Sample(y[~mask]))

    def fit_samples(self, treated: Sample, control: Sample):
        """Fit from pre-split treated and control samples."""
        model = _resolve_model(self.model)
        check_trim(self.trim)
        location_only = model == "location"
        custom = isinstance(model, ModelSpec)
        n_params = model.n_params if custom else (1 if location_only else 2)
        if self.n_moments < n_params:
            raise ValueError("n_moments must be at least the parameter dimension")

        weighting = self.weighting
        weight = None
        if isinstance(weighting, str) and weighting not in ("optimal", "identity"):
            raise ValueError("weighting must be 'optimal', 'identity', or a matrix")
        if not isinstance(weighting, str):
            weight = _as_weight(weighting, self.n_moments)

        need_boot = self.n_boot and self.n_boot > 0
        moment_weighting = None
        if (isinstance(weighting, str) and weighting == "optimal") or need_boot:
            control_for_boot = self._first_step_control(
                treated, control, model, custom, location_only
            )
            moment_weighting = inference.estimate_optimal_weighting(
                treated,
                control,
                n_moments=self.n_moments,
                trim=self.trim,
                n_boot=int(self.n_boot),
                seed=int(self.random_state),
                transformed_control=control_for_boot,
            )
        if isinstance(weighting, str):
            if weighting == "optimal":
                weight = moment_weighting.weight
            else:
                weight = np.eye(self.n_moments)

        if custom:
            fit = fit_generic(
                treated,
                control,
                model,
                self.n_moments,
                self.trim,
                weight=weight,
                theta_init=self.theta_init,
            )
        else:
            fit = fit_location_scale(
                treated,
                control,
                self.n_moments,
                self.trim,
                weight=weight,
                location_only=location_only,
            )

        if moment_weighting is not None and fit.converged:
            if _both_constant(treated, control):
                # reweighting constants reproduces the same estimate
                fit = dataclasses.replace(fit, covariance=np.zeros((n_params, n_params)))
            else:
                jac = self._jacobian(
                    treated, control, model, custom, location_only, fit.theta
                )
                fit = dataclasses.replace(
                    fit,
                    covariance=inference.theta_covariance(
                        jac, weight, moment_weighting.residual_cov, fit.n_total
                    ),
                )

        self.model_spec_ = model if custom else None
        self.location_only_ = location_only
        self.theta_ = fit.theta
        if not custom:
            self.alpha_ = float(fit.theta[0])
            self.sigma_ = 1.0 if location_only else float(fit.theta[1])
        self.residual_ = fit.residual
        self.j_stat_ = fit.j_stat
        self.df_ = fit.df
        self.j_pvalue_ = inference.jtest_pvalue(fit.j_stat, fit.df)
        self.weight_ = weight
        self.residual_cov_ = (
            None if moment_weighting is None else moment_weighting.residual_cov
        )
        self.weight_rank_ = (
            None if moment_weighting is None else moment_weighting.rank
        )
        self.covariance_ = fit.covariance
        self.converged_ = fit.converged
        self.n_iter_ = fit.n_iter
        self.n_treated_ = treated.n
        self.n_control_ = control.n
        self.fit_result_ = fit
        return self

    def _first_step_control(self, treated, control, model, custom, location_only):
        """Control values mapped to the treated scale for the bootstrap."""
        if custom:
            if self.theta_init is None:
                raise ValueError(
                    "a ModelSpec with bootstrap inference needs theta_init as "
                    "the first-step parameter value"
                )
            return model.transform(control.values, np.asarray(self.theta_init, float))
        if location_only:
            return control.values
        control_sd = control.std()
        scale = treated.std() / control_sd if control_sd > 0 else 1.0
        return scale * control.values

    def _jacobian(self, treated, control, model, custom, location_only, theta):
        if not custom:
            _, X = design_vectors(
                treated, control, self.n_moments, self.trim, location_only
            )
            return X
        edges = np.arange(1, control.n + 1) / control.n
        weights = step_integral_weights(edges, self.n_moments, self.trim)
        return -(weights @ model.parameter_gradient(control.values, theta))

    def predict(self, y0):
        """Impute treated-scale outcomes for control-scale values ``y0``."""
        if not hasattr(self, "theta_"):
            raise ValueError("estimator is not fitted")
        y0 = np.asarray(y0, dtype=float)
        if self.model_spec_ is not None:
            return self.model_spec_.transform(y0, self.theta_)
        if self.location_only_:
            return self.theta_[0] + y0
        return self.theta_[0] + self.theta_[1] * y0
