"""Efficient treatment-effect estimation for heavy-tailed outcomes via the
generalized method of L-moments."""

from .decomposition import (
    BundleTech,
    CalibrationParams,
    QualityPrior,
    backout_lambda,
    biweekly_rate,
    calibrate_bundle_tech,
    demand_matrix,
    direct_price_effect,
    learning_share,
    lognormal_moment,
)
from .effects import (
    aggregate_strata,
    average_effect,
    average_effect_gradient,
    delta_method_se,
    dispersion_change,
)
from .estimators import (
    GMLM,
    GmlmFit,
    ModelSpec,
    design_vectors,
    fit_generic,
    fit_location_scale,
    location_model,
    location_scale_model,
)
from .exceptions import (
    DataFormatError,
    DegenerateDesignError,
    DegeneratePriorError,
    InferenceUnstableError,
    LMEffectsError,
    NonMonotoneFitError,
    PanelFormatError,
    TuningError,
)
from .inference import (
    MomentWeighting,
    PrimitiveCovariance,
    bootstrap_weights,
    estimate_optimal_weighting,
    jtest_pvalue,
    primitive_joint_cov,
    reweighted_quantile,
    theta_covariance,
)
from .lmoments import (
    LegendreBasis,
    Sample,
    basis_integrals,
    lmoments,
    poly_integral,
    shifted_legendre_basis,
)
from .montecarlo import McConfig, Population, draw_two_samples, run_study
from .panel import (
    PanelConfig,
    PanelDataset,
    analyze_panel,
    estimate_effect_cell,
    parse_panel_csv,
    tune_cell,
)
from .tuning import HyperGrid, TuningReport, select_hyperparams

__version__ = "0.1.0"
