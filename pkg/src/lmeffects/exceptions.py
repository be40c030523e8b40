"""Exception types shared across the package."""


class LMEffectsError(Exception):
    """Base class for errors raised by lmeffects."""


class DegenerateDesignError(LMEffectsError):
    """Moment design is singular or too ill-conditioned to solve."""


class NonMonotoneFitError(LMEffectsError):
    """Fitted transformation is not increasing (nonpositive scale)."""


class InferenceUnstableError(LMEffectsError):
    """Too many bootstrap replicates failed to produce a fit."""


class TuningError(LMEffectsError):
    """Hyperparameter search could not produce a feasible choice."""


class DegeneratePriorError(LMEffectsError):
    """Quality prior makes the demand system singular (no identification)."""


class DataFormatError(LMEffectsError, ValueError):
    """Input data file is malformed; message carries the offending line."""


class PanelFormatError(DataFormatError):
    """Panel CSV is malformed or internally inconsistent."""
