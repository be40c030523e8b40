"""Panel-experiment analysis: long-format dataset handling and the
per-cell estimation loop.

Every (outcome type, post period, discount arm, stratum) cell is fitted
standalone: optimal weighting, location-scale fit, average-effect and
dispersion functionals with delta-method standard errors, and the
overidentification p-value.  Stratum estimates are then aggregated with
proportion weights.  Failures stay confined to their cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .effects import (
    DISPERSION_GRADIENT,
    aggregate_strata,
    average_effect,
    average_effect_gradient,
    delta_method_se,
    dispersion_change,
)
from .estimators import GMLM
from .exceptions import (
    DegenerateDesignError,
    InferenceUnstableError,
    NonMonotoneFitError,
    PanelFormatError,
    TuningError,
)
from .inference import primitive_joint_cov
from .lmoments import Sample, check_trim
from .tuning import HyperGrid, select_hyperparams

COLUMNS = ["unit_id", "arm", "stratum", "period", "outcome_type", "count"]
ARMS = ("control", "d20", "d50")
DISCOUNT_ARMS = ("d20", "d50")
STRATA = ("user", "nonuser")
OUTCOME_TYPES = ("integrated", "nonintegrated")

RESULT_COLUMNS = [
    "outcome_type",
    "period",
    "discount",
    "stratum",
    "delta",
    "delta_se",
    "dispersion",
    "dispersion_se",
    "j_pvalue",
    "control_mean",
    "n_treated",
    "n_control",
    "n_moments",
    "trim_lo",
    "trim_hi",
    "status",
]


class PanelDataset:
    """Validated long-format experimental records.

    One record per (unit, period, outcome type); each unit belongs to a
    single arm and stratum.  Period labels are opaque strings that must
    sort lexicographically in time order (ISO dates do).
    """

    def __init__(self, frame: pd.DataFrame):
        frame = frame.loc[:, COLUMNS].copy()
        frame["count"] = frame["count"].astype(float)
        for col in ("unit_id", "arm", "stratum", "period", "outcome_type"):
            frame[col] = frame[col].astype(str)
        _validate_frame(frame)
        frame = frame.sort_values(
            ["outcome_type", "period", "arm", "stratum", "unit_id"]
        ).reset_index(drop=True)
        self.frame = frame
        self._cells = {
            key: grp["count"].to_numpy()
            for key, grp in frame.groupby(
                ["outcome_type", "period", "arm", "stratum"], sort=True
            )
        }

    @property
    def periods(self):
        return sorted(self.frame["period"].unique())

    @property
    def outcome_types(self):
        return sorted(self.frame["outcome_type"].unique())

    def pre_periods(self, cutover: str):
        return [p for p in self.periods if p < cutover]

    def post_periods(self, cutover: str):
        return [p for p in self.periods if p >= cutover]

    def cell_values(self, outcome_type, period, arm, stratum=None) -> np.ndarray:
        """Counts in one cell; strata are pooled when ``stratum`` is None."""
        if stratum is not None:
            return self._cells.get((outcome_type, period, arm, stratum), np.array([]))
        parts = [
            self._cells.get((outcome_type, period, arm, s), np.array([]))
            for s in STRATA
        ]
        return np.concatenate(parts) if parts else np.array([])

    def to_csv(self, path):
        self.frame.to_csv(path, index=False)

    def __eq__(self, other):
        return isinstance(other, PanelDataset) and self.frame.equals(other.frame)

    def __repr__(self):  # pragma: no cover
        return (
            f"PanelDataset({self.frame['unit_id'].nunique()} units, "
            f"{len(self.periods)} periods, {len(self.frame)} records)"
        )


def _validate_frame(frame: pd.DataFrame):
    bad_arm = ~frame["arm"].isin(ARMS)
    if bad_arm.any():
        raise PanelFormatError(f"unknown arm {frame.loc[bad_arm, 'arm'].iloc[0]!r}")
    bad_stratum = ~frame["stratum"].isin(STRATA)
    if bad_stratum.any():
        raise PanelFormatError(
            f"unknown stratum {frame.loc[bad_stratum, 'stratum'].iloc[0]!r}"
        )
    bad_outcome = ~frame["outcome_type"].isin(OUTCOME_TYPES)
    if bad_outcome.any():
        raise PanelFormatError(
            f"unknown outcome_type {frame.loc[bad_outcome, 'outcome_type'].iloc[0]!r}"
        )
    if not np.isfinite(frame["count"]).all() or (frame["count"] < 0).any():
        raise PanelFormatError("counts must be finite and nonnegative")
    dup = frame.duplicated(["unit_id", "period", "outcome_type"])
    if dup.any():
        u, p, o = frame.loc[dup, ["unit_id", "period", "outcome_type"]].iloc[0]
        raise PanelFormatError(
            f"duplicate record for unit {u!r}, period {p!r}, outcome {o!r}"
        )
    per_unit = frame.groupby("unit_id")[["arm", "stratum"]].nunique()
    inconsistent = per_unit[(per_unit > 1).any(axis=1)]
    if not inconsistent.empty:
        raise PanelFormatError(
            f"unit {inconsistent.index[0]!r} appears with more than one "
            "arm or stratum"
        )


def parse_panel_csv(path) -> PanelDataset:
    """Read and validate a long-format panel CSV.

    Expects the header ``unit_id,arm,stratum,period,outcome_type,count``;
    malformed rows are reported with their line number.
    """
    rows = []
    seen = {}
    unit_attrs = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise PanelFormatError(f"{path}: file is empty")
        if [h.strip() for h in header] != COLUMNS:
            raise PanelFormatError(
                f"{path}: line 1: header must be {','.join(COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(COLUMNS):
                raise PanelFormatError(
                    f"{path}: line {lineno}: expected {len(COLUMNS)} fields, "
                    f"got {len(row)}"
                )
            unit, arm, stratum, period, otype, count_str = (f.strip() for f in row)
            if arm not in ARMS:
                raise PanelFormatError(f"{path}: line {lineno}: unknown arm {arm!r}")
            if stratum not in STRATA:
                raise PanelFormatError(
                    f"{path}: line {lineno}: unknown stratum {stratum!r}"
                )
            if otype not in OUTCOME_TYPES:
                raise PanelFormatError(
                    f"{path}: line {lineno}: unknown outcome_type {otype!r}"
                )
            try:
                count = float(count_str)
            except ValueError:
                raise PanelFormatError(
                    f"{path}: line {lineno}: count {count_str!r} is not a number"
                ) from None
            if not np.isfinite(count) or count < 0:
                raise PanelFormatError(
                    f"{path}: line {lineno}: count must be finite and nonnegative"
                )
            key = (unit, period, otype)
            if key in seen:
                raise PanelFormatError(
                    f"{path}: line {lineno}: duplicate of line {seen[key]} "
                    f"(unit {unit!r}, period {period!r}, outcome {otype!r})"
                )
            seen[key] = lineno
            if unit in unit_attrs and unit_attrs[unit] != (arm, stratum):
                raise PanelFormatError(
                    f"{path}: line {lineno}: unit {unit!r} changes arm or stratum"
                )
            unit_attrs[unit] = (arm, stratum)
            rows.append((unit, arm, stratum, period, otype, count))
    if not rows:
        raise PanelFormatError(f"{path}: no data rows")
    return PanelDataset(pd.DataFrame(rows, columns=COLUMNS))


@dataclass
class PanelConfig:
    """Settings for one panel analysis run.

    ``cutover`` is the first treated period label; earlier periods are
    pre-treatment.  ``n_moments=None`` tunes the moment count per
    (outcome, discount, stratum) on the pre-treatment periods.
    """

    cutover: str
    n_moments: Optional[int] = None
    grid: HyperGrid = field(default_factory=HyperGrid)
    trim: Tuple[float, float] = (0.0, 1.0)
    n_boot: int = 500
    seed: int = 0

    def __post_init__(self):
        check_trim(self.trim)
        if self.n_moments is not None and self.n_moments < 2:
            raise ValueError("n_moments must be at least 2 for location-scale")


@dataclass
class CellEffect:
    """Estimates for a single (outcome, period, discount, stratum) cell."""

    alpha: float
    sigma: float
    delta: float
    delta_se: float
    dispersion: float
    dispersion_se: float
    j_pvalue: float
    control_mean: float
    n_treated: int
    n_control: int


def estimate_effect_cell(
    treated: Sample,
    control: Sample,
    n_moments: int,
    trim=(0.0, 1.0),
    n_boot: int = 500,
    seed: int = 0,
) -> CellEffect:
    """Full single-cell pipeline: optimal weighting, location-scale fit,
    effect functionals, and bootstrap delta-method standard errors."""
    est = GMLM(
        model="location-scale",
        n_moments=n_moments,
        trim=trim,
        weighting="optimal",
        n_boot=n_boot,
        random_state=seed,
    ).fit_samples(treated, control)
    primitives = primitive_joint_cov(
        treated,
        control,
        est.weight_,
        n_moments,
        trim,
        n_boot=n_boot,
        seed=seed,
    )
    p_treated = treated.n / (treated.n + control.n)
    p_control = 1.0 - p_treated
    t_mean, c_mean = treated.mean(), control.mean()
    delta = average_effect(est.alpha_, est.sigma_, t_mean, c_mean, p_treated, p_control)
    grad = average_effect_gradient(
        est.alpha_, est.sigma_, t_mean, c_mean, p_treated, p_control
    )
    return CellEffect(
        alpha=est.alpha_,
        sigma=est.sigma_,
        delta=delta,
        delta_se=delta_method_se(grad, primitives.matrix),
        dispersion=dispersion_change(est.sigma_),
        dispersion_se=delta_method_se(DISPERSION_GRADIENT, primitives.matrix),
        j_pvalue=est.j_pvalue_,
        control_mean=c_mean,
        n_treated=treated.n,
        n_control=control.n,
    )


def _cell_seed(seed, *indices) -> int:
    return int(np.random.SeedSequence((int(seed),) + tuple(indices)).generate_state(1)[0])


def tune_cell(
    data: PanelDataset,
    outcome_type: str,
    discount: str,
    stratum: str,
    cutover: str,
    grid: Optional[HyperGrid] = None,
):
    """Tune hyperparameters for one cell group on its pre-treatment periods."""
    pairs = []
    for period in data.pre_periods(cutover):
        t_vals = data.cell_values(outcome_type, period, discount, stratum)
        c_vals = data.cell_values(outcome_type, period, "control", stratum)
        if t_vals.size and c_vals.size:
            pairs.append((t_vals, c_vals))
    if not pairs:
        raise TuningError(
            f"no usable pre-treatment periods before {cutover!r} for "
            f"({outcome_type}, {discount}, {stratum})"
        )
    return select_hyperparams(pairs, grid)


def analyze_panel(data: PanelDataset, config: PanelConfig) -> pd.DataFrame:
    """Estimate every post-period cell and aggregate across strata.

    Returns a tidy frame with one row per (outcome, period, discount,
    stratum) plus a ``combined`` stratum row; cells that cannot be
    estimated carry a non-"ok" status instead of aborting the run.
    """
    post = data.post_periods(config.cutover)
    if not post:
        raise ValueError(f"no periods at or after cutover {config.cutover!r}")
    outcomes = data.outcome_types
    discounts = [a for a in DISCOUNT_ARMS if (data.frame["arm"] == a).any()]
    strata = [s for s in STRATA if (data.frame["stratum"] == s).any()]

    hyper = {}
    for i_o, outcome in enumerate(outcomes):
        for i_d, discount in enumerate(discounts):
            for i_s, stratum in enumerate(strata):
                if config.n_moments is not None:
                    hyper[(outcome, discount, stratum)] = (
                        config.n_moments,
                        config.trim,
                        "fixed",
                    )
                    continue
                try:
                    report = tune_cell(
                        data, outcome, discount, stratum, config.cutover, config.grid
                    )
                    hyper[(outcome, discount, stratum)] = (
                        report.n_moments,
                        report.trim,
                        "tuned",
                    )
                except TuningError as exc:
                    hyper[(outcome, discount, stratum)] = (None, None, str(exc))

    rows = []
    for i_o, outcome in enumerate(outcomes):
        for i_p, period in enumerate(data.periods):
            if period not in post:
                continue
            for i_d, discount in enumerate(discounts):
                per_stratum = {}
                for i_s, stratum in enumerate(strata):
                    n_moments, trim, how = hyper[(outcome, discount, stratum)]
                    row = {
                        "outcome_type": outcome,
                        "period": period,
                        "discount": discount,
                        "stratum": stratum,
                        "n_moments": n_moments,
                        "trim_lo": None if trim is None else trim[0],
                        "trim_hi": None if trim is None else trim[1],
                    }
                    if n_moments is None:
                        rows.append({**_nan_effect(), **row, "status": how})
                        continue
                    t_vals = data.cell_values(outcome, period, discount, stratum)
                    c_vals = data.cell_values(outcome, period, "control", stratum)
                    if t_vals.size == 0 or c_vals.size == 0:
                        rows.append({**_nan_effect(), **row, "status": "empty"})
                        continue
                    seed = _cell_seed(config.seed, i_o, i_p, i_d, i_s)
                    try:
                        cell = estimate_effect_cell(
                            Sample(t_vals),
                            Sample(c_vals),
                            n_moments,
                            trim,
                            n_boot=config.n_boot,
                            seed=seed,
                        )
                    except (
                        DegenerateDesignError,
                        NonMonotoneFitError,
                        InferenceUnstableError,
                    ) as exc:
                        rows.append(
                            {**_nan_effect(), **row,
                             "status": f"{type(exc).__name__}: {exc}"}
                        )
                        continue
                    row.update(
                        delta=cell.delta,
                        delta_se=cell.delta_se,
                        dispersion=cell.dispersion,
                        dispersion_se=cell.dispersion_se,
                        j_pvalue=cell.j_pvalue,
                        control_mean=cell.control_mean,
                        n_treated=cell.n_treated,
                        n_control=cell.n_control,
                        status="ok",
                    )
                    per_stratum[stratum] = (cell, row)
                    rows.append(row)
                rows.append(
                    _combined_row(
                        data, outcome, period, discount, strata, per_stratum
                    )
                )
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def _nan_effect():
    return dict(
        delta=np.nan,
        delta_se=np.nan,
        dispersion=np.nan,
        dispersion_se=np.nan,
        j_pvalue=np.nan,
        control_mean=np.nan,
        n_treated=0,
        n_control=0,
    )


def _combined_row(data, outcome, period, discount, strata, per_stratum):
    """Aggregate stratum estimates with proportion weights.

    Proportions are stratum shares of the union of the control arm and
    the discount arm under analysis.
    """
    row = {
        "outcome_type": outcome,
        "period": period,
        "discount": discount,
        "stratum": "combined",
        "n_moments": None,
        "trim_lo": None,
        "trim_hi": None,
    }
    if len(per_stratum) < len(strata) or not per_stratum:
        return {**_nan_effect(), **row, "status": "unavailable"}
    sizes = np.array(
        [
            per_stratum[s][0].n_treated + per_stratum[s][0].n_control
            for s in strata
        ],
        dtype=float,
    )
    props = sizes / sizes.sum()
    cells = [per_stratum[s][0] for s in strata]
    delta, delta_se = aggregate_strata(
        [c.delta for c in cells], [c.delta_se for c in cells], props
    )
    disp, disp_se = aggregate_strata(
        [c.dispersion for c in cells], [c.dispersion_se for c in cells], props
    )
    pooled_control = data.cell_values(outcome, period, "control")
    row.update(
        delta=delta,
        delta_se=delta_se,
        dispersion=disp,
        dispersion_se=disp_se,
        j_pvalue=np.nan,
        control_mean=float(pooled_control.mean()) if pooled_control.size else np.nan,
        n_treated=int(sum(c.n_treated for c in cells)),
        n_control=int(sum(c.n_control for c in cells)),
        status="ok",
    )
    return row
