"""Simulation study comparing estimators on draws from a finite population.

Two disjoint samples are drawn without replacement and one is labelled
treated, so the true effect is zero by construction.  Each replication
runs a difference in means and the L-moment location estimator (with and
without upper-tail trimming), tuning the moment count on freshly drawn
placebo periods, and the study aggregates estimation error, coverage,
interval length, and overidentification rejections.

Replication streams are keyed by (seed, sample size, replicate), so
results are independent of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .estimators import GMLM
from .exceptions import (
    DataFormatError,
    DegenerateDesignError,
    InferenceUnstableError,
    NonMonotoneFitError,
    TuningError,
)
from .lmoments import Sample
from .tuning import HyperGrid, select_hyperparams

ESTIMATORS = ("diff_in_means", "gmlm", "gmlm_trim")

METRIC_COLUMNS = [
    "n_total",
    "estimator",
    "rmse",
    "mae",
    "coverage",
    "avg_ci_length",
    "j_rejection",
    "median_n_moments",
    "n_failed",
    "n_replications",
]


@dataclass(frozen=True)
class Population:
    """Finite list of positive outcomes that replications sample from."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("population must be nonempty")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("population values must be finite and positive")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def size(self) -> int:
        return self.values.size

    @classmethod
    def from_csv(cls, path) -> "Population":
        """One value per line; a single non-numeric first line is a header."""
        values = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip().strip(",")
                if not text:
                    continue
                try:
                    values.append(float(text))
                except ValueError:
                    if lineno == 1:
                        continue
                    raise DataFormatError(
                        f"{path}: line {lineno}: {text!r} is not a number"
                    ) from None
        if not values:
            raise DataFormatError(f"{path}: no numeric values")
        return cls(np.asarray(values))

    @classmethod
    def synthetic_mixture(
        cls,
        size: int = 20000,
        log_mean: float = 10.5,
        log_sd: float = 0.5,
        tail_log_mean: Optional[float] = None,
        tail_log_sd: float = 1.6,
        tail_weight: float = 0.05,
        seed: int = 0,
    ) -> "Population":
        """Heavy-tailed default population: a log-normal body with a small
        inflated-variance log-normal tail component."""
        if not 0.0 <= tail_weight < 1.0:
            raise ValueError("tail_weight must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        if tail_log_mean is None:
            tail_log_mean = log_mean
        in_tail = rng.random(size) < tail_weight
        out = np.where(
            in_tail,
            rng.lognormal(tail_log_mean, tail_log_sd, size),
            rng.lognormal(log_mean, log_sd, size),
        )
        return cls(out)


@dataclass
class McConfig:
    """Study settings; defaults mirror the standard protocol."""

    sample_sizes: Tuple[int, ...] = (500, 1000, 2000)
    n_replications: int = 1000
    n_pre_periods: int = 16
    ci_level: float = 0.95
    n_boot: int = 500
    seed: int = 0
    scale: str = "levels"
    estimators: Tuple[str, ...] = ESTIMATORS
    grid: HyperGrid = field(default_factory=HyperGrid)
    trim_upper: float = 0.98

    def __post_init__(self):
        if self.scale not in ("levels", "logs"):
            raise ValueError("scale must be 'levels' or 'logs'")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must be in (0, 1)")
        for n in self.sample_sizes:
            if n % 2 != 0:
                raise ValueError(f"sample sizes must be even, got {n}")
        if not 0.0 < self.trim_upper <= 1.0:
            raise ValueError("trim_upper must be in (0, 1]")

    def validate_against(self, population: Population):
        for n in self.sample_sizes:
            if n > population.size:
                raise ValueError(
                    f"sample size {n} exceeds population size {population.size}"
                )


def draw_two_samples(
    population: Population, n_total: int, rng: np.random.Generator
):
    """Two disjoint without-replacement samples of n_total/2 each."""
    if n_total % 2 != 0:
        raise ValueError("n_total must be even")
    if n_total > population.size:
        raise ValueError("n_total exceeds the population size")
    idx = rng.choice(population.size, size=n_total, replace=False)
    half = n_total // 2
    return Sample(population.values[idx[:half]]), Sample(population.values[idx[half:]])


@dataclass
class ReplicateRecord:
    estimate: float = np.nan
    se: float = np.nan
    covers: bool = False
    ci_length: float = np.nan
    j_reject: Optional[bool] = None
    n_moments: Optional[int] = None
    failed: bool = False
    error: str = ""


def _stream(config, n_total, replicate, *tags):
    return np.random.default_rng(
        np.random.SeedSequence((int(config.seed), int(n_total), int(replicate)) + tags)
    )


def _seed_int(config, n_total, replicate, tag):
    ss = np.random.SeedSequence(
        (int(config.seed), int(n_total), int(replicate), tag)
    )
    return int(ss.generate_state(1)[0])


def _maybe_log(sample: Sample, config: McConfig) -> Sample:
    if config.scale == "logs":
        return Sample(np.log(sample.values))
    return sample


def _diff_in_means(treated: Sample, control: Sample, z: float) -> ReplicateRecord:
    est = treated.mean() - control.mean()
    se = float(
        np.sqrt(treated.std() ** 2 / treated.n + control.std() ** 2 / control.n)
    )
    return ReplicateRecord(
        estimate=est,
        se=se,
        covers=abs(est) <= z * se,
        ci_length=2.0 * z * se,
    )


def _lmoment_location(
    population, treated, control, trim, config, n_total, replicate, tag
) -> ReplicateRecord:
    pairs = []
    for t in range(config.n_pre_periods):
        pre_rng = _stream(config, n_total, replicate, 1, t)
        a, b = draw_two_samples(population, n_total, pre_rng)
        pairs.append(
            (_maybe_log(a, config).values, _maybe_log(b, config).values)
        )
    report = select_hyperparams(pairs, config.grid, location_only=True)
    est = GMLM(
        model="location",
        n_moments=report.n_moments,
        trim=trim,
        weighting="optimal",
        n_boot=config.n_boot,
        random_state=_seed_int(config, n_total, replicate, tag),
    ).fit_samples(treated, control)
    z = stats.norm.ppf(0.5 + config.ci_level / 2.0)
    se = float(np.sqrt(est.covariance_[0, 0]))
    return ReplicateRecord(
        estimate=est.alpha_,
        se=se,
        covers=abs(est.alpha_) <= z * se,
        ci_length=2.0 * z * se,
        j_reject=bool(est.j_pvalue_ < 0.05),
        n_moments=report.n_moments,
    )


def run_replication(
    population: Population, n_total: int, config: McConfig, replicate: int
):
    """One replication; returns a dict keyed by estimator name."""
    treated, control = draw_two_samples(
        population, n_total, _stream(config, n_total, replicate, 0)
    )
    treated, control = _maybe_log(treated, config), _maybe_log(control, config)
    z = stats.norm.ppf(0.5 + config.ci_level / 2.0)

    records = {}
    for name in config.estimators:
        if name == "diff_in_means":
            records[name] = _diff_in_means(treated, control, z)
            continue
        trim = (0.0, 1.0) if name == "gmlm" else (0.0, config.trim_upper)
        tag = 2 if name == "gmlm" else 3
        try:
            records[name] = _lmoment_location(
                population, treated, control, trim, config, n_total, replicate, tag
            )
        except (
            DegenerateDesignError,
            NonMonotoneFitError,
            InferenceUnstableError,
            TuningError,
        ) as exc:
            records[name] = ReplicateRecord(failed=True, error=str(exc))
    return records


def run_study(population: Population, config: McConfig) -> pd.DataFrame:
    """Full study: every sample size, every replication, aggregated.

    The true effect is zero, so rmse and mae are taken around zero;
    coverage is the share of intervals containing zero.  Deterministic
    given the seed.
    """
    config.validate_against(population)
    rows = []
    for n_total in config.sample_sizes:
        per_estimator = {name: [] for name in config.estimators}
        for replicate in range(config.n_replications):
            records = run_replication(population, n_total, config, replicate)
            for name, record in records.items():
                per_estimator[name].append(record)
        for name in config.estimators:
            rows.append(_summarise(n_total, name, per_estimator[name]))
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def _summarise(n_total, name, records):
    ok = [r for r in records if not r.failed]
    estimates = np.array([r.estimate for r in ok])
    row = {
        "n_total": n_total,
        "estimator": name,
        "n_failed": len(records) - len(ok),
        "n_replications": len(records),
    }
    if not ok:
        row.update(
            rmse=np.nan,
            mae=np.nan,
            coverage=np.nan,
            avg_ci_length=np.nan,
            j_rejection=np.nan,
            median_n_moments=np.nan,
        )
        return row
    rejects = [r.j_reject for r in ok if r.j_reject is not None]
    orders = [r.n_moments for r in ok if r.n_moments is not None]
    row.update(
        rmse=float(np.sqrt(np.mean(estimates**2))),
        mae=float(np.mean(np.abs(estimates))),
        coverage=float(np.mean([r.covers for r in ok])),
        avg_ci_length=float(np.mean([r.ci_length for r in ok])),
        j_rejection=float(np.mean(rejects)) if rejects else np.nan,
        median_n_moments=float(np.median(orders)) if orders else np.nan,
    )
    return row
