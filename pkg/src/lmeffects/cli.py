"""Command-line interface.

Subcommands: ``lmoments``, ``fit``, ``panel``, ``tune``, ``mc``,
``decompose``.  Exit codes: 0 success, 1 usage error, 2 malformed input
data, 3 numerical failure.  Randomised subcommands print the effective
seed; re-running with it reproduces the output byte for byte.  Text
output rounds to 6 significant digits; JSON output carries full
precision of the same numbers.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .decomposition import (
    BundleTech,
    CalibrationParams,
    QualityPrior,
    backout_lambda,
    biweekly_rate,
    calibrate_bundle_tech,
    direct_price_effect,
    learning_share,
)
from .estimators import GMLM
from .exceptions import (
    DataFormatError,
    DegenerateDesignError,
    DegeneratePriorError,
    InferenceUnstableError,
    NonMonotoneFitError,
    TuningError,
)
from .lmoments import Sample, lmoments
from .montecarlo import ESTIMATORS, McConfig, Population, run_study
from .panel import RESULT_COLUMNS, PanelConfig, analyze_panel, parse_panel_csv, tune_cell
from .tuning import HyperGrid

#: default seed for every randomised subcommand, for reproducibility
DEFAULT_SEED = 1729

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    DegenerateDesignError,
    NonMonotoneFitError,
    InferenceUnstableError,
    TuningError,
    DegeneratePriorError,
    np.linalg.LinAlgError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _read_values(path):
    """One value per line; a non-numeric first line is taken as a header."""
    values = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc.strerror}") from None
    with fh:
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
    return np.asarray(values)


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from None


def _jsonable(value):
    """Plain-python view of a value; NaN becomes null."""
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return format(float(value), ".6g")
    return str(value)


def _render_table(rows, columns):
    cells = [[_fmt(row.get(c)) for c in columns] for row in rows]
    widths = [
        max(len(col), *(len(r[i]) for r in cells)) if cells else len(col)
        for i, col in enumerate(columns)
    ]
    lines = ["  ".join(col.ljust(w) for col, w in zip(columns, widths)).rstrip()]
    for r in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines)


def _render_kv(pairs):
    return "\n".join(f"{key}: {_fmt(value)}" for key, value in pairs)


def _emit(args, text, payload):
    out = text if args.format == "table" else json.dumps(_jsonable(payload), indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    else:
        print(out)


def _add_common(parser, seeded=True):
    parser.add_argument(
        "--format", choices=("table", "json"), default="table",
        help="output format (default: table)",
    )
    parser.add_argument("--output", help="write output to this path instead of stdout")
    if seeded:
        parser.add_argument(
            "--seed", type=int, default=DEFAULT_SEED,
            help=f"bootstrap seed (default: {DEFAULT_SEED})",
        )


def _add_trim(parser):
    parser.add_argument("--trim-lo", type=float, default=0.0,
                        help="lower trimming probability (default: 0)")
    parser.add_argument("--trim-hi", type=float, default=1.0,
                        help="upper trimming probability (default: 1)")


def _cmd_lmoments(args):
    values = _read_values(args.input)
    trim = (args.trim_lo, args.trim_hi)
    result = lmoments(Sample(values), args.n_moments, trim)
    rows = [{"order": r + 1, "lmoment": val} for r, val in enumerate(result)]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "lmoments",
        "n": int(values.size),
        "n_moments": args.n_moments,
        "trim": list(trim),
        "lmoments": list(result),
    }
    _emit(args, _render_table(rows, ["order", "lmoment"]), payload)
    return EXIT_OK


def _cmd_fit(args):
    treated = Sample(_read_values(args.treated))
    control = Sample(_read_values(args.control))
    est = GMLM(
        model=args.model,
        n_moments=args.n_moments,
        trim=(args.trim_lo, args.trim_hi),
        weighting=args.weighting,
        n_boot=args.boot,
        random_state=args.seed,
    ).fit_samples(treated, control)
    ses = (
        np.sqrt(np.diag(est.covariance_)).tolist()
        if est.covariance_ is not None
        else None
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "seed": args.seed,
        "model": args.model,
        "weighting": args.weighting,
        "n_moments": args.n_moments,
        "trim": [args.trim_lo, args.trim_hi],
        "n_treated": est.n_treated_,
        "n_control": est.n_control_,
        "alpha": est.alpha_,
        "sigma": est.sigma_,
        "theta": list(est.theta_),
        "se": ses,
        "j_stat": est.j_stat_,
        "df": est.df_,
        "j_pvalue": est.j_pvalue_,
        "converged": bool(est.converged_),
    }
    pairs = [
        ("seed", args.seed),
        ("model", args.model),
        ("n_treated", est.n_treated_),
        ("n_control", est.n_control_),
        ("alpha", est.alpha_),
        ("sigma", est.sigma_),
    ]
    if ses is not None:
        pairs.append(("alpha_se", ses[0]))
        if len(ses) > 1:
            pairs.append(("sigma_se", ses[1]))
    pairs += [
        ("j_stat", est.j_stat_),
        ("df", est.df_),
        ("j_pvalue", est.j_pvalue_),
        ("converged", est.converged_),
    ]
    _emit(args, _render_kv(pairs), payload)
    return EXIT_OK


def _cmd_panel(args):
    data = parse_panel_csv(args.input)
    orders = tuple(range(args.min_order, args.max_order + 1))
    config = PanelConfig(
        cutover=args.cutover,
        n_moments=args.n_moments,
        grid=HyperGrid(orders=orders),
        trim=(args.trim_lo, args.trim_hi),
        n_boot=args.boot,
        seed=args.seed,
    )
    table = analyze_panel(data, config)
    rows = table.to_dict("records")
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "panel",
        "seed": args.seed,
        "cutover": args.cutover,
        "n_moments": args.n_moments,
        "rows": rows,
    }
    text = f"seed: {args.seed}\n" + _render_table(rows, RESULT_COLUMNS)
    _emit(args, text, payload)
    return EXIT_OK


def _cmd_tune(args):
    data = parse_panel_csv(args.input)
    orders = tuple(range(args.min_order, args.max_order + 1))
    report = tune_cell(
        data,
        args.outcome,
        args.discount,
        args.stratum,
        args.cutover,
        HyperGrid(orders=orders),
    )
    grid_rows = []
    for (order, trim), values in report.criteria.items():
        grid_rows.append(
            {
                "n_moments": order,
                "trim_lo": trim[0],
                "trim_hi": trim[1],
                "feasible": values is not None,
                "criterion": None if values is None else float(np.mean(values)),
                "per_period": None if values is None else list(values),
            }
        )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "tune",
        "cell": {
            "outcome_type": args.outcome,
            "discount": args.discount,
            "stratum": args.stratum,
        },
        "cutover": args.cutover,
        "chosen_n_moments": report.n_moments,
        "chosen_trim": list(report.trim),
        "best_value": report.best_value,
        "n_pre_periods": report.n_pre_periods,
        "grid": grid_rows,
    }
    text = (
        _render_kv(
            [
                ("chosen_n_moments", report.n_moments),
                ("chosen_trim", f"({report.trim[0]:g}, {report.trim[1]:g})"),
                ("best_value", report.best_value),
                ("n_pre_periods", report.n_pre_periods),
            ]
        )
        + "\n"
        + _render_table(
            grid_rows, ["n_moments", "trim_lo", "trim_hi", "feasible", "criterion"]
        )
    )
    _emit(args, text, payload)
    return EXIT_OK


def _population_from_config(raw, default_seed):
    spec = raw.get("population", {"synthetic": {}})
    if "csv" in spec:
        return Population.from_csv(spec["csv"])
    if "synthetic" in spec:
        params = dict(spec["synthetic"])
        params.setdefault("seed", default_seed)
        try:
            return Population.synthetic_mixture(**params)
        except TypeError as exc:
            raise DataFormatError(f"invalid synthetic population spec: {exc}") from None
    raise DataFormatError("population spec needs a 'csv' path or 'synthetic' params")


def _cmd_mc(args):
    raw = _load_json(args.config)
    seed = args.seed if args.seed is not None else int(raw.get("seed", DEFAULT_SEED))
    population = _population_from_config(raw, seed)
    lo, hi = raw.get("grid_orders", [2, 16])
    try:
        config = McConfig(
            sample_sizes=tuple(raw.get("sample_sizes", [500, 1000, 2000])),
            n_replications=int(raw.get("replications", 1000)),
            n_pre_periods=int(raw.get("pre_periods", 16)),
            ci_level=float(raw.get("ci_level", 0.95)),
            n_boot=int(raw.get("bootstrap", 500)),
            seed=seed,
            scale=raw.get("scale", "levels"),
            estimators=tuple(raw.get("estimators", list(ESTIMATORS))),
            grid=HyperGrid(orders=tuple(range(int(lo), int(hi) + 1))),
            trim_upper=float(raw.get("trim_upper", 0.98)),
        )
        config.validate_against(population)
    except (ValueError, TypeError) as exc:
        raise DataFormatError(f"{args.config}: {exc}") from None
    table = run_study(population, config)
    rows = table.to_dict("records")
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "mc",
        "seed": seed,
        "scale": config.scale,
        "population_size": population.size,
        "replications": config.n_replications,
        "rows": rows,
    }
    columns = [
        "n_total", "estimator", "rmse", "mae", "coverage",
        "avg_ci_length", "j_rejection", "median_n_moments", "n_failed",
    ]
    text = f"seed: {seed}\n" + _render_table(rows, columns)
    _emit(args, text, payload)
    return EXIT_OK


def _decompose_units(raw, rate):
    units = raw.get("units")
    if units is None:
        if "lambda" not in raw:
            raise DataFormatError(
                "decompose config needs per-unit records or a top-level 'lambda'"
            )
        units = [{"id": "all", "lambda": raw["lambda"]}]
    out = []
    for i, unit in enumerate(units):
        uid = str(unit.get("id", i))
        if "lambda" in unit:
            lam = float(unit["lambda"])
        elif "income" in unit and "target" in unit:
            lam = backout_lambda(float(unit["income"]), rate, float(unit["target"]))
        else:
            raise DataFormatError(
                f"unit {uid!r} needs 'lambda' or both 'income' and 'target'"
            )
        out.append((uid, lam))
    return out


def _cmd_decompose(args):
    raw = _load_json(args.config)
    try:
        prior = QualityPrior(**raw["prior"])
        if "tech" in raw:
            tech = BundleTech(**raw["tech"])
        else:
            tech = calibrate_bundle_tech(**raw["tech_moments"])
        price_change = float(raw["price_change"])
        total_effect = float(raw["total_effect"])
    except KeyError as exc:
        raise DataFormatError(f"{args.config}: missing field {exc}") from None
    except TypeError as exc:
        raise DataFormatError(f"{args.config}: {exc}") from None
    rate = biweekly_rate(float(raw.get("annual_rate", 0.04)))
    units = _decompose_units(raw, rate)

    rows = []
    for uid, lam in units:
        params = CalibrationParams(prior, tech, lam, price_change)
        direct = float(direct_price_effect(params)[1])
        rows.append(
            {
                "unit": uid,
                "lambda": lam,
                "direct_effect": direct,
                "learning_share": learning_share(total_effect, direct),
            }
        )
    mean_direct = float(np.mean([r["direct_effect"] for r in rows]))
    aggregate = {
        "mean_lambda": float(np.mean([r["lambda"] for r in rows])),
        "mean_direct_effect": mean_direct,
        "total_effect": total_effect,
        "learning_share": learning_share(total_effect, mean_direct),
    }
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "decompose",
        "prior": {"mu": prior.mu, "sigma2": prior.sigma2},
        "tech": {"gamma": tech.gamma, "phi": tech.phi},
        "price_change": price_change,
        "units": rows,
        "aggregate": aggregate,
    }
    text = (
        _render_table(rows, ["unit", "lambda", "direct_effect", "learning_share"])
        + "\n"
        + _render_kv(sorted(aggregate.items()))
    )
    _emit(args, text, payload)
    return EXIT_OK


def build_parser():
    parser = _Parser(
        prog="lmeffects",
        description="Treatment effects on heavy-tailed outcomes via L-moments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lmoments", help="sample L-moments of a value file")
    p.add_argument("--input", required=True, help="CSV with one value per line")
    p.add_argument("--n-moments", "--R", dest="n_moments", type=int, default=4)
    _add_trim(p)
    _add_common(p, seeded=False)
    p.set_defaults(func=_cmd_lmoments)

    p = sub.add_parser("fit", help="fit the transformation model to two samples")
    p.add_argument("--treated", required=True, help="CSV of treated outcomes")
    p.add_argument("--control", required=True, help="CSV of control outcomes")
    p.add_argument("--n-moments", "--R", dest="n_moments", type=int, default=8)
    p.add_argument("--model", choices=("location-scale", "location"),
                   default="location-scale")
    p.add_argument("--weighting", choices=("optimal", "identity"), default="optimal")
    p.add_argument("--boot", type=int, default=500,
                   help="bootstrap replicates (default: 500)")
    _add_trim(p)
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("panel", help="analyse a panel experiment CSV")
    p.add_argument("--input", required=True, help="long-format panel CSV")
    p.add_argument("--cutover", required=True,
                   help="first treated period label; earlier periods are pre-treatment")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--n-moments", "--R", dest="n_moments", type=int, default=None,
                       help="fixed moment count (default: tune on pre-periods)")
    group.add_argument("--tune", action="store_true",
                       help="tune the moment count per cell (default)")
    p.add_argument("--min-order", type=int, default=2)
    p.add_argument("--max-order", type=int, default=16)
    p.add_argument("--boot", type=int, default=500)
    _add_trim(p)
    _add_common(p)
    p.set_defaults(func=_cmd_panel)

    p = sub.add_parser("tune", help="placebo-tune hyperparameters for one cell")
    p.add_argument("--input", required=True)
    p.add_argument("--cutover", required=True)
    p.add_argument("--outcome", required=True,
                   choices=("integrated", "nonintegrated"))
    p.add_argument("--discount", required=True, choices=("d20", "d50"))
    p.add_argument("--stratum", required=True, choices=("user", "nonuser"))
    p.add_argument("--min-order", type=int, default=2)
    p.add_argument("--max-order", type=int, default=16)
    _add_common(p, seeded=False)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("mc", help="run the estimator-comparison simulation study")
    p.add_argument("--config", required=True, help="study config JSON")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_mc)

    p = sub.add_parser("decompose",
                       help="split a total effect into direct and learning parts")
    p.add_argument("--config", required=True, help="calibration JSON")
    _add_common(p, seeded=False)
    p.set_defaults(func=_cmd_decompose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"lmeffects: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"lmeffects: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"lmeffects: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
