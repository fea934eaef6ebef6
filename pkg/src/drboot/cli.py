"""Batch command line: `estimate` on a CSV, `simulate` for the study grid.

Exit status: 0 when every requested target (or grid cell) produced at
least one successful method result, 1 when the run completed but some
target came back empty, 2 for configuration and data errors. Errors are
reported as one JSON object on stderr so callers can parse them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import ALL_METHODS, full_analysis
from .dgp import CONSTANT, HETEROGENEOUS, MODEL_BETAS
from .errors import DataError, EstimationError
from .io import (
    AnalysisConfig,
    OUTCOME_TRANSFORMS,
    apply_outcome_transform,
    config_as_dict,
    load_config_file,
    load_csv,
    write_diagnostics_csv,
    write_ess_csv,
    write_estimates_csv,
    write_failures_csv,
    write_manifest,
    write_metrics_csv,
    write_propensity_csv,
    write_truth_csv,
)
from .montecarlo import run_monte_carlo, standard_grid
from .weighting import Estimand

OUTPUT_DIR_ENV = "DRBOOT_OUTPUT_DIR"

DESK_M, DESK_R = 200, 500
PAPER_M, PAPER_R = 1000, 1000

_EFFECT_ALIASES = {
    "constant": CONSTANT,
    "heterogeneous": HETEROGENEOUS,
    "both": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drboot",
        description=(
            "Doubly robust ATT/ATC estimation with sandwich, wild "
            "bootstrap, and resampling variance estimators."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser(
        "estimate", help="analyze one CSV dataset and write report files"
    )
    est.add_argument("--data", help="input CSV path")
    est.add_argument("--outcome", help="outcome column name")
    est.add_argument("--treatment", help="binary treatment column name")
    est.add_argument(
        "--ps-columns", help="comma-separated propensity model columns"
    )
    est.add_argument(
        "--or-columns", help="comma-separated outcome model columns"
    )
    est.add_argument(
        "--estimands",
        help="comma-separated subset of ATT,ATC,ATE (default ATT,ATC)",
    )
    est.add_argument(
        "--methods",
        help=f"comma-separated subset of {','.join(ALL_METHODS)}",
    )
    est.add_argument("-R", type=int, dest="R", help="bootstrap replicates")
    est.add_argument("--alpha", type=float, help="two-sided CI level")
    est.add_argument("--seed", type=int, help="master seed")
    est.add_argument(
        "--outcome-transform",
        choices=OUTCOME_TRANSFORMS,
        help="transform applied to the outcome before estimation",
    )
    est.add_argument("--output-dir", help="report directory")
    est.add_argument("--config", help="flat TOML config file; flags win")

    sim = sub.add_parser(
        "simulate", help="run the Monte Carlo study grid and write reports"
    )
    sim.add_argument(
        "--models",
        help=f"comma-separated model ids from {','.join(MODEL_BETAS)}",
    )
    sim.add_argument(
        "--effects",
        help="constant, heterogeneous, or both (default heterogeneous)",
    )
    sim.add_argument("-M", type=int, dest="M", help="simulation replicates")
    sim.add_argument("-R", type=int, dest="R", help="bootstrap replicates")
    sim.add_argument("-N", type=int, dest="N", help="sample size override")
    sim.add_argument(
        "--paper-scale",
        action="store_true",
        default=None,
        help=f"use M={PAPER_M}, R={PAPER_R} instead of desk defaults",
    )
    sim.add_argument("--alpha", type=float, help="two-sided CI level")
    sim.add_argument("--seed", type=int, help="master seed")
    sim.add_argument("--workers", type=int, help="parallel processes")
    sim.add_argument("--output-dir", help="report directory")
    sim.add_argument("--config", help="flat TOML config file; flags win")
    return parser


def _merged(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    """File values under flag values; flags win whenever given."""
    values: dict = {}
    if getattr(args, "config", None):
        file_values = load_config_file(args.config)
        unknown = set(file_values) - set(keys)
        if unknown:
            raise DataError(
                f"{args.config}: unknown config key(s): {sorted(unknown)}"
            )
        values.update(file_values)
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _split(value, what: str) -> tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        items = [str(v).strip() for v in value]
    else:
        items = [part.strip() for part in str(value).split(",")]
    items = [part for part in items if part]
    if not items:
        raise DataError(f"no {what} given")
    return tuple(items)


def _fail(err: BaseException, code: int) -> int:
    payload = {"error": type(err).__name__, "message": str(err)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _output_dir(value) -> Path:
    if value is None:
        value = os.environ.get(OUTPUT_DIR_ENV, ".")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_estimate(args: argparse.Namespace) -> int:
    keys = (
        "data", "outcome", "treatment", "ps_columns", "or_columns",
        "estimands", "methods", "R", "alpha", "seed", "outcome_transform",
        "output_dir",
    )
    values = _merged(args, keys)
    for required in ("data", "outcome", "treatment", "ps_columns",
                     "or_columns"):
        if required not in values:
            raise DataError(f"missing required setting: {required}")

    out_dir = _output_dir(values.get("output_dir"))
    config = AnalysisConfig(
        data_path=str(values["data"]),
        outcome_column=str(values["outcome"]),
        treatment_column=str(values["treatment"]),
        ps_columns=_split(values["ps_columns"], "propensity columns"),
        or_columns=_split(values["or_columns"], "outcome columns"),
        estimands=tuple(
            Estimand[name.upper()]
            for name in _split(values.get("estimands", "ATT,ATC"),
                               "estimands")
        ),
        methods=_split(values.get("methods", ",".join(ALL_METHODS)),
                       "methods"),
        R=int(values.get("R", 1000)),
        alpha=float(values.get("alpha", 0.05)),
        seed=int(values.get("seed", 0)),
        output_dir=str(out_dir),
        outcome_transform=str(values.get("outcome_transform", "none")),
    )

    dataset = load_csv(config.data_path, config)
    dataset = apply_outcome_transform(dataset, config.outcome_transform)
    result = full_analysis(
        dataset,
        ps_columns=config.ps_columns,
        or_columns=config.or_columns,
        estimands=config.estimands,
        methods=config.methods,
        R=config.R,
        alpha=config.alpha,
        seed=config.seed,
    )

    write_estimates_csv(out_dir / "estimates.csv", result)
    write_diagnostics_csv(out_dir / "diagnostics.csv", result)
    # the manifest lives in the output directory; echoing that directory's
    # path would make byte-level replay comparison location-dependent
    config_echo = config_as_dict(config)
    del config_echo["output_dir"]
    write_manifest(
        out_dir / "manifest.json",
        "estimate",
        config_echo,
        extra={
            "n": result.n,
            "n_treated": result.n_treated,
            "n_control": result.n_control,
        },
    )
    for name in ("estimates.csv", "diagnostics.csv", "manifest.json"):
        print(out_dir / name)

    all_served = all(
        any(np.isfinite(m.se) for m in report.methods.values())
        for report in result.reports
    )
    return 0 if all_served else 1


def _run_simulate(args: argparse.Namespace) -> int:
    keys = (
        "models", "effects", "M", "R", "N", "paper_scale", "alpha", "seed",
        "workers", "output_dir",
    )
    values = _merged(args, keys)

    model_ids = _split(values.get("models", "2"), "model ids")
    effect_request = str(values.get("effects", "heterogeneous")).lower()
    if effect_request.strip() == "both":
        effects: tuple[str, ...] = (CONSTANT, HETEROGENEOUS)
    else:
        effects = tuple(
            _effect_name(part) for part in _split(effect_request, "effects")
        )

    paper_scale = bool(values.get("paper_scale", False))
    M = int(values.get("M", PAPER_M if paper_scale else DESK_M))
    R = int(values.get("R", PAPER_R if paper_scale else DESK_R))
    N = values.get("N")
    seed = int(values.get("seed", 0))
    alpha = float(values.get("alpha", 0.05))
    workers = int(values.get("workers", 1))
    out_dir = _output_dir(values.get("output_dir"))

    cells = []
    for model_id in model_ids:
        for effect in effects:
            cells.extend(
                standard_grid(model_id, effect,
                              N=None if N is None else int(N))
            )
    result = run_monte_carlo(
        cells, M=M, R=R, master_seed=seed, alpha=alpha, workers=workers
    )

    written = []
    for model_id in model_ids:
        for effect in effects:
            rows = [
                m for m in result.metrics
                if m.model_id == model_id and m.effect == effect
            ]
            subset = _subset_result(result, rows)
            name = f"metrics_model{model_id}_{effect}.csv"
            write_metrics_csv(out_dir / name, subset)
            written.append(name)
    write_failures_csv(out_dir / "failures.csv", result)
    write_truth_csv(out_dir / "truths.csv", result)
    write_ess_csv(out_dir / "ess.csv", result)
    write_propensity_csv(out_dir / "propensity_by_arm.csv", result)
    written += ["failures.csv", "truths.csv", "ess.csv",
                "propensity_by_arm.csv"]

    config_echo = {
        "models": list(model_ids),
        "effects": list(effects),
        "M": M,
        "R": R,
        "N": None if N is None else int(N),
        "alpha": alpha,
        "seed": seed,
        "paper_scale": paper_scale,
    }
    write_manifest(out_dir / "manifest.json", "simulate", config_echo)
    written.append("manifest.json")
    for name in written:
        print(out_dir / name)

    served: dict[tuple, bool] = {}
    for m in result.metrics:
        key = (m.model_id, m.effect, m.spec_cell)
        served[key] = served.get(key, False) or m.n_used > 0
    return 0 if served and all(served.values()) else 1


def _effect_name(value: str) -> str:
    name = _EFFECT_ALIASES.get(value.strip().lower(), value.strip().lower())
    if name not in (CONSTANT, HETEROGENEOUS):
        raise DataError(f"unknown effect kind {value!r}")
    return name


def _subset_result(result, rows):
    # lightweight view for the per-file writer; other fields unused there
    import dataclasses as _dc

    return _dc.replace(result, metrics=tuple(rows))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return _run_estimate(args)
        return _run_simulate(args)
    except (DataError, ValueError) as err:
        return _fail(err, 2)
    except EstimationError as err:
        return _fail(err, 2)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
