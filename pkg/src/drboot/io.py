"""CSV ingestion, report writing, and configuration plumbing.

Everything written here is locale-independent by construction: dot decimal
separator, LF line endings, fixed column orders, and 6-significant-digit
numeric formatting in CSV bodies. The run manifest keeps full precision.
Nothing in any report file depends on wall-clock time or worker count, so
a replay with the same seed is byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from . import __version__
from .analysis import ALL_METHODS, AnalysisResult
from .dataset import Dataset
from .errors import DataError, MissingColumn, NonBinaryTreatment, ParseError
from .montecarlo import MonteCarloResult
from .weighting import Estimand

OUTCOME_TRANSFORMS = ("none", "log")

# values treated as missing when they appear in a used column
_MISSING_TOKENS = {"", "na", "nan", "null", "none", "n/a", "."}


@dataclass(frozen=True)
class AnalysisConfig:
    """Everything one `estimate` run needs, echoed verbatim in the manifest."""

    data_path: str
    outcome_column: str
    treatment_column: str
    ps_columns: tuple[str, ...]
    or_columns: tuple[str, ...]
    estimands: tuple[Estimand, ...] = (Estimand.ATT, Estimand.ATC)
    methods: tuple[str, ...] = ALL_METHODS
    R: int = 1000
    alpha: float = 0.05
    seed: int = 0
    output_dir: str = "."
    outcome_transform: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "ps_columns", tuple(self.ps_columns))
        object.__setattr__(self, "or_columns", tuple(self.or_columns))
        object.__setattr__(
            self, "estimands", tuple(_as_estimand(e) for e in self.estimands)
        )
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.ps_columns or not self.or_columns:
            raise ValueError("ps_columns and or_columns must be non-empty")
        if not self.estimands:
            raise ValueError("at least one estimand is required")
        if len(set(self.estimands)) != len(self.estimands):
            raise ValueError("duplicate estimands")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not self.methods:
            raise ValueError("at least one method is required")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be strictly between 0 and 1")
        if self.R < 2:
            raise ValueError("R must be at least 2")
        if self.outcome_transform not in OUTCOME_TRANSFORMS:
            raise ValueError(
                f"outcome_transform must be one of {OUTCOME_TRANSFORMS}"
            )
        if self.outcome_column == self.treatment_column:
            raise ValueError("outcome and treatment columns must differ")

    @property
    def used_columns(self) -> tuple[str, ...]:
        """Column names the loader must find: ordered, without duplicates."""
        seen: dict[str, None] = {}
        for name in (
            (self.treatment_column, self.outcome_column)
            + self.ps_columns
            + self.or_columns
        ):
            seen.setdefault(name, None)
        return tuple(seen)


def _as_estimand(value) -> Estimand:
    if isinstance(value, Estimand):
        return value
    return Estimand[str(value).upper()]


def load_csv(path: Union[str, Path], config: AnalysisConfig) -> Dataset:
    """Read a CSV into a typed Dataset, validating only the used columns.

    Missing or unparsable values are rejected with the file line number
    (header is line 1) and column name. Treatment values must parse to
    exactly 0 or 1.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path}: file is empty or has no header row")
    except pd.errors.ParserError as err:
        raise ParseError(f"{path}: {err}")

    missing = [c for c in config.used_columns if c not in frame.columns]
    if missing:
        raise MissingColumn(
            f"{path}: column(s) not found: {', '.join(missing)}"
        )
    if len(frame) == 0:
        raise ParseError(f"{path}: no data rows")

    parsed: dict[str, np.ndarray] = {}
    for name in config.used_columns:
        raw = frame[name].str.strip()
        blank = raw.str.lower().isin(_MISSING_TOKENS)
        if blank.any():
            raise ParseError(
                f"{path}: missing value(s) in column {name!r} at "
                f"line(s) {_line_list(blank)}"
            )
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna()
        if bad.any():
            first = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(
                f"{path}: cannot parse {raw.iloc[first]!r} in column "
                f"{name!r} at line {first + 2}"
            )
        column = values.to_numpy(dtype=float)
        if not np.all(np.isfinite(column)):
            raise ParseError(
                f"{path}: non-finite value(s) in column {name!r} at "
                f"line(s) {_line_list(pd.Series(~np.isfinite(column)))}"
            )
        parsed[name] = column

    z = parsed[config.treatment_column]
    nonbinary = ~((z == 0.0) | (z == 1.0))
    if nonbinary.any():
        first = int(np.flatnonzero(nonbinary)[0])
        raise NonBinaryTreatment(
            f"{path}: treatment column {config.treatment_column!r} has "
            f"value {frame[config.treatment_column].iloc[first]!r} at "
            f"line {first + 2}; expected 0 or 1"
        )

    y = parsed[config.outcome_column]
    covariates = {
        name: parsed[name]
        for name in config.used_columns
        if name not in (config.treatment_column, config.outcome_column)
    }
    return Dataset(z=z, y=y, columns=covariates)


def _line_list(mask: pd.Series, cap: int = 8) -> str:
    # +2: one for the header line, one for 1-based numbering
    lines = [str(int(i) + 2) for i in np.flatnonzero(mask.to_numpy())]
    if len(lines) > cap:
        return ", ".join(lines[:cap]) + f", ... ({len(lines)} total)"
    return ", ".join(lines)


def apply_outcome_transform(dataset: Dataset, transform: str) -> Dataset:
    if transform == "none":
        return dataset
    if transform != "log":
        raise ValueError(f"unknown outcome transform {transform!r}")
    if np.any(dataset.y <= 0.0):
        first = int(np.flatnonzero(dataset.y <= 0.0)[0])
        raise DataError(
            f"log outcome transform requires positive outcomes; "
            f"data row {first + 1} has y = {dataset.y[first]:g}"
        )
    return Dataset(z=dataset.z, y=np.log(dataset.y), columns=dataset.columns)


# ---------------------------------------------------------------------------
# report writers


def format_number(value) -> str:
    """Fixed CSV number format: 6 significant digits, NA for missing."""
    if value is None:
        return "NA"
    value = float(value)
    if np.isnan(value):
        return "NA"
    return f"{value:.6g}"


def _write_rows(path: Path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", newline="\n")


def write_estimates_csv(path: Union[str, Path], result: AnalysisResult) -> None:
    header = [
        "estimand", "method", "estimate", "se", "ci_low", "ci_high", "p_value",
    ]
    rows = []
    for report in result.reports:
        for method in report.methods.values():
            rows.append([
                report.estimand.name,
                method.method,
                format_number(report.estimate),
                format_number(method.se),
                format_number(method.ci_low),
                format_number(method.ci_high),
                format_number(method.p_value),
            ])
    _write_rows(Path(path), header, rows)


def write_diagnostics_csv(
    path: Union[str, Path], result: AnalysisResult
) -> None:
    """Long-format diagnostics: arm counts, ESS table, inflation, balance."""
    header = ["section", "estimand", "name", "value"]
    rows = [
        ["counts", "", "n", str(result.n)],
        ["counts", "", "n_treated", str(result.n_treated)],
        ["counts", "", "n_control", str(result.n_control)],
    ]
    for report in result.reports:
        if report.diagnostics is None:
            continue
        ess = report.diagnostics.ess
        tag = report.estimand.name
        rows.append(["ess", tag, "ess_treated", format_number(ess.ess_treated)])
        rows.append(["ess", tag, "ess_control", format_number(ess.ess_control)])
        rows.append(["ess", tag, "ess_target", format_number(ess.ess)])
        rows.append(
            ["ess", tag, "design_effect", format_number(ess.design_effect)]
        )
        rows.append([
            "vi", tag, "variance_inflation",
            format_number(report.diagnostics.variance_inflation),
        ])
        for smd in report.diagnostics.smd_table:
            rows.append(
                ["smd_unweighted", tag, smd.name, format_number(smd.unweighted)]
            )
            rows.append(
                ["smd_weighted", tag, smd.name, format_number(smd.weighted)]
            )
            rows.append(["smd_flag", tag, smd.name, str(int(smd.flagged))])
    _write_rows(Path(path), header, rows)


def write_metrics_csv(path: Union[str, Path], result: MonteCarloResult) -> None:
    header = [
        "spec_cell", "estimand", "method", "bias_pct", "rmse", "se_median",
        "esd", "re_median", "cp", "n_used", "n_failures", "truth",
    ]
    rows = []
    for m in result.metrics:
        rows.append([
            m.spec_cell,
            m.estimand.name,
            m.method,
            format_number(m.bias_pct),
            format_number(m.rmse),
            format_number(m.se_median),
            format_number(m.esd),
            format_number(m.re_median),
            format_number(m.cp),
            str(m.n_used),
            str(m.n_failures),
            format_number(m.truth),
        ])
    _write_rows(Path(path), header, rows)


def write_failures_csv(
    path: Union[str, Path], result: MonteCarloResult
) -> None:
    header = [
        "model", "effect", "spec_cell", "estimand", "stage", "reason", "count",
    ]
    rows = []
    for f in result.failures:
        rows.append([
            f.model_id,
            f.effect,
            f.spec_cell,
            "" if f.estimand is None else f.estimand.name,
            f.stage,
            f.reason,
            str(f.count),
        ])
    _write_rows(Path(path), header, rows)


def write_truth_csv(path: Union[str, Path], result: MonteCarloResult) -> None:
    header = [
        "model", "effect", "estimand", "truth", "mc_se", "superpop_size",
    ]
    rows = []
    for t in result.truths:
        rows.append([
            t.model_id,
            t.effect,
            t.estimand.name,
            format_number(t.value),
            format_number(t.mc_se),
            str(t.superpop_size),
        ])
    _write_rows(Path(path), header, rows)


def write_propensity_csv(
    path: Union[str, Path], result: MonteCarloResult
) -> None:
    """Plot-ready fitted propensities by arm, one sampled replicate per cell."""
    header = ["model", "effect", "spec_cell", "replicate", "arm", "e_hat"]
    rows = []
    for sample in result.propensity:
        for z_i, e_i in zip(sample.z, sample.e_hat):
            rows.append([
                sample.model_id,
                sample.effect,
                sample.spec_cell,
                str(sample.replicate),
                str(int(z_i)),
                format_number(e_i),
            ])
    _write_rows(Path(path), header, rows)


def write_ess_csv(path: Union[str, Path], result: MonteCarloResult) -> None:
    header = [
        "model", "effect", "spec_cell", "estimand", "ess_treated_mean",
        "ess_control_mean", "n_used", "identity_arm_violations",
    ]
    rows = []
    for e in result.ess:
        rows.append([
            e.model_id,
            e.effect,
            e.spec_cell,
            e.estimand.name,
            format_number(e.ess_treated_mean),
            format_number(e.ess_control_mean),
            str(e.n_used),
            str(e.identity_arm_violations),
        ])
    _write_rows(Path(path), header, rows)


# ---------------------------------------------------------------------------
# manifest and config files


def config_as_dict(config) -> dict:
    """Dataclass config to plain JSON-serializable mapping."""
    out = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = [v.name if isinstance(v, Estimand) else v for v in value]
        elif isinstance(value, Estimand):
            value = value.name
        out[f.name] = value
    return out


def write_manifest(
    path: Union[str, Path],
    command: str,
    config_echo: dict,
    extra: Optional[dict] = None,
) -> None:
    """Reproducibility record: config echo plus library versions.

    Deliberately excludes timestamps and worker counts; neither can change
    a result, and both would break byte-level comparison of replays.
    """
    import scipy

    payload = {
        "package": "drboot",
        "version": __version__,
        "command": command,
        "config": config_echo,
        "environment": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }
    if extra:
        payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, newline="\n")


def load_config_file(path: Union[str, Path]) -> dict:
    """Flat TOML key-value file; nested tables are rejected."""
    try:
        import tomllib
    except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
        import tomli as tomllib
    raw = Path(path).read_bytes()
    try:
        values = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as err:
        raise ParseError(f"{path}: {err}")
    for key, value in values.items():
        if isinstance(value, dict):
            raise ParseError(
                f"{path}: nested table {key!r} not supported; "
                f"use flat key = value lines"
            )
    return values
