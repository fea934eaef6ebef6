"""Single-dataset pipeline: fit, estimate, attach every requested SE.

This is the layer the CLI and the simulation harness share. It owns no
statistics of its own; it sequences the model fits, the point estimators,
and the four variance methods, and shapes their output into one report
per target.

The treated and control targets are estimated doubly robustly. The
full-population target is served by the normalized weighting estimator
with its own stacked variance; the influence-function perturbation
methods are defined here for the treated/control targets only, so a
full-population request simply never carries those entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import Dataset
from .diagnostics import DiagnosticsReport, diagnostics_report
from .errors import TooManyFailures
from .models import DesignMatrix, ORFit, PSFit, fit_logistic, fit_ols
from .resample import resample_draws, summarize_bootstrap
from .sandwich import SandwichResult, dr_sandwich, wate_sandwich
from .weighting import (
    Estimand,
    PointEstimate,
    WeightSet,
    compute_weights,
    dr_estimate,
    weighting_estimate,
)
from .wildboot import (
    EXPONENTIAL,
    RADEMACHER,
    bias_corrected,
    efficient_influence,
    iqr_se,
    wild_bootstrap,
    wild_ci,
)

METHOD_SANDWICH = "sandwich"
METHOD_WILD_RADEMACHER = "wild_rademacher"
METHOD_WILD_EXPONENTIAL = "wild_exponential"
METHOD_STANDARD_BOOTSTRAP = "standard_bootstrap"
ALL_METHODS = (
    METHOD_SANDWICH,
    METHOD_WILD_RADEMACHER,
    METHOD_WILD_EXPONENTIAL,
    METHOD_STANDARD_BOOTSTRAP,
)
# the perturbation methods expand around the doubly robust estimate and
# are not defined for the full-population target here
WILD_METHODS = (METHOD_WILD_RADEMACHER, METHOD_WILD_EXPONENTIAL)

_WILD_FAMILY = {
    METHOD_WILD_RADEMACHER: RADEMACHER,
    METHOD_WILD_EXPONENTIAL: EXPONENTIAL,
}


@dataclass(frozen=True)
class FitBundle:
    """Both nuisance fits plus the designs they were fit on.

    ``or_fits`` maps arm (0 for control, 1 for treated) to that arm's
    regression; only the arms some requested target imputes from are
    present.
    """

    ps_design: DesignMatrix
    or_design: DesignMatrix
    ps_fit: PSFit
    or_fits: dict[int, ORFit]


@dataclass(frozen=True)
class MethodResult:
    method: str
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    extra: dict


@dataclass(frozen=True)
class EstimateReport:
    estimand: Estimand
    estimator: str
    estimate: float
    methods: dict[str, MethodResult]
    diagnostics: Optional[DiagnosticsReport]


@dataclass(frozen=True)
class AnalysisResult:
    reports: tuple[EstimateReport, ...]
    n: int
    n_treated: int
    n_control: int
    ps_beta: np.ndarray


def imputation_arm(estimand: Estimand) -> Optional[int]:
    """Which arm's regression the doubly robust residual subtracts."""
    if estimand is Estimand.ATT:
        return 0
    if estimand is Estimand.ATC:
        return 1
    return None


def fit_nuisances(
    dataset: Dataset,
    ps_columns: tuple[str, ...],
    or_columns: tuple[str, ...],
    estimands: tuple[Estimand, ...],
    ps_start: Optional[np.ndarray] = None,
) -> FitBundle:
    ps_design = dataset.design(ps_columns)
    or_design = dataset.design(or_columns)
    ps_fit = fit_logistic(ps_design, dataset.z, start=ps_start)
    or_fits = {}
    for estimand in estimands:
        arm = imputation_arm(estimand)
        if arm is not None and arm not in or_fits:
            or_fits[arm] = fit_ols(or_design, dataset.y, dataset.z == arm)
    return FitBundle(ps_design, or_design, ps_fit, or_fits)


def point_estimate(
    bundle: FitBundle, dataset: Dataset, estimand: Estimand
) -> tuple[PointEstimate, WeightSet]:
    weights = compute_weights(estimand, dataset.z, bundle.ps_fit.fitted)
    arm = imputation_arm(estimand)
    if arm is None:
        return weighting_estimate(weights, dataset.y), weights
    m_opp = bundle.or_fits[arm].fitted_all
    return dr_estimate(estimand, weights, dataset.y, m_opp), weights


def sandwich_method(
    bundle: FitBundle,
    dataset: Dataset,
    estimand: Estimand,
    estimate: PointEstimate,
    alpha: float,
) -> MethodResult:
    arm = imputation_arm(estimand)
    if arm is None:
        result = wate_sandwich(
            bundle.ps_design.values, dataset.z, dataset.y, estimand,
            bundle.ps_fit, estimate, alpha,
        )
    else:
        result = dr_sandwich(
            bundle.ps_design.values, bundle.or_design.values, dataset.z,
            dataset.y, estimand, bundle.ps_fit, bundle.or_fits[arm],
            estimate, alpha,
        )
    return _from_sandwich(result)


def _from_sandwich(result: SandwichResult) -> MethodResult:
    return MethodResult(
        METHOD_SANDWICH, result.se, result.ci_low, result.ci_high,
        result.p_value, extra={},
    )


def wild_method(
    bundle: FitBundle,
    dataset: Dataset,
    estimand: Estimand,
    estimate: PointEstimate,
    method: str,
    R: int,
    seed: int,
    alpha: float,
) -> MethodResult:
    arm = imputation_arm(estimand)
    if arm is None:
        raise ValueError(
            "influence perturbation is defined for the treated and "
            "control targets"
        )
    phi = efficient_influence(
        estimand, dataset.z, bundle.ps_fit.fitted, dataset.y,
        bundle.or_fits[arm].fitted_all, estimate.value,
    )
    draws = wild_bootstrap(
        phi, estimate.value, R=R, multiplier=_WILD_FAMILY[method], seed=seed
    )
    spread = iqr_se(draws)
    lo, hi, p = wild_ci(estimate.value, spread.se, alpha)
    debiased, deb_lo, deb_hi = bias_corrected(estimate.value, draws, alpha)
    return MethodResult(
        method, spread.se, lo, hi, p,
        extra={
            "se_direct": spread.se_direct,
            "bias_corrected": debiased,
            "bias_corrected_ci_low": deb_lo,
            "bias_corrected_ci_high": deb_hi,
        },
    )


def full_analysis(
    dataset: Dataset,
    ps_columns: tuple[str, ...],
    or_columns: tuple[str, ...],
    estimands: tuple[Estimand, ...] = (Estimand.ATT, Estimand.ATC),
    methods: tuple[str, ...] = ALL_METHODS,
    R: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    balance_columns: Optional[tuple[str, ...]] = None,
    with_diagnostics: bool = True,
) -> AnalysisResult:
    """Run the whole pipeline and return one report per target.

    The resampling bootstrap draws one set of refits shared across all
    requested targets. A target whose bootstrap exhausts its failure
    budget gets a TooManyFailures marker in ``extra`` instead of killing
    the other targets' reports.
    """
    unknown = set(methods) - set(ALL_METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    bundle = fit_nuisances(dataset, ps_columns, or_columns, estimands)
    estimates = {}
    weight_sets = {}
    for estimand in estimands:
        estimates[estimand], weight_sets[estimand] = point_estimate(
            bundle, dataset, estimand
        )

    boot = None
    if METHOD_STANDARD_BOOTSTRAP in methods:
        boot = resample_draws(
            bundle.ps_design, bundle.or_design, dataset.z, dataset.y,
            estimands, R=R, seed=seed, ps_start=bundle.ps_fit.beta,
        )

    if balance_columns is None:
        balance_columns = ps_columns
    reports = []
    for estimand in estimands:
        estimate = estimates[estimand]
        per_method = {}
        for method in methods:
            if method == METHOD_SANDWICH:
                per_method[method] = sandwich_method(
                    bundle, dataset, estimand, estimate, alpha
                )
            elif method in WILD_METHODS:
                if estimand is Estimand.ATE:
                    continue
                per_method[method] = wild_method(
                    bundle, dataset, estimand, estimate, method, R, seed,
                    alpha,
                )
            else:
                try:
                    summary = summarize_bootstrap(
                        boot, estimand, estimate.value, alpha
                    )
                except TooManyFailures as err:
                    per_method[method] = MethodResult(
                        method, float("nan"), float("nan"), float("nan"),
                        float("nan"), extra={"error": str(err)},
                    )
                    continue
                per_method[method] = MethodResult(
                    method, summary.se, summary.ci_low, summary.ci_high,
                    summary.p_value,
                    extra={
                        "n_success": summary.n_success,
                        "n_failed": summary.n_failed,
                    },
                )
        diagnostics = None
        if with_diagnostics:
            diagnostics = diagnostics_report(
                weight_sets[estimand], dataset.z,
                {name: dataset.columns[name] for name in balance_columns},
            )
        reports.append(
            EstimateReport(
                estimand=estimand,
                estimator=estimate.estimator,
                estimate=estimate.value,
                methods=per_method,
                diagnostics=diagnostics,
            )
        )
    return AnalysisResult(
        reports=tuple(reports),
        n=dataset.n,
        n_treated=dataset.n_treated,
        n_control=dataset.n_control,
        ps_beta=bundle.ps_fit.beta,
    )
