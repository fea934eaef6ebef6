"""Doubly robust treatment effect estimation on the treated and on the
controls, with three variance estimators (stacked-equation sandwich,
multiplier bootstrap on influence functions, and row-resampling bootstrap),
weighting diagnostics, and a Monte Carlo study harness."""

__version__ = "0.1.0"

from .analysis import (
    ALL_METHODS,
    METHOD_SANDWICH,
    METHOD_STANDARD_BOOTSTRAP,
    METHOD_WILD_EXPONENTIAL,
    METHOD_WILD_RADEMACHER,
    AnalysisResult,
    EstimateReport,
    FitBundle,
    MethodResult,
    full_analysis,
)
from .dataset import Dataset
from .dgp import (
    CONSTANT,
    HETEROGENEOUS,
    DGPConfig,
    TruthEntry,
    generate_dgp,
    true_effect,
)
from .diagnostics import (
    DiagnosticsReport,
    EssReport,
    diagnostics_report,
    effective_sample_size,
    kish_ess,
    standardized_differences,
    variance_inflation,
)
from .io import AnalysisConfig, apply_outcome_transform, load_csv
from .models import DesignMatrix, ORFit, PSFit, fit_logistic, fit_ols
from .montecarlo import (
    MonteCarloResult,
    run_monte_carlo,
    sandwich_failure_count,
    standard_grid,
)
from .resample import resample_draws, standard_bootstrap, summarize_bootstrap
from .sandwich import SandwichResult, dr_sandwich, wate_sandwich
from .weighting import (
    Estimand,
    PointEstimate,
    WeightSet,
    compute_weights,
    dr_estimate,
    regression_estimate,
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

__all__ = [
    "ALL_METHODS",
    "METHOD_SANDWICH",
    "METHOD_STANDARD_BOOTSTRAP",
    "METHOD_WILD_EXPONENTIAL",
    "METHOD_WILD_RADEMACHER",
    "AnalysisConfig",
    "AnalysisResult",
    "CONSTANT",
    "DGPConfig",
    "Dataset",
    "DesignMatrix",
    "DiagnosticsReport",
    "EXPONENTIAL",
    "EssReport",
    "Estimand",
    "EstimateReport",
    "FitBundle",
    "HETEROGENEOUS",
    "MethodResult",
    "MonteCarloResult",
    "ORFit",
    "PSFit",
    "PointEstimate",
    "RADEMACHER",
    "SandwichResult",
    "TruthEntry",
    "WeightSet",
    "__version__",
    "apply_outcome_transform",
    "bias_corrected",
    "compute_weights",
    "diagnostics_report",
    "dr_estimate",
    "dr_sandwich",
    "effective_sample_size",
    "efficient_influence",
    "fit_logistic",
    "fit_ols",
    "full_analysis",
    "generate_dgp",
    "iqr_se",
    "kish_ess",
    "load_csv",
    "regression_estimate",
    "resample_draws",
    "run_monte_carlo",
    "sandwich_failure_count",
    "standard_bootstrap",
    "standard_grid",
    "standardized_differences",
    "summarize_bootstrap",
    "true_effect",
    "variance_inflation",
    "wate_sandwich",
    "weighting_estimate",
    "wild_bootstrap",
    "wild_ci",
]
