"""Nonparametric bootstrap that refits both models on each resample.

Each replicate draws N rows with replacement, refits the propensity model
(warm-started at the original coefficients) and whichever arm regressions
the requested targets need, then recomputes the point estimates. A
replicate that fails any stage is dropped for the targets that stage
serves, and the reason is tallied. The standard error is the sample
standard deviation of the surviving draws; the interval is the normal one
around the original estimate, not around the bootstrap mean.

Replicate r draws its rows from the stream addressed by (seed, r), so the
draws do not depend on how work is scheduled and growing R extends rather
than reshuffles them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import EstimationError, TooManyFailures
from .models import DesignMatrix, fit_logistic, fit_ols
from .streams import TAG_RESAMPLE, key_pair, rng_at
from .weighting import Estimand, compute_weights, dr_estimate, weighting_estimate


@dataclass(frozen=True)
class ResampleDraws:
    """Successful bootstrap draws and failure tallies, per target."""

    draws: dict[Estimand, np.ndarray]
    failures: dict[Estimand, dict[str, int]]
    R: int
    seed: int


@dataclass(frozen=True)
class BootstrapResult:
    estimand: Estimand
    tau_hat: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    n_success: int
    n_failed: int
    failure_reasons: dict[str, int]
    R: int
    seed: int


def _replicate_estimates(ps_design, or_design, z, y, estimands, ps_start):
    """Point estimates for one resampled dataset, keyed by estimand.

    Raises EstimationError subclasses from the shared propensity stage;
    per-target stages record their failure in the returned mapping
    instead, as (None, reason) entries.
    """
    ps_fit = fit_logistic(ps_design, z, start=ps_start)
    e = ps_fit.fitted
    out = {}
    arm_fits = {}
    for estimand in estimands:
        try:
            weights = compute_weights(estimand, z, e)
            if estimand is Estimand.ATE:
                out[estimand] = weighting_estimate(weights, y).value
                continue
            # the treated target imputes from the control fit and vice versa
            fit_arm = 0 if estimand is Estimand.ATT else 1
            if fit_arm not in arm_fits:
                arm_fits[fit_arm] = fit_ols(or_design, y, z == fit_arm)
            m_opp = arm_fits[fit_arm].fitted_all
            out[estimand] = dr_estimate(estimand, weights, y, m_opp).value
        except EstimationError as err:
            out[estimand] = (None, type(err).__name__)
    return out


def resample_draws(
    ps_design: DesignMatrix,
    or_design: DesignMatrix,
    z: np.ndarray,
    y: np.ndarray,
    estimands: tuple[Estimand, ...],
    R: int = 1000,
    seed: int = 0,
    ps_start: np.ndarray | None = None,
) -> ResampleDraws:
    """Draw R resamples and collect the recomputed estimates.

    The propensity refit and each arm regression are computed once per
    replicate and shared across the requested targets.
    """
    if R < 2:
        raise ValueError("need at least two replicates")
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    n = z.size
    key = key_pair(seed, TAG_RESAMPLE)
    collected = {est: [] for est in estimands}
    failures = {est: {} for est in estimands}

    def tally(est, reason):
        failures[est][reason] = failures[est].get(reason, 0) + 1

    for r in range(R):
        idx = rng_at(key, r).integers(0, n, n)
        vb = DesignMatrix(
            ps_design.values[idx], ps_design.column_names,
            ps_design.has_intercept,
        )
        wb = DesignMatrix(
            or_design.values[idx], or_design.column_names,
            or_design.has_intercept,
        )
        try:
            estimates = _replicate_estimates(
                vb, wb, z[idx], y[idx], estimands, ps_start
            )
        except EstimationError as err:
            for est in estimands:
                tally(est, type(err).__name__)
            continue
        for est, value in estimates.items():
            if isinstance(value, tuple):
                tally(est, value[1])
            else:
                collected[est].append(value)

    return ResampleDraws(
        draws={est: np.asarray(v) for est, v in collected.items()},
        failures=failures,
        R=R,
        seed=seed,
    )


def summarize_bootstrap(
    draws: ResampleDraws,
    estimand: Estimand,
    tau_hat: float,
    alpha: float = 0.05,
) -> BootstrapResult:
    """Standard error, interval and p-value for one target's draws.

    Raises:
        TooManyFailures: fewer than half the replicates survived (or fewer
            than two, where a standard deviation is undefined).
    """
    values = draws.draws[estimand]
    n_success = values.size
    n_failed = draws.R - n_success
    if n_success < 0.5 * draws.R or n_success < 2:
        raise TooManyFailures(
            f"{n_failed} of {draws.R} bootstrap replicates failed for "
            f"{estimand.name}"
        )
    se = float(np.std(values, ddof=1))
    zq = float(norm.ppf(1.0 - alpha / 2.0))
    if se == 0.0:
        p = 1.0 if tau_hat == 0.0 else 0.0
    else:
        p = float(2.0 * norm.sf(abs(tau_hat) / se))
    return BootstrapResult(
        estimand=estimand,
        tau_hat=tau_hat,
        se=se,
        ci_low=tau_hat - zq * se,
        ci_high=tau_hat + zq * se,
        p_value=p,
        n_success=n_success,
        n_failed=n_failed,
        failure_reasons=dict(draws.failures[estimand]),
        R=draws.R,
        seed=draws.seed,
    )


def standard_bootstrap(
    ps_design: DesignMatrix,
    or_design: DesignMatrix,
    z: np.ndarray,
    y: np.ndarray,
    tau_hats: dict[Estimand, float],
    R: int = 1000,
    seed: int = 0,
    ps_start: np.ndarray | None = None,
    alpha: float = 0.05,
) -> dict[Estimand, BootstrapResult]:
    """Resample, refit and summarize for every target in ``tau_hats``."""
    estimands = tuple(tau_hats)
    draws = resample_draws(
        ps_design, or_design, z, y, estimands, R=R, seed=seed,
        ps_start=ps_start,
    )
    return {
        est: summarize_bootstrap(draws, est, tau_hats[est], alpha=alpha)
        for est in estimands
    }
