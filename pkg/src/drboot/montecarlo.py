"""Simulation study driver.

Runs the treated-target and control-target doubly robust estimators over a
grid of synthetic-design cells, with every requested variance method, and
aggregates the usual frequentist report: percent bias, RMSE, median
standard error, empirical SD, relative efficiency, and coverage.

Replicates are independent work units keyed by (master seed, cell, index),
so the full grid is reproducible bit for bit no matter how many worker
processes share the load. Failures at any stage are data, not crashes:
they are counted in a per-stage table and the affected replicate is
excluded from the aggregates it can no longer contribute to.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .analysis import (
    ALL_METHODS,
    METHOD_SANDWICH,
    METHOD_STANDARD_BOOTSTRAP,
    METHOD_WILD_EXPONENTIAL,
    METHOD_WILD_RADEMACHER,
    WILD_METHODS,
)
from .dgp import (
    CONSTANT,
    FORCED_N,
    HETEROGENEOUS,
    DGPConfig,
    TruthEntry,
    generate_dgp,
    model_spec_for,
    true_effect,
)
from .diagnostics import effective_sample_size
from .errors import EstimationError, TooManyFailures
from .models import fit_logistic, fit_ols
from .resample import resample_draws, summarize_bootstrap
from .sandwich import dr_sandwich
from .streams import TAG_DATA, TAG_TRUTH, key_pair, rng_at
from .weighting import Estimand, compute_weights, dr_estimate
from .wildboot import (
    EXPONENTIAL,
    RADEMACHER,
    efficient_influence,
    iqr_se,
    wild_bootstrap,
    wild_ci,
)

CELL_BOTH_CORRECT = "both_correct"
CELL_OR_MISSPECIFIED = "or_misspecified"
CELL_PS_MISSPECIFIED = "ps_misspecified"
CELL_BOTH_MISSPECIFIED = "both_misspecified"

STAGE_SHARED_FIT = "shared_fit"
STAGE_ESTIMATE = "estimate"

_MODEL_STREAM_INDEX = {"1": 1, "2": 2, "3": 3, "4": 4, "5a": 5, "5b": 6}
_EFFECT_STREAM_INDEX = {CONSTANT: 0, HETEROGENEOUS: 1}
_IMPUTATION_ARM = {Estimand.ATT: 0, Estimand.ATC: 1}
_WILD_FAMILY = {
    METHOD_WILD_RADEMACHER: RADEMACHER,
    METHOD_WILD_EXPONENTIAL: EXPONENTIAL,
}
# sub-stream slots under one (cell, replicate) method key
_SLOT_RESAMPLE = 0
_WILD_SLOT = {Estimand.ATT: 1, Estimand.ATC: 2}


def spec_cell_label(ps_correct: bool, or_correct: bool) -> str:
    if ps_correct and or_correct:
        return CELL_BOTH_CORRECT
    if ps_correct:
        return CELL_OR_MISSPECIFIED
    if or_correct:
        return CELL_PS_MISSPECIFIED
    return CELL_BOTH_MISSPECIFIED


def standard_grid(
    model_id, effect: str = CONSTANT, N: Optional[int] = None
) -> tuple[DGPConfig, ...]:
    """The four model-specification cells of one design, in table order."""
    return tuple(
        DGPConfig(
            model_id=model_id,
            effect=effect,
            N=N,
            ps_correct=ps,
            or_correct=orc,
        )
        for ps, orc in ((True, True), (True, False), (False, True),
                        (False, False))
    )


# ---------------------------------------------------------------------------
# result rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    """One line of the comparison table.

    ``bias_pct``, ``rmse`` and ``esd`` describe the point estimator and are
    identical across the method rows of one (cell, estimand); the remaining
    columns describe the named variance method. ``n_failures`` counts the
    replicates missing from this row's method aggregates for any reason,
    shared fitting failures included.
    """

    model_id: str
    effect: str
    spec_cell: str
    estimand: Estimand
    method: str
    bias_pct: float
    rmse: float
    se_median: float
    esd: float
    re_median: float
    cp: float
    n_failures: int
    n_used: int
    truth: float


@dataclass(frozen=True)
class FailureRow:
    """A failure tally for one (cell, stage, reason) combination.

    ``estimand`` is None for the shared propensity stage, whose failures
    hit every estimand of the cell at once and are therefore reported once
    rather than booked under each estimand.
    """

    model_id: str
    effect: str
    spec_cell: str
    estimand: Optional[Estimand]
    stage: str
    reason: str
    count: int


@dataclass(frozen=True)
class EssRow:
    """Mean per-arm effective sample size over the estimate-successful
    replicates of one (cell, estimand).

    ``identity_arm_violations`` counts replicates where the arm that the
    tilt leaves untouched (treated under the treated target, control under
    the control target) did not come out at exactly its arm count.
    """

    model_id: str
    effect: str
    spec_cell: str
    estimand: Estimand
    ess_treated_mean: float
    ess_control_mean: float
    n_used: int
    identity_arm_violations: int


@dataclass(frozen=True)
class PropensitySample:
    """Fitted scores from one replicate of a cell, for density plots."""

    model_id: str
    effect: str
    spec_cell: str
    replicate: int
    z: np.ndarray
    e_hat: np.ndarray


@dataclass(frozen=True)
class MonteCarloResult:
    metrics: tuple[MetricsRow, ...]
    failures: tuple[FailureRow, ...]
    ess: tuple[EssRow, ...]
    truths: tuple[TruthEntry, ...]
    propensity: tuple[PropensitySample, ...]
    M: int
    R: int
    master_seed: int
    alpha: float


# ---------------------------------------------------------------------------
# per-replicate work
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Context:
    master_seed: int
    groups: tuple
    estimands: tuple[Estimand, ...]
    methods: tuple[str, ...]
    R: int
    alpha: float


_CONTEXT: Optional[_Context] = None


def _set_context(context: _Context) -> None:
    global _CONTEXT
    _CONTEXT = context


def _data_key(master_seed: int, config: DGPConfig) -> tuple[int, int]:
    # data streams depend only on (model, effect, N): cells that share a
    # generating design see literally the same replicate data
    return key_pair(
        master_seed,
        TAG_DATA,
        _MODEL_STREAM_INDEX[config.model_id],
        _EFFECT_STREAM_INDEX[config.effect],
        config.N,
    )


def _method_seed(
    master_seed: int, config: DGPConfig, replicate: int, slot: int
) -> int:
    key = key_pair(
        master_seed,
        _MODEL_STREAM_INDEX[config.model_id],
        _EFFECT_STREAM_INDEX[config.effect],
        config.N,
        int(config.ps_correct),
        int(config.or_correct),
        replicate,
        slot,
    )
    return int(key[0])


def _run_replicate(task: tuple[int, int]) -> list:
    """All cells of one data group, one replicate; returns plain records.

    Record shapes, per cell index:
      ("shared", reason)                      propensity fit failed
      ("ok", {estimand_name: est_record})     otherwise
    est_record:
      ("fail", reason)
      ["ok", tau, ess_treated, ess_control, identity_exact,
       {method: ("ok", se, lo, hi) | ("fail", reason)}]
    """
    group_index, rep = task
    ctx = _CONTEXT
    members = ctx.groups[group_index]
    ds = generate_dgp(
        members[0][1], rng=rng_at(_data_key(ctx.master_seed, members[0][1]), rep)
    )

    ps_cache: dict = {}
    or_design_cache: dict = {}
    or_cache: dict = {}
    out = []
    for cell_index, config in members:
        spec = model_spec_for(config)
        ps_state = ps_cache.get(config.ps_correct)
        if ps_state is None:
            V = ds.design(spec.ps_columns)
            try:
                ps_state = ("ok", fit_logistic(V, ds.z), V)
            except EstimationError as err:
                ps_state = ("fail", type(err).__name__)
            ps_cache[config.ps_correct] = ps_state
        if ps_state[0] == "fail":
            out.append((cell_index, ("shared", ps_state[1])))
            continue
        _, ps_fit, V = ps_state

        W = or_design_cache.get(config.or_correct)
        if W is None:
            W = ds.design(spec.or_columns)
            or_design_cache[config.or_correct] = W

        est_records: dict = {}
        surviving: dict = {}
        for est in ctx.estimands:
            arm = _IMPUTATION_ARM[est]
            or_state = or_cache.get((config.or_correct, arm))
            if or_state is None:
                try:
                    or_state = ("ok", fit_ols(W, ds.y, ds.z == arm))
                except EstimationError as err:
                    or_state = ("fail", type(err).__name__)
                or_cache[(config.or_correct, arm)] = or_state
            if or_state[0] == "fail":
                est_records[est.name] = ("fail", or_state[1])
                continue
            or_fit = or_state[1]
            try:
                weights = compute_weights(est, ds.z, ps_fit.fitted)
                point = dr_estimate(est, weights, ds.y, or_fit.fitted_all)
            except EstimationError as err:
                est_records[est.name] = ("fail", type(err).__name__)
                continue
            ess = effective_sample_size(weights, ds.z)
            if est is Estimand.ATT:
                identity_exact = ess.ess_treated == float(ds.n_treated)
            else:
                identity_exact = ess.ess_control == float(ds.n_control)

            method_records: dict = {}
            for method in ctx.methods:
                if method == METHOD_SANDWICH:
                    try:
                        res = dr_sandwich(
                            V.values, W.values, ds.z, ds.y, est,
                            ps_fit, or_fit, point, ctx.alpha,
                        )
                        method_records[method] = (
                            "ok", res.se, res.ci_low, res.ci_high,
                        )
                    except EstimationError as err:
                        method_records[method] = ("fail", type(err).__name__)
                elif method in WILD_METHODS:
                    seed = _method_seed(
                        ctx.master_seed, config, rep, _WILD_SLOT[est]
                    )
                    try:
                        phi = efficient_influence(
                            est, ds.z, ps_fit.fitted, ds.y,
                            or_fit.fitted_all, point.value,
                        )
                        draws = wild_bootstrap(
                            phi, point.value, R=ctx.R,
                            multiplier=_WILD_FAMILY[method], seed=seed,
                        )
                        se = iqr_se(draws).se
                        lo, hi, _ = wild_ci(point.value, se, ctx.alpha)
                        method_records[method] = ("ok", se, lo, hi)
                    except EstimationError as err:
                        method_records[method] = ("fail", type(err).__name__)
            est_records[est.name] = [
                "ok", point.value, ess.ess_treated, ess.ess_control,
                identity_exact, method_records,
            ]
            surviving[est] = point.value

        if METHOD_STANDARD_BOOTSTRAP in ctx.methods and surviving:
            seed = _method_seed(ctx.master_seed, config, rep, _SLOT_RESAMPLE)
            draws = resample_draws(
                V, W, ds.z, ds.y, tuple(surviving), R=ctx.R, seed=seed,
                ps_start=ps_fit.beta,
            )
            for est, tau in surviving.items():
                try:
                    summary = summarize_bootstrap(
                        draws, est, tau, alpha=ctx.alpha
                    )
                    record = (
                        "ok", summary.se, summary.ci_low, summary.ci_high,
                    )
                except TooManyFailures:
                    record = ("fail", "TooManyFailures")
                est_records[est.name][5][METHOD_STANDARD_BOOTSTRAP] = record
        out.append((cell_index, ("ok", est_records)))
    return out


# ---------------------------------------------------------------------------
# the driver
# ---------------------------------------------------------------------------

class _CellTally:
    """Mutable accumulator for one (cell, estimand)."""

    __slots__ = (
        "taus", "fail", "ess1_sum", "ess0_sum", "identity_violations",
        "method_ok", "method_fail",
    )

    def __init__(self, methods):
        self.taus: list[float] = []
        self.fail: Counter = Counter()
        self.ess1_sum = 0.0
        self.ess0_sum = 0.0
        self.identity_violations = 0
        self.method_ok = {m: [] for m in methods}
        self.method_fail = {m: Counter() for m in methods}


def _group_cells(cells):
    groups: dict = {}
    order = []
    for index, config in enumerate(cells):
        gkey = (config.model_id, config.effect, config.N)
        if gkey not in groups:
            groups[gkey] = []
            order.append(gkey)
        groups[gkey].append((index, config))
    return tuple(tuple(groups[gkey]) for gkey in order)


def _truth_table(master_seed, cells, estimands, truth_size):
    """One entry per (model, effect, estimand) in the grid.

    There is one superpopulation stream per (model, effect); both targets
    are read off the same draw. The reduced-size designs share
    coefficients with the base model, so they reuse the base model's
    stream and the values agree exactly when both appear in one grid.
    """
    entries: dict = {}
    cache: dict = {}
    for config in cells:
        for est in estimands:
            out_key = (config.model_id, config.effect, est)
            if out_key in entries:
                continue
            base = "1" if config.model_id in FORCED_N else config.model_id
            cache_key = (base, config.effect, est)
            if cache_key not in cache:
                rng = rng_at(
                    key_pair(
                        master_seed,
                        TAG_TRUTH,
                        _MODEL_STREAM_INDEX[base],
                        _EFFECT_STREAM_INDEX[config.effect],
                    ),
                    0,
                )
                cache[cache_key] = true_effect(
                    base, config.effect, est,
                    superpop_size=truth_size, rng=rng,
                )
            entries[out_key] = dataclasses.replace(
                cache[cache_key], model_id=config.model_id
            )
    return entries


def run_monte_carlo(
    cells: Sequence[DGPConfig],
    estimands: Sequence[Estimand] = (Estimand.ATT, Estimand.ATC),
    methods: Sequence[str] = ALL_METHODS,
    M: int = 200,
    R: int = 500,
    master_seed: int = 0,
    alpha: float = 0.05,
    workers: int = 1,
    truth_size: int = 1_000_000,
) -> MonteCarloResult:
    """Run the study over the given cells and aggregate the report.

    Parameters
    ----------
    cells : sequence of DGPConfig
        The grid. Cells sharing (model, effect, N) see identical replicate
        data, which is what makes specification comparisons paired.
    estimands : sequence of Estimand
        Treated-population and control-population targets only; the full
        population has no doubly robust path here.
    methods : sequence of str
        Variance methods to run; point estimates are always computed.
    M, R : int
        Replicates, and bootstrap draws per replicate.
    master_seed : int
        Everything random descends from this one integer.
    workers : int
        Process count. Results are identical for any value.
    truth_size : int
        Superpopulation draw for heterogeneous truths.

    Returns
    -------
    MonteCarloResult
        Metric rows per (cell, estimand, method), the per-stage failure
        table, per-arm mean effective sample sizes, the truth entries
        used, and one replicate's fitted scores per cell for plotting.
    """
    cells = tuple(cells)
    if not cells:
        raise ValueError("empty cell grid")
    if M < 2:
        raise ValueError("need at least two replicates")
    estimands = tuple(estimands)
    for est in estimands:
        if est not in _IMPUTATION_ARM:
            raise ValueError(
                "the study compares the treated- and control-population "
                f"targets; got {est!r}"
            )
    methods = tuple(methods)
    unknown = set(methods) - set(ALL_METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    needs_draws = set(methods) - {METHOD_SANDWICH}
    if needs_draws and R < 2:
        raise ValueError("bootstrap methods need R of at least 2")
    seen = set()
    for config in cells:
        ckey = (config.model_id, config.effect, config.N,
                config.ps_correct, config.or_correct)
        if ckey in seen:
            raise ValueError(f"duplicate cell {ckey}")
        seen.add(ckey)

    groups = _group_cells(cells)
    context = _Context(
        master_seed=master_seed,
        groups=groups,
        estimands=estimands,
        methods=methods,
        R=R,
        alpha=alpha,
    )
    tasks = [
        (group_index, rep)
        for group_index in range(len(groups))
        for rep in range(M)
    ]
    if workers <= 1:
        _set_context(context)
        results = [_run_replicate(task) for task in tasks]
    else:
        chunk = max(1, len(tasks) // (workers * 8))
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_set_context,
            initargs=(context,),
        ) as pool:
            results = list(pool.map(_run_replicate, tasks, chunksize=chunk))

    # deterministic fold in task order
    shared_fail = {i: Counter() for i in range(len(cells))}
    first_ok: dict[int, Optional[int]] = {i: None for i in range(len(cells))}
    tallies = {
        (i, est): _CellTally(methods)
        for i in range(len(cells))
        for est in estimands
    }
    rep_of_task = [task[1] for task in tasks]
    for task_index, records in enumerate(results):
        rep = rep_of_task[task_index]
        for cell_index, record in records:
            if record[0] == "shared":
                shared_fail[cell_index][record[1]] += 1
                continue
            if first_ok[cell_index] is None:
                first_ok[cell_index] = rep
            for est in estimands:
                tally = tallies[(cell_index, est)]
                est_record = record[1][est.name]
                if est_record[0] == "fail":
                    tally.fail[est_record[1]] += 1
                    continue
                _, tau, ess1, ess0, identity_exact, per_method = est_record
                tally.taus.append(tau)
                tally.ess1_sum += ess1
                tally.ess0_sum += ess0
                if not identity_exact:
                    tally.identity_violations += 1
                for method in methods:
                    mrec = per_method.get(method)
                    if mrec is None:
                        continue
                    if mrec[0] == "ok":
                        tally.method_ok[method].append(mrec[1:])
                    else:
                        tally.method_fail[method][mrec[1]] += 1

    truths = _truth_table(master_seed, cells, estimands, truth_size)

    metrics = []
    ess_rows = []
    failure_rows = []
    for cell_index, config in enumerate(cells):
        label = spec_cell_label(config.ps_correct, config.or_correct)
        for reason in sorted(shared_fail[cell_index]):
            failure_rows.append(FailureRow(
                config.model_id, config.effect, label, None,
                STAGE_SHARED_FIT, reason, shared_fail[cell_index][reason],
            ))
        for est in estimands:
            tally = tallies[(cell_index, est)]
            truth = truths[(config.model_id, config.effect, est)].value
            taus = np.asarray(tally.taus)
            n_est = taus.size
            if n_est > 0:
                mean_tau = float(taus.mean())
                bias_pct = 100.0 * abs(mean_tau - truth) / abs(truth)
                rmse = float(np.sqrt(np.mean((taus - truth) ** 2)))
            else:
                bias_pct = float("nan")
                rmse = float("nan")
            esd = float(taus.std(ddof=1)) if n_est >= 2 else float("nan")

            for reason in sorted(tally.fail):
                failure_rows.append(FailureRow(
                    config.model_id, config.effect, label, est,
                    STAGE_ESTIMATE, reason, tally.fail[reason],
                ))
            for method in methods:
                survivors = tally.method_ok[method]
                n_used = len(survivors)
                if n_used > 0:
                    ses = np.asarray([s[0] for s in survivors])
                    covered = np.asarray([
                        lo <= truth <= hi for _, lo, hi in survivors
                    ])
                    se_median = float(np.median(ses))
                    cp = float(covered.mean())
                    if np.isfinite(esd):
                        with np.errstate(divide="ignore"):
                            re_median = float(np.median(esd ** 2 / ses ** 2))
                    else:
                        re_median = float("nan")
                else:
                    se_median = float("nan")
                    cp = float("nan")
                    re_median = float("nan")
                metrics.append(MetricsRow(
                    model_id=config.model_id,
                    effect=config.effect,
                    spec_cell=label,
                    estimand=est,
                    method=method,
                    bias_pct=bias_pct,
                    rmse=rmse,
                    se_median=se_median,
                    esd=esd,
                    re_median=re_median,
                    cp=cp,
                    n_failures=M - n_used,
                    n_used=n_used,
                    truth=truth,
                ))
                for reason in sorted(tally.method_fail[method]):
                    failure_rows.append(FailureRow(
                        config.model_id, config.effect, label, est,
                        method, reason, tally.method_fail[method][reason],
                    ))
            ess_rows.append(EssRow(
                model_id=config.model_id,
                effect=config.effect,
                spec_cell=label,
                estimand=est,
                ess_treated_mean=(
                    tally.ess1_sum / n_est if n_est else float("nan")
                ),
                ess_control_mean=(
                    tally.ess0_sum / n_est if n_est else float("nan")
                ),
                n_used=n_est,
                identity_arm_violations=tally.identity_violations,
            ))

    propensity = []
    for cell_index, config in enumerate(cells):
        rep = first_ok[cell_index]
        if rep is None:
            continue
        ds = generate_dgp(
            config, rng=rng_at(_data_key(master_seed, config), rep)
        )
        spec = model_spec_for(config)
        ps_fit = fit_logistic(ds.design(spec.ps_columns), ds.z)
        propensity.append(PropensitySample(
            model_id=config.model_id,
            effect=config.effect,
            spec_cell=spec_cell_label(config.ps_correct, config.or_correct),
            replicate=rep,
            z=ds.z.astype(int),
            e_hat=ps_fit.fitted,
        ))

    truth_entries = tuple(
        truths[key] for key in sorted(
            truths,
            key=lambda k: (_MODEL_STREAM_INDEX[k[0]], k[1], k[2].name),
        )
    )
    return MonteCarloResult(
        metrics=tuple(metrics),
        failures=tuple(failure_rows),
        ess=tuple(ess_rows),
        truths=truth_entries,
        propensity=tuple(propensity),
        M=M,
        R=R,
        master_seed=master_seed,
        alpha=alpha,
    )


def sandwich_failure_count(
    result: MonteCarloResult, estimand: Estimand
) -> int:
    """Replicates whose sandwich variance was unobtainable for reasons
    specific to this estimand: imputation-arm regression failures plus
    singular or negative sandwich algebra. Shared propensity-stage
    failures hit both estimands identically and are reported in their own
    rows, so they are not booked here.
    """
    total = 0
    for row in result.failures:
        if row.estimand is not estimand:
            continue
        if row.stage in (STAGE_ESTIMATE, METHOD_SANDWICH):
            total += row.count
    return total
