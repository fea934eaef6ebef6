"""Weighting-quality diagnostics: ESS, design effect, inflation, balance.

All quantities are computed from the raw tilt values restricted to the arm
they live on. Normalization cancels in every formula here, and the raw
treated-arm tilt for the treated target is identically one, which keeps
that arm's effective sample size exactly equal to the arm count instead of
equal up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroPooledSD
from .weighting import Estimand, WeightSet

# balance flag threshold on the absolute standardized difference
SMD_THRESHOLD = 0.1


@dataclass(frozen=True)
class EssReport:
    """Effective sample sizes and the target's design effect.

    ``ess`` repeats whichever number the target reports: the control arm
    for the treated target, the treated arm for the control target, and
    the combined sample for the full-population target. The design effect
    divides it by the count of the population being described (treated
    count, control count, or N), so it is not capped at one: a
    well-matched control arm larger than the treated group yields more
    than one effective control per treated unit.
    """

    estimand: Estimand
    ess_treated: float
    ess_control: float
    ess: float
    design_effect: float


@dataclass(frozen=True)
class SmdRow:
    name: str
    unweighted: float
    weighted: float | None
    flagged: bool


@dataclass(frozen=True)
class DiagnosticsReport:
    estimand: Estimand
    ess: EssReport
    variance_inflation: float
    smd_table: tuple[SmdRow, ...]


def kish_ess(values: np.ndarray) -> float:
    """(sum w)^2 / sum w^2 for one weight vector."""
    values = np.asarray(values, dtype=float)
    total = values.sum()
    return float(total * total / (values @ values))


def effective_sample_size(weights: WeightSet, z: np.ndarray) -> EssReport:
    z = np.asarray(z, dtype=float)
    treated = z == 1.0
    ess1 = kish_ess(weights.tilt1[treated])
    ess0 = kish_ess(weights.tilt0[~treated])
    estimand = weights.estimand
    if estimand is Estimand.ATT:
        ess = ess0
        de = ess / float(treated.sum())
    elif estimand is Estimand.ATC:
        ess = ess1
        de = ess / float((~treated).sum())
    else:
        ess = kish_ess(weights.tilt1 + weights.tilt0)
        de = ess / z.size
    return EssReport(estimand, ess1, ess0, ess, de)


def variance_inflation(weights: WeightSet, z: np.ndarray) -> float:
    """Kish inflation factor for the pair of arm weight vectors.

    Scaled by N1*N0/N so that uniform weights on balanced arms give one.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    n1 = float(z.sum())
    n0 = n - n1
    total = 0.0
    for values in (weights.w1, weights.w0):
        s = values.sum()
        total += (values @ values) / (s * s)
    return float(n1 * n0 / n * total)


def standardized_differences(
    columns: dict[str, np.ndarray],
    z: np.ndarray,
    weights: WeightSet | None = None,
) -> tuple[SmdRow, ...]:
    """Absolute standardized mean differences, raw and optionally weighted.

    The denominator is always the unweighted pooled standard deviation
    sqrt((s1^2 + s0^2) / 2), so the weighted and unweighted rows are on
    the same scale. Rows whose reported difference (weighted when weights
    are given) exceeds 0.1 are flagged.

    Raises:
        ZeroPooledSD: a column is constant within both arms.
    """
    z = np.asarray(z, dtype=float)
    treated = z == 1.0
    rows = []
    for name, x in columns.items():
        x = np.asarray(x, dtype=float)
        s1 = np.std(x[treated], ddof=1)
        s0 = np.std(x[~treated], ddof=1)
        pooled = np.sqrt((s1 * s1 + s0 * s0) / 2.0)
        if pooled == 0.0:
            raise ZeroPooledSD(f"column {name!r} is constant in both arms")
        raw = abs(x[treated].mean() - x[~treated].mean()) / pooled
        if weights is None:
            weighted = None
            reported = raw
        else:
            m1 = float(weights.w1 @ x) / float(weights.w1.sum())
            m0 = float(weights.w0 @ x) / float(weights.w0.sum())
            weighted = abs(m1 - m0) / float(pooled)
            reported = weighted
        rows.append(SmdRow(name, float(raw), weighted, reported > SMD_THRESHOLD))
    return tuple(rows)


def diagnostics_report(
    weights: WeightSet,
    z: np.ndarray,
    columns: dict[str, np.ndarray],
) -> DiagnosticsReport:
    return DiagnosticsReport(
        estimand=weights.estimand,
        ess=effective_sample_size(weights, z),
        variance_inflation=variance_inflation(weights, z),
        smd_table=standardized_differences(columns, z, weights),
    )
