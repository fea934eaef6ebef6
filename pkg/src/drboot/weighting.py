"""Selection functions, normalized weights, and the point estimators built
from them.

A target population is encoded by a selection function ``g(x) = a + b e(x)``
of the propensity score. The three members used here are the full
population (a=1, b=0), the treated (a=0, b=1), and the controls
(a=1, b=-1). Raw tilts ``z g/e`` and ``(1-z) g/(1-e)`` are normalized
within arm so each arm's weights sum to one, which is what gives the
treated-arm weights their exact uniformity under the treated target (the
``g/e`` ratio cancels) and mirrors it for controls under the control
target.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyArm, PositivityViolation


class Estimand(Enum):
    """Target population, as (a, b) coefficients of the selection function."""

    ATE = (1, 0)
    ATT = (0, 1)
    ATC = (1, -1)

    @property
    def a(self) -> int:
        return self.value[0]

    @property
    def b(self) -> int:
        return self.value[1]

    @classmethod
    def parse(cls, name: str) -> "Estimand":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(
                f"unknown estimand {name!r}; expected ATE, ATT, or ATC"
            ) from None


@dataclass(frozen=True)
class WeightSet:
    """Raw tilts and within-arm normalized weights for one estimand.

    ``w1`` is zero off the treated arm and sums to one over it; ``w0``
    mirrors that for controls.
    """

    estimand: Estimand
    tilt1: np.ndarray
    tilt0: np.ndarray
    w1: np.ndarray
    w0: np.ndarray


@dataclass(frozen=True)
class PointEstimate:
    """A treatment effect estimate split into its two weighted averages."""

    estimand: Estimand
    estimator: str
    value: float
    mu1: float
    mu0: float


def selection_values(
    estimand: Estimand, e_hat: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Selection function values and their propensity-coefficient slope.

    Returns:
        Pair ``(g, dg)`` where ``g = a + b e`` and ``dg`` is the per-unit
        scalar such that the derivative of g with respect to the logistic
        coefficients is ``dg_i v_i``. The slope is 0 for the full
        population, ``+e(1-e)`` for the treated target, ``-e(1-e)`` for the
        control target.
    """
    e = np.asarray(e_hat, dtype=float)
    g = estimand.a + estimand.b * e
    dg = estimand.b * e * (1.0 - e)
    return g, dg


def compute_weights(
    estimand: Estimand, z: np.ndarray, e_hat: np.ndarray
) -> WeightSet:
    """Raw tilts and normalized weights for the given estimand.

    Positivity is checked only where a tilt actually divides by something
    that can vanish: controls need ``e < 1`` whenever the control tilt has
    mass there, treated units need ``e > 0`` for the treated tilt under the
    control and full-population targets. Exact 0/1 raises; near-boundary
    values pass through and show up in the diagnostics instead.

    Raises:
        EmptyArm: an arm is empty, or all tilt mass in an arm vanished.
        PositivityViolation: an exact 0/1 propensity where a tilt needs it.
    """
    z = np.asarray(z, dtype=float)
    e = np.asarray(e_hat, dtype=float)
    treated = z == 1.0
    if not treated.any() or treated.all():
        raise EmptyArm("both arms must be non-empty to form weights")

    if estimand in (Estimand.ATT, Estimand.ATE):
        if np.any(e[~treated] == 1.0):
            raise PositivityViolation(
                "propensity of exactly 1 on a control unit"
            )
    if estimand in (Estimand.ATC, Estimand.ATE):
        if np.any(e[treated] == 0.0):
            raise PositivityViolation(
                "propensity of exactly 0 on a treated unit"
            )

    g, _ = selection_values(estimand, e)
    # Divide only on the arm that owns each tilt so off-arm propensities
    # can never produce spurious infinities.
    with np.errstate(invalid="ignore"):
        tilt1 = np.where(treated, g, 0.0) / np.where(treated, e, 1.0)
        tilt0 = np.where(treated, 0.0, g) / np.where(treated, 1.0, 1.0 - e)
    # The only 0/0 cases that survive the positivity checks are the ones
    # where the ratio cancels analytically: g/e on treated units under the
    # treated target and g/(1-e) on controls under the control target.
    # Their limits are b and -b respectively.
    boundary1 = treated & (e == 0.0)
    if boundary1.any():
        tilt1 = np.where(boundary1, float(estimand.b), tilt1)
    boundary0 = ~treated & (e == 1.0)
    if boundary0.any():
        tilt0 = np.where(boundary0, float(-estimand.b), tilt0)

    s1 = tilt1.sum()
    s0 = tilt0.sum()
    if s1 <= 0.0 or s0 <= 0.0:
        raise EmptyArm("all tilt mass vanished in one arm")
    return WeightSet(estimand, tilt1, tilt0, tilt1 / s1, tilt0 / s0)


def weighting_estimate(weights: WeightSet, y: np.ndarray) -> PointEstimate:
    """Normalized-weight difference of means, the pure weighting estimator."""
    y = np.asarray(y, dtype=float)
    mu1 = float(weights.w1 @ y)
    mu0 = float(weights.w0 @ y)
    return PointEstimate(weights.estimand, "weighting", mu1 - mu0, mu1, mu0)


def regression_estimate(
    estimand: Estimand,
    weights: WeightSet,
    y: np.ndarray,
    m_opposite: np.ndarray,
) -> PointEstimate:
    """Regression-imputation estimator for the treated or control target.

    ``m_opposite`` is the opposite arm's fitted regression evaluated at
    every unit: the control-arm model under the treated target, the
    treated-arm model under the control target.
    """
    y = np.asarray(y, dtype=float)
    m = np.asarray(m_opposite, dtype=float)
    if estimand is Estimand.ATT:
        mu1 = float(weights.w1 @ y)
        mu0 = float(weights.w1 @ m)
    elif estimand is Estimand.ATC:
        mu1 = float(weights.w0 @ m)
        mu0 = float(weights.w0 @ y)
    else:
        raise ValueError("regression estimator is defined for ATT and ATC")
    return PointEstimate(estimand, "regression", mu1 - mu0, mu1, mu0)


def dr_estimate(
    estimand: Estimand,
    weights: WeightSet,
    y: np.ndarray,
    m_opposite: np.ndarray,
) -> PointEstimate:
    """Doubly robust estimator for the treated or control target.

    Both arms' weighted averages are taken of the same residual
    ``y - m_opposite``, so the estimate is consistent when either the
    propensity model behind the weights or the outcome regression is
    correct. The two averages are exposed as ``mu1``/``mu0`` because the
    variance stack treats them as the final two parameters.
    """
    if estimand not in (Estimand.ATT, Estimand.ATC):
        raise ValueError("doubly robust estimator is defined for ATT and ATC")
    y = np.asarray(y, dtype=float)
    m = np.asarray(m_opposite, dtype=float)
    residual = y - m
    mu1 = float(weights.w1 @ residual)
    mu0 = float(weights.w0 @ residual)
    return PointEstimate(estimand, "doubly_robust", mu1 - mu0, mu1, mu0)
