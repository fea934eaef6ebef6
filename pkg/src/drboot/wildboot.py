"""Efficient influence functions and the wild (multiplier) bootstrap.

Instead of re-estimating anything, the wild bootstrap perturbs the fitted
per-unit influence values with i.i.d. multipliers, so every replicate keeps
the original rows and arm split. The procedure:

1. draw multipliers xi_1..xi_N (Rademacher, or standard exponential);
2. form the perturbed estimate tau*(r) = tau_hat + mean(xi * phi_hat);
3. record the scaled deviation delta(r) = sqrt(N) (tau*(r) - tau_hat);
4. estimate the root of the asymptotic variance by the interquartile range
   of the deltas divided by the normal IQR constant 1.3489795 (a direct
   mean-of-squares estimate is computed alongside);
5. build the normal-quantile interval tau_hat +/- z * SE.

phi_hat is mean-centered before perturbation. Exponential multipliers have
mean one, so an uncentered phi_hat would shift every tau*(r) by its sample
mean; centering makes both multiplier families interchangeable and leaves
Rademacher draws unchanged in distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DegenerateDraws, PositivityViolation
from .streams import TAG_WILD_EXPONENTIAL, TAG_WILD_RADEMACHER, key_pair, rng_at
from .weighting import Estimand

# Interquartile range of the standard normal; rescales an IQR to a SD.
NORMAL_IQR = 1.3489795

RADEMACHER = "rademacher"
EXPONENTIAL = "exponential"
_MULTIPLIER_TAGS = {
    RADEMACHER: TAG_WILD_RADEMACHER,
    EXPONENTIAL: TAG_WILD_EXPONENTIAL,
}


@dataclass(frozen=True)
class InfluenceVector:
    """Estimated per-unit influence values for one estimand.

    ``p_hat`` is the sample treated share; the control-target prefactor
    uses its complement.
    """

    phi: np.ndarray
    estimand: Estimand
    p_hat: float
    centered: bool


@dataclass(frozen=True)
class WildDraws:
    """Scaled deviations from one wild bootstrap run."""

    deltas: np.ndarray
    multiplier: str
    n: int
    tau_hat: float
    seed: int


@dataclass(frozen=True)
class WildSE:
    """Both variance readings from one set of draws.

    ``se`` comes from the rescaled IQR (the primary estimate); ``se_direct``
    from the mean of squared deltas. ``sigma_half`` and ``sigma_star`` are
    the corresponding root-variance and variance on the sqrt(N) scale.
    """

    se: float
    se_direct: float
    sigma_half: float
    sigma_star: float


def efficient_influence(
    estimand: Estimand,
    z: np.ndarray,
    e_hat: np.ndarray,
    y: np.ndarray,
    m_opposite: np.ndarray,
    tau_hat: float,
    center: bool = True,
) -> InfluenceVector:
    """Estimated efficient influence values for the treated or control target.

    Args:
        z: treatment indicator.
        e_hat: fitted propensities.
        y: outcomes.
        m_opposite: the opposite arm's regression evaluated at every unit.
        tau_hat: the doubly robust point estimate being expanded.
        center: subtract the sample mean (the default; see module notes).

    Raises:
        PositivityViolation: an exact boundary propensity on the arm whose
            tilt actually diverges there.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    e = np.asarray(e_hat, dtype=float)
    m = np.asarray(m_opposite, dtype=float)
    n = z.size
    p_hat = float(z.sum()) / n
    treated = z == 1.0

    # (z - e) over the off-arm propensity complement, with the algebraic
    # cancellation on the own arm applied exactly.
    if estimand is Estimand.ATT:
        if np.any(e[~treated] == 1.0):
            raise PositivityViolation(
                "propensity of exactly 1 on a control unit"
            )
        with np.errstate(divide="ignore"):
            ratio = np.where(treated, 1.0, -e / (1.0 - e))
        phi = (ratio * (y - m) - z * tau_hat) / p_hat
    elif estimand is Estimand.ATC:
        if np.any(e[treated] == 0.0):
            raise PositivityViolation(
                "propensity of exactly 0 on a treated unit"
            )
        with np.errstate(divide="ignore"):
            ratio = np.where(treated, (1.0 - e) / e, -1.0)
        phi = (ratio * (y - m) - (1.0 - z) * tau_hat) / (1.0 - p_hat)
    else:
        raise ValueError("influence values are defined for ATT and ATC")

    if center:
        phi = phi - phi.mean()
    return InfluenceVector(phi, estimand, p_hat, center)


def wild_bootstrap(
    phi: InfluenceVector,
    tau_hat: float,
    R: int = 1000,
    multiplier: str = RADEMACHER,
    seed: int = 0,
) -> WildDraws:
    """Run the multiplier perturbation and collect the scaled deviations.

    Replicate r draws its multipliers from the stream addressed by
    (seed, multiplier, r), so results do not depend on evaluation order.
    """
    if multiplier not in _MULTIPLIER_TAGS:
        raise ValueError(f"unknown multiplier family {multiplier!r}")
    if R < 2:
        raise ValueError("need at least two replicates")
    values = phi.phi
    n = values.size
    root_n = np.sqrt(n)
    key = key_pair(seed, _MULTIPLIER_TAGS[multiplier])
    deltas = np.empty(R)
    if multiplier == RADEMACHER:
        for r in range(R):
            xi = rng_at(key, r).integers(0, 2, n) * 2.0 - 1.0
            deltas[r] = (xi @ values) / root_n
    else:
        for r in range(R):
            xi = rng_at(key, r).standard_exponential(n)
            deltas[r] = (xi @ values) / root_n
    return WildDraws(deltas, multiplier, n, tau_hat, seed)


def iqr_se(draws: WildDraws) -> WildSE:
    """Standard error from the rescaled IQR of the deltas.

    The direct mean-of-squares reading is returned alongside. A zero IQR
    with genuinely varying draws is reported as an error; with constant
    draws both readings are degenerate by construction and zero is
    returned for the IQR path.
    """
    deltas = draws.deltas
    q75, q25 = np.percentile(deltas, [75.0, 25.0])
    iqr = q75 - q25
    if iqr == 0.0 and not np.all(deltas == deltas[0]):
        raise DegenerateDraws(
            "interquartile range collapsed on non-constant draws"
        )
    sigma_half = iqr / NORMAL_IQR
    sigma_star = float(np.mean(deltas ** 2))
    root_n = np.sqrt(draws.n)
    return WildSE(
        se=float(sigma_half / root_n),
        se_direct=float(np.sqrt(sigma_star) / root_n),
        sigma_half=float(sigma_half),
        sigma_star=sigma_star,
    )


def wild_ci(
    tau_hat: float, se: float, alpha: float = 0.05
) -> tuple[float, float, float]:
    """Normal-quantile interval and two-sided p-value."""
    if se < 0.0:
        raise ValueError("negative standard error")
    if se == 0.0:
        return tau_hat, tau_hat, (1.0 if tau_hat == 0.0 else 0.0)
    zq = float(norm.ppf(1.0 - alpha / 2.0))
    p = float(2.0 * norm.sf(abs(tau_hat) / se))
    return tau_hat - zq * se, tau_hat + zq * se, p


def bias_corrected(
    tau_hat: float, draws: WildDraws, alpha: float = 0.05
) -> tuple[float, float, float]:
    """Bias-corrected estimate with its interval, reusing the IQR SE.

    The corrected value is twice the original estimate minus the mean of
    the perturbed ones; with mean-zero multipliers on centered influence
    values the correction vanishes in expectation.
    """
    tau_star_mean = tau_hat + float(draws.deltas.mean()) / np.sqrt(draws.n)
    corrected = 2.0 * tau_hat - tau_star_mean
    se = iqr_se(draws).se
    zq = float(norm.ppf(1.0 - alpha / 2.0))
    return corrected, corrected - zq * se, corrected + zq * se
