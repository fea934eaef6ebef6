"""Stacked-equation (sandwich) variance for the weighting and doubly robust
estimators.

The effect estimate is expressed as one coordinate contrast of a parameter
stack theta that jointly solves the propensity score equations, the
outcome regression normal equations (doubly robust case), and the two
weighted-mean equations. With Psi the N x d matrix of per-unit estimating
functions, the variance is

    A = -(1/N) sum_i dPsi_i/dtheta'      (closed form, assembled here)
    B =  (1/N) sum_i Psi_i Psi_i'        (Gram form, PSD by construction)
    Var(tau_hat) = c' A^-1 B A^-T c / N

The closed-form A is the part that carries nuisance-estimation uncertainty
into the effect's standard error; every block below is the analytic
derivative of the corresponding Psi rows, and the test suite checks each
against a finite-difference Jacobian.

References
----------
Stefanski, L. A. and Boos, D. D. (2002). The calculus of M-estimation.
The American Statistician 56(1), 29-38.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import NegativeVariance, SingularJacobian
from .models import ORFit, PSFit
from .weighting import Estimand, PointEstimate, selection_values

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class ThetaStack:
    """Solved parameter stack with the contrast that reads off the effect.

    ``blocks`` records the layout as (name, size) pairs in stack order.
    The contrast has +1 at the treated-mean coordinate, -1 at the control
    one, zeros elsewhere, so ``contrast @ values`` is the point estimate.
    """

    blocks: tuple[tuple[str, int], ...]
    values: np.ndarray
    contrast: np.ndarray

    def __post_init__(self):
        total = sum(size for _, size in self.blocks)
        if self.values.shape != (total,) or self.contrast.shape != (total,):
            raise ValueError("block sizes do not add up to the stack length")

    @property
    def estimate(self) -> float:
        return float(self.contrast @ self.values)


@dataclass(frozen=True)
class SandwichParts:
    """The assembled matrices, kept for inspection and testing."""

    psi: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray


@dataclass(frozen=True)
class SandwichResult:
    variance: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    parts: SandwichParts


def theta_wate(ps_fit: PSFit, estimate: PointEstimate) -> ThetaStack:
    p1 = ps_fit.beta.size
    values = np.concatenate([ps_fit.beta, [estimate.mu1, estimate.mu0]])
    contrast = np.zeros(p1 + 2)
    contrast[-2], contrast[-1] = 1.0, -1.0
    return ThetaStack(
        (("ps_coef", p1), ("mu1", 1), ("mu0", 1)), values, contrast
    )


def theta_dr(
    ps_fit: PSFit, or_fit: ORFit, estimate: PointEstimate
) -> ThetaStack:
    p1 = ps_fit.beta.size
    q1 = or_fit.alpha.size
    values = np.concatenate(
        [ps_fit.beta, or_fit.alpha, [estimate.mu1, estimate.mu0]]
    )
    contrast = np.zeros(p1 + q1 + 2)
    contrast[-2], contrast[-1] = 1.0, -1.0
    return ThetaStack(
        (("ps_coef", p1), ("or_coef", q1), ("mu1", 1), ("mu0", 1)),
        values,
        contrast,
    )


# ---------------------------------------------------------------------------
# per-unit estimating function stacks
# ---------------------------------------------------------------------------

def stack_psi_wate(
    V: np.ndarray,
    z: np.ndarray,
    y: np.ndarray,
    estimand: Estimand,
    theta: np.ndarray,
) -> np.ndarray:
    """Psi rows for the weighting estimator: propensity score equations,
    then the two tilted mean-deviation equations."""
    V = np.asarray(V, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    p1 = V.shape[1]
    beta, mu1, mu0 = theta[:p1], theta[-2], theta[-1]

    e = expit(V @ beta)
    g, _ = selection_values(estimand, e)
    psi = np.empty((V.shape[0], p1 + 2))
    psi[:, :p1] = (z - e)[:, None] * V
    psi[:, p1] = z * g / e * (y - mu1)
    psi[:, p1 + 1] = (1.0 - z) * g / (1.0 - e) * (y - mu0)
    return psi


def stack_psi_dr(
    V: np.ndarray,
    W: np.ndarray,
    z: np.ndarray,
    y: np.ndarray,
    estimand: Estimand,
    theta: np.ndarray,
) -> np.ndarray:
    """Psi rows for the doubly robust estimator.

    Stack order: propensity score equations, the imputation arm's normal
    equations, then the two bias-corrected mean equations. Under the
    treated target the imputation arm is the controls and the control mean
    carries the odds tilt; under the control target the roles flip.
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    p1, q1 = V.shape[1], W.shape[1]
    beta = theta[:p1]
    alpha = theta[p1:p1 + q1]
    mu1, mu0 = theta[-2], theta[-1]

    e = expit(V @ beta)
    m = W @ alpha
    resid = y - m
    psi = np.empty((V.shape[0], p1 + q1 + 2))
    psi[:, :p1] = (z - e)[:, None] * V
    if estimand is Estimand.ATT:
        psi[:, p1:p1 + q1] = ((1.0 - z) * resid)[:, None] * W
        psi[:, p1 + q1] = z * (resid - mu1)
        psi[:, p1 + q1 + 1] = (1.0 - z) * e / (1.0 - e) * (resid - mu0)
    elif estimand is Estimand.ATC:
        psi[:, p1:p1 + q1] = (z * resid)[:, None] * W
        psi[:, p1 + q1] = z * (1.0 - e) / e * (resid - mu1)
        psi[:, p1 + q1 + 1] = (1.0 - z) * (resid - mu0)
    else:
        raise ValueError("doubly robust stack is defined for ATT and ATC")
    return psi


# ---------------------------------------------------------------------------
# closed-form outer derivative matrices
# ---------------------------------------------------------------------------

def a_matrix_wate(
    V: np.ndarray,
    z: np.ndarray,
    y: np.ndarray,
    estimand: Estimand,
    theta: np.ndarray,
) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n, p1 = V.shape
    beta, mu1, mu0 = theta[:p1], theta[-2], theta[-1]

    e = expit(V @ beta)
    g, dg = selection_values(estimand, e)
    A = np.zeros((p1 + 2, p1 + 2))
    A[:p1, :p1] = V.T @ (V * (e * (1.0 - e))[:, None]) / n
    # Tilted-mean rows differentiated in the propensity coefficients: the
    # selection function moves with beta (through dg) and so does the
    # inverse-propensity denominator.
    coef1 = -z * (dg - (1.0 - e) * g) / e * (y - mu1)
    coef0 = -(1.0 - z) * (dg + e * g) / (1.0 - e) * (y - mu0)
    A[p1, :p1] = coef1 @ V / n
    A[p1 + 1, :p1] = coef0 @ V / n
    A[p1, p1] = np.sum(z * g / e) / n
    A[p1 + 1, p1 + 1] = np.sum((1.0 - z) * g / (1.0 - e)) / n
    return A


def a_matrix_dr(
    V: np.ndarray,
    W: np.ndarray,
    z: np.ndarray,
    y: np.ndarray,
    estimand: Estimand,
    theta: np.ndarray,
) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n, p1 = V.shape
    q1 = W.shape[1]
    beta = theta[:p1]
    alpha = theta[p1:p1 + q1]
    mu1, mu0 = theta[-2], theta[-1]

    e = expit(V @ beta)
    resid = y - W @ alpha
    d = p1 + q1 + 2
    A = np.zeros((d, d))
    A[:p1, :p1] = V.T @ (V * (e * (1.0 - e))[:, None]) / n
    i1, i0 = p1 + q1, p1 + q1 + 1

    if estimand is Estimand.ATT:
        odds = e / (1.0 - e)
        control = 1.0 - z
        A[p1:i1, p1:i1] = W.T @ (W * control[:, None]) / n
        A[i1, p1:i1] = z @ W / n
        A[i1, i1] = z.sum() / n
        # the odds tilt moves with beta at rate odds/(1-e)
        A[i0, :p1] = -(control * odds * (resid - mu0)) @ V / n
        A[i0, p1:i1] = (control * odds) @ W / n
        A[i0, i0] = np.sum(control * odds) / n
    elif estimand is Estimand.ATC:
        inv_odds = (1.0 - e) / e
        A[p1:i1, p1:i1] = W.T @ (W * z[:, None]) / n
        A[i1, :p1] = (z * inv_odds * (resid - mu1)) @ V / n
        A[i1, p1:i1] = (z * inv_odds) @ W / n
        A[i1, i1] = np.sum(z * inv_odds) / n
        A[i0, p1:i1] = (1.0 - z) @ W / n
        A[i0, i0] = (1.0 - z).sum() / n
    else:
        raise ValueError("doubly robust stack is defined for ATT and ATC")
    return A


def b_matrix(psi: np.ndarray) -> np.ndarray:
    """Gram matrix of the per-unit rows; symmetric PSD by construction."""
    psi = np.asarray(psi, dtype=float)
    return psi.T @ psi / psi.shape[0]


def condition_estimate(A: np.ndarray) -> float:
    """Scale-aware condition estimate of the outer derivative matrix.

    The stacked score mixes rows on very different natural scales: the
    propensity block lives near unity while outcome rows carry squared
    covariates.  A raw 2-norm condition number on such a matrix reports
    the scale spread as near-singularity even when every block is
    perfectly regular.  Symmetric diagonal equilibration (Ruiz-style,
    one pass) removes that artifact before the estimate is taken, so the
    threshold test reacts to genuine rank trouble, not units.
    """
    A = np.asarray(A, dtype=float)
    d = np.sqrt(np.abs(np.diag(A)))
    d[d == 0.0] = 1.0
    return float(np.linalg.cond(A / np.outer(d, d)))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def sandwich_from_parts(
    psi: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    contrast: np.ndarray,
    tau_hat: float,
    alpha: float = 0.05,
) -> SandwichResult:
    """Variance, normal interval, and two-sided p-value for the contrast.

    Raises:
        SingularJacobian: condition estimate of A beyond 1e12; callers in
            replicate loops count these rather than crash.
        NegativeVariance: the quadratic form came out negative, which can
            only happen through numerical pathology; reported, not clamped.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    c = np.asarray(contrast, dtype=float)
    n = np.asarray(psi).shape[0]

    condition = condition_estimate(A)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularJacobian(
            f"outer derivative matrix condition {condition:.2e} "
            f"exceeds {CONDITION_LIMIT:.0e}"
        )
    # Sigma = A^-1 B A^-T without forming an inverse; two solves reuse the
    # same factorization cost at these dimensions.
    half = np.linalg.solve(A, B)
    Sigma = np.linalg.solve(A, half.T).T
    variance = float(c @ Sigma @ c) / n
    if variance < 0.0:
        raise NegativeVariance(
            f"sandwich quadratic form is negative ({variance:.3e})"
        )
    se = float(np.sqrt(variance))
    zq = float(norm.ppf(1.0 - alpha / 2.0))
    if se > 0.0:
        p_value = float(2.0 * norm.sf(abs(tau_hat) / se))
    else:
        p_value = 1.0 if tau_hat == 0.0 else 0.0
    return SandwichResult(
        variance,
        se,
        tau_hat - zq * se,
        tau_hat + zq * se,
        p_value,
        SandwichParts(np.asarray(psi, dtype=float), A, B, Sigma),
    )


def wate_sandwich(
    V: np.ndarray,
    z: np.ndarray,
    y: np.ndarray,
    estimand: Estimand,
    ps_fit: PSFit,
    estimate: PointEstimate,
    alpha: float = 0.05,
) -> SandwichResult:
    """Sandwich variance of the weighting estimator."""
    stack = theta_wate(ps_fit, estimate)
    psi = stack_psi_wate(V, z, y, estimand, stack.values)
    A = a_matrix_wate(V, z, y, estimand, stack.values)
    return sandwich_from_parts(
        psi, A, b_matrix(psi), stack.contrast, estimate.value, alpha
    )


def dr_sandwich(
    V: np.ndarray,
    W: np.ndarray,
    z: np.ndarray,
    y: np.ndarray,
    estimand: Estimand,
    ps_fit: PSFit,
    or_fit: ORFit,
    estimate: PointEstimate,
    alpha: float = 0.05,
) -> SandwichResult:
    """Sandwich variance of the doubly robust estimator."""
    stack = theta_dr(ps_fit, or_fit, estimate)
    psi = stack_psi_dr(V, W, z, y, estimand, stack.values)
    A = a_matrix_dr(V, W, z, y, estimand, stack.values)
    return sandwich_from_parts(
        psi, A, b_matrix(psi), stack.contrast, estimate.value, alpha
    )
