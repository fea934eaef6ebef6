"""Nuisance model fitting: logistic propensity scores and per-arm linear
outcome regressions, plus the per-unit score matrices both contribute to the
stacked variance machinery.

The logistic fit is a plain Newton/IRLS iteration run to a sup-norm score
tolerance. Nothing here is regularized or clipped: separation and rank
problems surface as typed exceptions so replicate loops can count them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.special import expit

from .errors import (
    ArmTooSmall,
    EmptyArm,
    NonConvergence,
    RankDeficient,
    SingularInformation,
)

SCORE_TOL = 1e-8
MAX_ITERATIONS = 100
COEF_DIVERGENCE = 30.0
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class DesignMatrix:
    """A validated model matrix.

    Parameters
    ----------
    values : ndarray of shape (N, k)
        The matrix itself. When ``has_intercept`` the first column must be
        identically one.
    column_names : tuple of str
        One identifier per column, used in reports and error messages.
    has_intercept : bool
        Whether the first column is the intercept.
    """

    values: npt.NDArray[np.float64]
    column_names: tuple[str, ...]
    has_intercept: bool = True

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValueError("design must be two-dimensional")
        n, k = values.shape
        if len(self.column_names) != k:
            raise ValueError(
                f"{k} columns but {len(self.column_names)} column names"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("design contains non-finite entries")
        if self.has_intercept and not np.all(values[:, 0] == 1.0):
            raise ValueError("first column must be identically 1")
        if n < k + 1:
            raise ValueError(f"need at least {k + 1} rows for {k} columns")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_columns(
        cls, named_columns: dict[str, npt.ArrayLike], intercept: bool = True
    ) -> "DesignMatrix":
        """Assemble a design from named columns, prepending an intercept."""
        names = list(named_columns)
        cols = [np.asarray(named_columns[name], dtype=float) for name in names]
        if intercept:
            cols.insert(0, np.ones_like(cols[0]))
            names.insert(0, "intercept")
        return cls(np.column_stack(cols), tuple(names), intercept)


@dataclass(frozen=True)
class PSFit:
    """Fitted logistic propensity model.

    Attributes
    ----------
    beta : ndarray
        Coefficients, one per design column.
    fitted : ndarray
        Fitted probabilities, strictly inside (0, 1).
    converged : bool
    iterations : int
        Newton steps taken.
    max_score_norm : float
        Sup-norm of the score at the returned coefficients.
    """

    beta: npt.NDArray[np.float64]
    fitted: npt.NDArray[np.float64]
    converged: bool
    iterations: int
    max_score_norm: float


@dataclass(frozen=True)
class ORFit:
    """Fitted single-arm linear outcome model.

    ``fitted_all`` evaluates the arm's regression at every unit, which is
    what imputation-style estimators need for the opposite arm.
    """

    alpha: npt.NDArray[np.float64]
    fitted_all: npt.NDArray[np.float64]
    n_arm: int


def fit_logistic(
    design: DesignMatrix,
    z: npt.ArrayLike,
    start: npt.ArrayLike | None = None,
) -> PSFit:
    """Maximum likelihood logistic regression by Newton iteration.

    Parameters
    ----------
    design : DesignMatrix
        Propensity model matrix, full column rank.
    z : array-like of 0/1
        Treatment indicator; both arms must be non-empty.
    start : array-like, optional
        Starting coefficients. Defaults to zero; resampling loops pass the
        original-sample fit to cut the iteration count.

    Returns
    -------
    PSFit

    Raises
    ------
    EmptyArm
        If either arm has no units.
    NonConvergence
        Iteration cap reached, coefficients diverged past
        ``COEF_DIVERGENCE`` (the separation rule), or fitted probabilities
        collapsed onto 0/1.
    SingularInformation
        The weighted Gram matrix is not usable for a Newton step.
    """
    V = design.values
    z = np.asarray(z, dtype=float)
    if z.shape != (V.shape[0],):
        raise ValueError("treatment vector does not match design rows")
    if not np.all((z == 0.0) | (z == 1.0)):
        raise ValueError("treatment must be coded 0/1")
    n1 = z.sum()
    if n1 == 0 or n1 == len(z):
        raise EmptyArm("logistic fit needs units in both arms")

    beta = (
        np.zeros(V.shape[1])
        if start is None
        else np.array(start, dtype=float, copy=True)
    )
    for iteration in range(MAX_ITERATIONS + 1):
        e = expit(V @ beta)
        score = V.T @ (z - e)
        sup = float(np.max(np.abs(score)))
        if sup <= SCORE_TOL:
            if np.any(e <= 0.0) or np.any(e >= 1.0):
                raise NonConvergence(
                    "fitted probabilities reached 0 or 1; separation suspected"
                )
            return PSFit(beta, e, True, iteration, sup)
        if iteration == MAX_ITERATIONS:
            break
        w = e * (1.0 - e)
        info = V.T @ (V * w[:, None])
        condition = np.linalg.cond(info)
        if not np.isfinite(condition) or condition > CONDITION_LIMIT:
            if np.any(np.abs(beta) > COEF_DIVERGENCE):
                raise NonConvergence(
                    "coefficients diverged with a singular information "
                    "matrix; separation suspected"
                )
            raise SingularInformation(
                f"information matrix condition {condition:.2e} exceeds "
                f"{CONDITION_LIMIT:.0e}"
            )
        beta = beta + np.linalg.solve(info, score)
        if np.any(np.abs(beta) > COEF_DIVERGENCE):
            raise NonConvergence(
                f"a coefficient exceeded {COEF_DIVERGENCE} in absolute "
                "value; separation suspected"
            )
    raise NonConvergence(
        f"score sup-norm {sup:.2e} after {MAX_ITERATIONS} iterations"
    )


def score_logistic(
    fit: PSFit, design: DesignMatrix, z: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """Per-unit score rows ``(z_i - e_i) v_i`` of the logistic likelihood.

    Column sums vanish (within the score tolerance) at the fitted
    coefficients, which is the first-order condition the sandwich stack
    relies on.
    """
    if not fit.converged:
        raise ValueError("score requested from a non-converged fit")
    z = np.asarray(z, dtype=float)
    e = expit(design.values @ fit.beta)
    return (z - e)[:, None] * design.values


def fit_ols(
    design: DesignMatrix, y: npt.ArrayLike, arm_mask: npt.ArrayLike
) -> ORFit:
    """Least squares on the rows selected by ``arm_mask``.

    The returned fit evaluates the arm's regression surface at every unit
    (``fitted_all``), not only at the fitting arm.

    Raises
    ------
    ArmTooSmall
        If the arm has no more units than the design has columns.
    RankDeficient
        If the arm-restricted design is collinear.
    """
    W = design.values
    y = np.asarray(y, dtype=float)
    mask = np.asarray(arm_mask).astype(bool)
    if mask.shape != (W.shape[0],):
        raise ValueError("arm mask does not match design rows")
    n_arm = int(mask.sum())
    if n_arm <= W.shape[1]:
        raise ArmTooSmall(
            f"{n_arm} units in arm for {W.shape[1]} design columns"
        )
    alpha, _, rank, _ = scipy.linalg.lstsq(
        W[mask], y[mask], lapack_driver="gelsy"
    )
    if rank < W.shape[1]:
        raise RankDeficient(
            f"arm design rank {rank} below {W.shape[1]} columns"
        )
    return ORFit(alpha, W @ alpha, n_arm)


def score_ols(
    fit: ORFit, design: DesignMatrix, y: npt.ArrayLike, arm_mask: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """Per-unit normal-equation rows ``mask_i w_i (y_i - w_i' alpha)``.

    Rows off the fitting arm are zero; column sums over the arm vanish by
    the normal equations.
    """
    W = design.values
    y = np.asarray(y, dtype=float)
    mask = np.asarray(arm_mask, dtype=float)
    residual = mask * (y - W @ fit.alpha)
    return residual[:, None] * W
