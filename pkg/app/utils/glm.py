"""Working-model fits: logistic regression by IRLS, weighted least squares, QICu."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from app.config.app_config import (
    IRLS_MAX_ITERATIONS,
    IRLS_TOLERANCE,
    RANK_TOLERANCE,
    SEPARATION_BOUND,
)
from app.utils.exceptions import NotConverged, RankDeficient, Separation

logger = logging.getLogger(__name__)

_PROBABILITY_CEILING = np.nextafter(1.0, 0.0)
_PROBABILITY_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_abs_update: float
    log_quasi_likelihood: float


@dataclass(frozen=True)
class WlsFit:
    coefficients: np.ndarray
    residual_sum: float
    design_rank: int


def _as_design(design: np.ndarray) -> np.ndarray:
    x = np.asarray(design, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def pivoted_rank(design: np.ndarray, tolerance: float = RANK_TOLERANCE) -> tuple[int, np.ndarray]:
    """Numerical rank from a column-pivoted QR; also returns the pivot order."""
    r, piv = scipy.linalg.qr(design, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return 0, piv
    return int(np.count_nonzero(diag > tolerance * diag[0])), piv


def check_full_rank(design: np.ndarray, label: str = "design") -> None:
    """Raise :class:`RankDeficient` naming the columns a pivoted QR drops."""
    x = _as_design(design)
    n, p = x.shape
    if n < p:
        raise RankDeficient(range(n, p), f"{label} has {n} rows for {p} columns")
    rank, piv = pivoted_rank(x)
    if rank < p:
        dropped = sorted(int(c) for c in piv[rank:])
        raise RankDeficient(dropped, f"{label} is rank deficient (rank {rank} of {p}); dependent columns: {dropped}")


def log_quasi_likelihood(linear_index: np.ndarray, outcome: np.ndarray) -> float:
    """Binomial log-likelihood Σ a·log μ + (1-a)·log(1-μ) evaluated from the logit scale."""
    eta = np.asarray(linear_index, dtype=float)
    a = np.asarray(outcome, dtype=float)
    return float(np.sum(a * eta - np.logaddexp(0.0, eta)))


def fit_logistic(
    design: np.ndarray,
    outcome: np.ndarray,
    tolerance: float = IRLS_TOLERANCE,
    max_iterations: int = IRLS_MAX_ITERATIONS,
    separation_bound: float = SEPARATION_BOUND,
) -> LogisticFit:
    """Solve the logistic score Σ (a_i - expit(x_i'ξ)) x_i = 0 by IRLS.

    Args:
        design: (n, p) design matrix, intercept included by the caller.
        outcome: binary vector of length n.
        tolerance: convergence bound on max |Δcoefficient|.
        max_iterations: Newton step limit.
        separation_bound: any |coefficient| above this is treated as divergence.

    Returns:
        LogisticFit: converged coefficients and iteration diagnostics.

    Raises:
        Separation: outcomes constant, or coefficients diverge.
        RankDeficient: design lacks full column rank.
        NotConverged: iteration limit reached.
    """
    x = _as_design(design)
    a = np.asarray(outcome, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("Logistic design contains non-finite values")
    if a.size and (a.min() == a.max()):
        raise Separation(f"All {a.size} outcomes equal {a[0]:g}; the likelihood has no maximum")
    check_full_rank(x, "logistic design")

    coef = np.zeros(x.shape[1])
    max_update = np.inf
    for iteration in range(1, max_iterations + 1):
        mu = expit(x @ coef)
        weight = mu * (1.0 - mu)
        score = x.T @ (a - mu)
        information = x.T @ (weight[:, None] * x)
        try:
            step = scipy.linalg.solve(information, score, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            raise Separation(f"Fisher information became singular at iteration {iteration}") from e
        coef = coef + step
        max_update = float(np.max(np.abs(step)))
        logger.debug("IRLS iteration %d: max|update|=%.3e max|coef|=%.3e", iteration, max_update, np.max(np.abs(coef)))
        if np.max(np.abs(coef)) > separation_bound:
            raise Separation(
                f"Coefficient magnitude exceeded {separation_bound:g} at iteration {iteration} "
                "(perfect or quasi-complete separation)"
            )
        if max_update <= tolerance:
            return LogisticFit(
                coefficients=coef,
                converged=True,
                iterations=iteration,
                max_abs_update=max_update,
                log_quasi_likelihood=log_quasi_likelihood(x @ coef, a),
            )
    raise NotConverged(f"IRLS did not converge in {max_iterations} iterations (last max|update|={max_update:.3e})")


def predict_logistic(fit: LogisticFit | np.ndarray, design: np.ndarray) -> np.ndarray:
    """expit(design @ coefficients), kept strictly inside (0, 1).

    Accepts a single row or a matrix; a single row returns a 0-d array.
    """
    coef = fit.coefficients if isinstance(fit, LogisticFit) else np.asarray(fit, dtype=float)
    prob = expit(np.asarray(design, dtype=float) @ coef)
    return np.clip(prob, _PROBABILITY_FLOOR, _PROBABILITY_CEILING)


def logistic_score(coefficients: np.ndarray, design: np.ndarray, outcome: np.ndarray) -> np.ndarray:
    x = _as_design(design)
    return x.T @ (np.asarray(outcome, dtype=float) - expit(x @ coefficients))


def fit_wls(design: np.ndarray, outcome: np.ndarray, weights: np.ndarray | None = None) -> WlsFit:
    """Solve Σ w_i x_i (y_i - x_i'θ) = 0 through a pivoted QR of the √w-scaled design.

    Raises:
        RankDeficient: weighted design lacks full column rank; ``columns`` names
            the columns the pivoting drops.
    """
    x = _as_design(design)
    y = np.asarray(outcome, dtype=float)
    w = np.ones(y.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("WLS weights must be finite and non-negative")
    n, p = x.shape
    if n < p:
        raise RankDeficient(range(n, p), f"WLS design has {n} rows for {p} columns")

    root_w = np.sqrt(w)
    xw = x * root_w[:, None]
    yw = y * root_w
    q, r, piv = scipy.linalg.qr(xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.count_nonzero(diag > RANK_TOLERANCE * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < p:
        dropped = sorted(int(c) for c in piv[rank:])
        raise RankDeficient(dropped, f"WLS design is rank deficient (rank {rank} of {p}); dependent columns: {dropped}")

    coef = np.empty(p)
    coef[piv] = scipy.linalg.solve_triangular(r, q.T @ yw)
    resid = y - x @ coef
    return WlsFit(coefficients=coef, residual_sum=float(np.sum(w * resid**2)), design_rank=rank)


def qicu(fit: LogisticFit, design: np.ndarray, outcome: np.ndarray) -> float:
    """-2·QL + 2p with QL the binomial quasi-likelihood at the fitted means."""
    x = _as_design(design)
    ql = log_quasi_likelihood(x @ fit.coefficients, outcome)
    return -2.0 * ql + 2.0 * fit.coefficients.size
