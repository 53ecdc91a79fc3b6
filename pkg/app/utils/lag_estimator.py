"""Doubly robust lag-effect estimator with stacked sandwich inference.

The stacked parameter is θ = (ξ, η, α, β):

* ξ: numerator propensity q_k = expit([1, S_k]'ξ)
* η: denominator propensity p_k = expit([1, R_k]'η)
* α: baseline working model over D_k's first block [g(R_k), q_k·f(S_k)]
* β: lag-effect working model over A_k·f(S_k)

ξ and η are fitted first; the outcome equation is then linear in (α, β) and
solved in closed form by weighted least squares with weights
W_k = A_k·q_k/p_k + (1 - A_k)(1 - q_k)/(1 - p_k). The covariance is the
empirical sandwich (1/n)·B⁻¹CB⁻ᵀ over the full stacked score, so the
uncertainty in ξ and η propagates into β.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.special import expit
from scipy.stats import norm

from app.config.app_config import (
    BREAD_CONDITION_LIMIT,
    DEFAULT_CLIP_EPSILON,
    DEFAULT_CONFIDENCE_LEVEL,
    FD_RELATIVE_STEP,
    NORMAL_QUANTILE_975,
)
from app.utils import glm
from app.utils.exceptions import NoRows, SingularBread, ZeroVariance
from app.utils.features import EstimationRows, FeatureSpec, with_intercept
from app.utils.numerics import exact_sum

logger = logging.getLogger(__name__)


# ============================================================================
# WEIGHTS AND DESIGN
# ============================================================================


@dataclass(frozen=True)
class WeightResult:
    """Per-row weights and which rows had q or p clipped."""

    values: np.ndarray
    q: np.ndarray
    p: np.ndarray
    clipped: np.ndarray

    @property
    def clip_events(self) -> int:
        return int(np.count_nonzero(self.clipped))


def clip_probability(prob: np.ndarray, clip: float) -> tuple[np.ndarray, np.ndarray]:
    prob = np.asarray(prob, dtype=float)
    clipped = np.clip(prob, clip, 1.0 - clip)
    return clipped, clipped != prob


def compute_weight(a: np.ndarray, q: np.ndarray, p: np.ndarray, clip: float = DEFAULT_CLIP_EPSILON) -> WeightResult:
    """W = a·q/p + (1-a)·(1-q)/(1-p) after clipping q and p into [clip, 1-clip].

    ``clipped`` counts one event per probability moved by the clip, so a row can
    contribute two.
    """
    a = np.asarray(a, dtype=float)
    q_c, q_hit = clip_probability(q, clip)
    p_c, p_hit = clip_probability(p, clip)
    values = np.where(a == 1.0, q_c / p_c, (1.0 - q_c) / (1.0 - p_c))
    return WeightResult(values=values, q=q_c, p=p_c, clipped=q_hit.astype(int) + p_hit.astype(int))


def augment_baseline(g_base: np.ndarray, q: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Baseline design [g(R_k), q_k·f(S_k)]; works on a single row or a row matrix."""
    g_base = np.asarray(g_base, dtype=float)
    f = np.asarray(f, dtype=float)
    q = np.asarray(q, dtype=float)
    if g_base.ndim == 1:
        return np.concatenate([g_base, q * f])
    return np.hstack([g_base, q[:, None] * f])


def baseline_f_columns(g: np.ndarray, f: np.ndarray, q: np.ndarray) -> tuple[int, ...]:
    """Indices of the f columns whose q·f_j adds rank to [g, earlier q·f columns].

    q·f_j already lies in span(g) when q is constant (empty S_k) or when S_k is
    discrete and g spans its indicators; those columns are left out of α.
    """
    if g.shape[0] == 0:
        return tuple(range(f.shape[1]))
    q = np.asarray(q, dtype=float)
    kept: list[int] = []
    current = g
    rank, _ = glm.pivoted_rank(current)
    for j in range(f.shape[1]):
        candidate = np.column_stack([current, q * f[:, j]])
        candidate_rank, _ = glm.pivoted_rank(candidate)
        if candidate_rank > rank:
            kept.append(j)
            current, rank = candidate, candidate_rank
    return tuple(kept)


@dataclass(frozen=True, eq=False)
class StackedProblem:
    """Row-level matrices of the stacked estimating equation for one S_k choice."""

    numerator_design: np.ndarray  # [1, S_k]
    denominator_design: np.ndarray  # [1, R_k]
    g: np.ndarray
    f: np.ndarray
    a: np.ndarray
    y: np.ndarray
    panel_index: np.ndarray
    n_panels: int
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    baseline_columns: tuple[int, ...] | None = None  # None keeps every q·f column

    @classmethod
    def from_rows(
        cls,
        rows: EstimationRows,
        spec: FeatureSpec,
        clip_epsilon: float = DEFAULT_CLIP_EPSILON,
        baseline_columns: tuple[int, ...] | None = None,
    ) -> "StackedProblem":
        return cls(
            numerator_design=with_intercept(rows.s),
            denominator_design=with_intercept(rows.r),
            g=spec.g_matrix(rows.r),
            f=spec.f_matrix(rows.s),
            a=rows.a.astype(float),
            y=rows.y_future,
            panel_index=rows.panel_index,
            n_panels=rows.n_panels,
            clip_epsilon=clip_epsilon,
            baseline_columns=baseline_columns,
        )

    @property
    def n_rows(self) -> int:
        return int(self.a.shape[0])

    @property
    def f_baseline(self) -> np.ndarray:
        """The f columns multiplied by q in the baseline block."""
        if self.baseline_columns is None:
            return self.f
        return self.f[:, list(self.baseline_columns)]

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        """Block lengths (|ξ|, |η|, |α|, |β|)."""
        pf = self.f.shape[1]
        return (self.numerator_design.shape[1], self.denominator_design.shape[1], self.g.shape[1] + self.f_baseline.shape[1], pf)

    @property
    def slices(self) -> tuple[slice, slice, slice, slice]:
        bounds = np.cumsum((0, *self.sizes))
        return tuple(slice(int(bounds[i]), int(bounds[i + 1])) for i in range(4))  # type: ignore[return-value]

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.asarray(theta, dtype=float)[s] for s in self.slices)  # type: ignore[return-value]

    def weights(self, xi: np.ndarray, eta: np.ndarray) -> WeightResult:
        return compute_weight(
            self.a,
            expit(self.numerator_design @ xi),
            expit(self.denominator_design @ eta),
            self.clip_epsilon,
        )

    def outcome_design(self, q: np.ndarray) -> np.ndarray:
        """D_k = [g, q·f, A·f] for every row (q·f restricted to ``baseline_columns``)."""
        return np.hstack([augment_baseline(self.g, q, self.f_baseline), self.a[:, None] * self.f])

    def row_scores(self, theta: np.ndarray) -> np.ndarray:
        """Stacked per-row summands in θ order: (l, m, u); shape (n_rows, |θ|)."""
        xi, eta, alpha, beta = self.split(theta)
        q_raw = expit(self.numerator_design @ xi)
        p_raw = expit(self.denominator_design @ eta)
        w = self.weights(xi, eta)
        d = self.outcome_design(w.q)
        resid = self.y - d @ np.concatenate([alpha, beta])
        return np.hstack(
            [
                (self.a - q_raw)[:, None] * self.numerator_design,
                (self.a - p_raw)[:, None] * self.denominator_design,
                (w.values * resid)[:, None] * d,
            ]
        )

    def panel_scores(self, theta: np.ndarray) -> np.ndarray:
        """Per-panel stacked scores; panels without rows contribute zeros."""
        per_row = self.row_scores(theta)
        out = np.zeros((self.n_panels, per_row.shape[1]))
        np.add.at(out, self.panel_index, per_row)
        return out

    def outcome_score_total(self, theta: np.ndarray) -> np.ndarray:
        xi, eta, alpha, beta = self.split(theta)
        w = self.weights(xi, eta)
        d = self.outcome_design(w.q)
        return d.T @ (w.values * (self.y - d @ np.concatenate([alpha, beta])))


# ============================================================================
# RESULT TYPES
# ============================================================================


@dataclass(frozen=True)
class StackedScore:
    u: np.ndarray
    l: np.ndarray  # noqa: E741
    m: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        """Concatenation in θ order (ξ, η, α, β) → (l, m, u)."""
        return np.concatenate([self.l, self.m, self.u])


@dataclass(frozen=True)
class EstimateOptions:
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    fd_relative_step: float = FD_RELATIVE_STEP
    condition_limit: float = BREAD_CONDITION_LIMIT
    compute_covariance: bool = True


@dataclass(frozen=True, eq=False)
class ThetaEstimate:
    """Fitted stacked parameter θ = (ξ, η, α, β) and its sandwich covariance."""

    xi: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    covariance: np.ndarray | None
    n_panels: int
    clip_events: int
    n_rows: int = 0
    f_names: tuple[str, ...] = ()
    g_names: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)
    baseline_columns: tuple[int, ...] | None = None  # f columns entering α as q·f; None means all

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.xi, self.eta, self.alpha, self.beta])

    @property
    def beta_slice(self) -> slice:
        start = self.xi.size + self.eta.size + self.alpha.size
        return slice(start, start + self.beta.size)

    @property
    def beta_covariance(self) -> np.ndarray:
        if self.covariance is None:
            raise ZeroVariance("Estimate was computed without a covariance")
        return self.covariance[self.beta_slice, self.beta_slice]

    @property
    def beta_std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.beta_covariance), 0.0, None))

    @property
    def baseline_indices(self) -> tuple[int, ...]:
        return tuple(range(len(self.f_names))) if self.baseline_columns is None else self.baseline_columns

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return (
            *(f"xi[{i}]" for i in range(self.xi.size)),
            *(f"eta[{i}]" for i in range(self.eta.size)),
            *(f"alpha[{n}]" for n in self.g_names),
            *(f"alpha[q*{self.f_names[j]}]" for j in self.baseline_indices),
            *(f"beta[{n}]" for n in self.f_names),
        )


@dataclass(frozen=True)
class WaldReport:
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    p_value: float
    contrast: np.ndarray
    level: float = DEFAULT_CONFIDENCE_LEVEL

    @property
    def z(self) -> float:
        return self.estimate / self.std_error


# ============================================================================
# ESTIMATION
# ============================================================================


def estimate(
    rows: EstimationRows,
    spec: FeatureSpec,
    options: EstimateOptions | None = None,
    denominator_fit: glm.LogisticFit | None = None,
) -> ThetaEstimate:
    """Fit θ by the two-stage procedure and attach the sandwich covariance.

    Args:
        rows: estimation rows built with ``spec``.
        spec: feature specification (R_k, S_k, f, g).
        options: clipping and inference settings.
        denominator_fit: an already fitted η (the R_k model does not depend
            on the S_k choice, so callers looping over S_k fit it once).

    Raises:
        NoRows: fewer than two panels contribute rows.
        Separation, RankDeficient, NotConverged: from the working-model fits.
        SingularBread: the stacked Jacobian is numerically singular.
    """
    options = options or EstimateOptions()
    if len(rows) == 0:
        raise NoRows("No estimation rows: every panel has K <= lag")
    if rows.n_contributing_panels < 2:
        raise NoRows(f"Only {rows.n_contributing_panels} panel contributes rows; at least 2 are required")

    problem = StackedProblem.from_rows(rows, spec, options.clip_epsilon)
    xi_fit = glm.fit_logistic(problem.numerator_design, problem.a)
    eta_fit = denominator_fit or glm.fit_logistic(problem.denominator_design, problem.a)
    weights = problem.weights(xi_fit.coefficients, eta_fit.coefficients)
    if weights.clip_events:
        logger.warning(
            "Clipped %d propensities into [%g, %g]", weights.clip_events, options.clip_epsilon, 1 - options.clip_epsilon
        )

    baseline_columns = baseline_f_columns(problem.g, problem.f, weights.q)
    if len(baseline_columns) < problem.f.shape[1]:
        logger.debug(
            "q*f columns %s lie in span(g); baseline keeps %s",
            [spec.f_names[j] for j in range(problem.f.shape[1]) if j not in baseline_columns],
            [spec.f_names[j] for j in baseline_columns],
        )
    problem = replace(problem, baseline_columns=baseline_columns)

    design = problem.outcome_design(weights.q)
    glm.check_full_rank(design, "outcome design [g, q*f, A*f]")
    wls = glm.fit_wls(design, problem.y, weights.values)
    n_alpha = problem.sizes[2]
    alpha, beta = wls.coefficients[:n_alpha], wls.coefficients[n_alpha:]

    theta = np.concatenate([xi_fit.coefficients, eta_fit.coefficients, alpha, beta])
    diagnostics = {
        "n_rows": problem.n_rows,
        "n_panels": problem.n_panels,
        "clip_events": weights.clip_events,
        "numerator_iterations": xi_fit.iterations,
        "numerator_converged": xi_fit.converged,
        "denominator_iterations": eta_fit.iterations,
        "denominator_converged": eta_fit.converged,
        "weight_min": float(weights.values.min()),
        "weight_max": float(weights.values.max()),
        "score_max_norm": float(np.max(np.abs(exact_sum(problem.panel_scores(theta))))),
    }
    covariance = None
    if options.compute_covariance:
        covariance, bread_condition = _sandwich(theta, problem, options)
        diagnostics["bread_condition"] = bread_condition

    logger.info("Estimated beta=%s from %d rows in %d panels", np.array2string(beta, precision=4), problem.n_rows, problem.n_panels)
    return ThetaEstimate(
        xi=xi_fit.coefficients,
        eta=eta_fit.coefficients,
        alpha=alpha,
        beta=beta,
        covariance=covariance,
        n_panels=problem.n_panels,
        clip_events=weights.clip_events,
        n_rows=problem.n_rows,
        f_names=spec.f_names,
        g_names=spec.g_names,
        diagnostics=diagnostics,
        baseline_columns=baseline_columns,
    )


def _theta_vector(theta: ThetaEstimate | np.ndarray) -> np.ndarray:
    return theta.theta if isinstance(theta, ThetaEstimate) else np.asarray(theta, dtype=float)


def stacked_score(theta: ThetaEstimate | np.ndarray, problem: StackedProblem) -> list[StackedScore]:
    """Per-panel (u, l, m) blocks of the stacked estimating function."""
    scores = problem.panel_scores(_theta_vector(theta))
    s_xi, s_eta, s_alpha, s_beta = problem.slices
    u_block = slice(s_alpha.start, s_beta.stop)
    return [StackedScore(u=row[u_block], l=row[s_xi], m=row[s_eta]) for row in scores]


# ============================================================================
# SANDWICH COVARIANCE
# ============================================================================


def bread_matrix(theta: ThetaEstimate | np.ndarray, problem: StackedProblem, relative_step: float = FD_RELATIVE_STEP) -> np.ndarray:
    """B_n = (1/n)·Σ ∇θ ψ: analytic self-blocks, central differences for ∂u/∂ξ and ∂u/∂η."""
    theta = _theta_vector(theta)
    xi, eta, _, _ = problem.split(theta)
    s_xi, s_eta, s_alpha, s_beta = problem.slices
    u_rows = slice(s_alpha.start, s_beta.stop)
    m = theta.size
    jac = np.zeros((m, m))

    q = expit(problem.numerator_design @ xi)
    p = expit(problem.denominator_design @ eta)
    x_num, x_den = problem.numerator_design, problem.denominator_design
    jac[s_xi, s_xi] = -(x_num.T @ ((q * (1.0 - q))[:, None] * x_num))
    jac[s_eta, s_eta] = -(x_den.T @ ((p * (1.0 - p))[:, None] * x_den))
    w = problem.weights(xi, eta)
    d = problem.outcome_design(w.q)
    jac[u_rows, u_rows] = -(d.T @ (w.values[:, None] * d))

    for j in range(s_xi.start, s_eta.stop):
        h = relative_step * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        jac[u_rows, j] = (problem.outcome_score_total(up) - problem.outcome_score_total(down)) / (2.0 * h)
    return jac / problem.n_panels


def numeric_jacobian(theta: ThetaEstimate | np.ndarray, problem: StackedProblem, relative_step: float = FD_RELATIVE_STEP) -> np.ndarray:
    """(1/n)·∇θ of the summed stacked score, every column by central differences."""
    theta = _theta_vector(theta)
    jac = np.zeros((theta.size, theta.size))
    for j in range(theta.size):
        h = relative_step * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        jac[:, j] = (problem.row_scores(up).sum(axis=0) - problem.row_scores(down).sum(axis=0)) / (2.0 * h)
    return jac / problem.n_panels


def meat_matrix(theta: ThetaEstimate | np.ndarray, problem: StackedProblem) -> np.ndarray:
    """C_n = (1/n)·Σ_panels ψψ'."""
    scores = problem.panel_scores(_theta_vector(theta))
    outer = scores[:, :, None] * scores[:, None, :]
    return exact_sum(outer, axis=0) / problem.n_panels


def _sandwich(theta: np.ndarray, problem: StackedProblem, options: EstimateOptions) -> tuple[np.ndarray, float]:
    bread = bread_matrix(theta, problem, options.fd_relative_step)
    condition = float(np.linalg.cond(bread))
    if not np.isfinite(condition) or condition > options.condition_limit:
        raise SingularBread(f"Bread matrix condition number {condition:.3e} exceeds {options.condition_limit:.0e}")
    meat = meat_matrix(theta, problem)
    bread_inv = scipy.linalg.inv(bread)
    cov = bread_inv @ meat @ bread_inv.T / problem.n_panels
    cov = 0.5 * (cov + cov.T)
    smallest = float(np.linalg.eigvalsh(cov).min())
    if smallest < -1e-8 * float(np.trace(cov)):
        logger.warning("Sandwich covariance has a negative eigenvalue %.3e", smallest)
    return cov, condition


def sandwich_covariance(
    theta: ThetaEstimate | np.ndarray, problem: StackedProblem, options: EstimateOptions | None = None
) -> np.ndarray:
    """(1/n)·B_n⁻¹ C_n B_n⁻ᵀ over the full stacked parameter.

    Raises:
        SingularBread: cond(B_n) above the configured limit.
    """
    cov, _ = _sandwich(_theta_vector(theta), problem, options or EstimateOptions())
    return cov


# ============================================================================
# WALD INFERENCE
# ============================================================================


def normal_quantile(level: float) -> float:
    if level == DEFAULT_CONFIDENCE_LEVEL:
        return NORMAL_QUANTILE_975
    return float(norm.ppf(0.5 + level / 2.0))


def wald(theta_estimate: ThetaEstimate, contrast: np.ndarray, level: float = DEFAULT_CONFIDENCE_LEVEL) -> WaldReport:
    """Wald interval and two-sided test for contrast'β.

    Raises:
        ValueError: contrast length differs from |β|.
        ZeroVariance: the contrast has zero or non-finite variance.
    """
    c = np.asarray(contrast, dtype=float)
    if c.shape != theta_estimate.beta.shape:
        raise ValueError(f"Contrast has length {c.size}; beta has {theta_estimate.beta.size}")
    variance = float(c @ theta_estimate.beta_covariance @ c)
    if not np.isfinite(variance) or variance <= 0.0:
        raise ZeroVariance(f"Contrast variance is {variance!r}")
    value = float(c @ theta_estimate.beta)
    return wald_from_moments(value, float(np.sqrt(variance)), c, level)


def wald_from_moments(value: float, std_error: float, contrast: np.ndarray | None = None, level: float = DEFAULT_CONFIDENCE_LEVEL) -> WaldReport:
    if not np.isfinite(std_error) or std_error <= 0.0:
        raise ZeroVariance(f"Standard error is {std_error!r}")
    half_width = normal_quantile(level) * std_error
    return WaldReport(
        estimate=value,
        std_error=std_error,
        ci_low=value - half_width,
        ci_high=value + half_width,
        p_value=float(2.0 * norm.sf(abs(value) / std_error)),
        contrast=np.array([1.0]) if contrast is None else contrast,
        level=level,
    )
