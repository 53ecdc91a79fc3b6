"""Efficient-score estimator of β for the case S_k = R_k.

The estimating equation is

    Σ_rows f(R_k)/σ_k · (A_k - ρ_k) · (Y_{k+ℓ} - μ_k - A_k f(R_k)'β) = 0

with plug-in nuisances: ρ_k the fitted denominator propensity, μ_k the
control-arm mean of the future outcome, and σ_k = (1-ρ_k)·v1_k + ρ_k·v0_k built
from per-arm conditional variances. The equation is linear in β.

R_k is assumed to hold every parent of Y_{k+ℓ} other than A_k; that cannot be
checked from data and is left to the analyst.
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

from app.config.app_config import DEFAULT_CLIP_EPSILON, VARIANCE_FLOOR_FRACTION
from app.utils import glm
from app.utils.exceptions import NoControlRows, RankDeficient
from app.utils.features import EstimationRows, FeatureSpec, with_intercept
from app.utils.lag_estimator import EstimateOptions, StackedProblem, ThetaEstimate, clip_probability, estimate
from app.utils.numerics import exact_sum

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EfficientOptions:
    """``baseline``: where μ_k comes from; ``variance_model``: how σ_k is built."""

    baseline: Literal["control_arm", "working_model"] = "control_arm"
    variance_model: Literal["per_arm", "constant"] = "per_arm"
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    variance_floor_fraction: float = VARIANCE_FLOOR_FRACTION


@dataclass(frozen=True, eq=False)
class EfficientNuisances:
    rho: np.ndarray
    mu: np.ndarray
    variance_treated: np.ndarray
    variance_control: np.ndarray
    sigma: np.ndarray
    variance_floor: float
    propensity_coefficients: np.ndarray
    baseline_coefficients: np.ndarray


@dataclass(frozen=True, eq=False)
class EfficientFit:
    beta: np.ndarray
    covariance: np.ndarray
    variance_ratio_vs_main: float
    nuisances: EfficientNuisances
    main_beta: np.ndarray
    score_max_norm: float

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _require_s_equals_r(spec: FeatureSpec) -> None:
    if spec.s_columns != spec.r_columns:
        raise ValueError(
            "The efficient score is defined for S_k = R_k; "
            f"got S_k columns {list(spec.s_columns)} and R_k columns {list(spec.r_columns)}"
        )


def efficient_score_rows(
    f: np.ndarray, a: np.ndarray, rho: np.ndarray, resid_base: np.ndarray, sigma: np.ndarray, beta: np.ndarray
) -> np.ndarray:
    """Per-row f/σ·(A - ρ)·(Y - μ - A·f'β), with ``resid_base`` = Y - μ."""
    return (f / sigma[:, None]) * ((a - rho) * (resid_base - a * (f @ beta)))[:, None]


def solve_efficient_beta(f: np.ndarray, a: np.ndarray, rho: np.ndarray, resid_base: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Root of the efficient score in β; any common positive scale of σ cancels."""
    lhs = f.T @ (((a - rho) * a / sigma)[:, None] * f)
    rhs = f.T @ ((a - rho) * resid_base / sigma)
    glm.check_full_rank(lhs, "efficient-score normal matrix")
    return scipy.linalg.solve(lhs, rhs)


def _arm_variance(g: np.ndarray, squared: np.ndarray, arm: np.ndarray, label: str) -> np.ndarray:
    if not arm.any():
        raise RankDeficient((), f"No {label} rows to fit the conditional variance")
    fit = glm.fit_wls(g[arm], squared[arm])
    return g @ fit.coefficients


def fit_efficient(
    rows: EstimationRows,
    spec: FeatureSpec,
    options: EfficientOptions | None = None,
    main: ThetaEstimate | None = None,
) -> EfficientFit:
    """Fit β from the efficient score and compare its variance with the main estimator.

    Args:
        rows: estimation rows built with ``spec``.
        spec: feature specification with S_k = R_k.
        options: nuisance choices.
        main: the main estimator on the same rows; fitted here when omitted.

    Raises:
        ValueError: S_k differs from R_k.
        NoControlRows: no A=0 rows for the control-arm mean.
        RankDeficient: a nuisance regression or the β system is singular.
    """
    options = options or EfficientOptions()
    _require_s_equals_r(spec)
    main = main or estimate(rows, spec, EstimateOptions(clip_epsilon=options.clip_epsilon))
    problem = StackedProblem.from_rows(rows, spec, options.clip_epsilon, main.baseline_columns)
    a, y, f, g = problem.a, problem.y, problem.f, problem.g

    rho, _ = clip_probability(glm.predict_logistic(main.eta, with_intercept(rows.r)), options.clip_epsilon)

    if options.baseline == "working_model":
        n_g = g.shape[1]
        baseline_coef = main.alpha
        mu = g @ main.alpha[:n_g] + rho * (problem.f_baseline @ main.alpha[n_g:])
    else:
        control = a == 0.0
        if not control.any():
            raise NoControlRows("No A=0 rows are available to fit the control-arm mean")
        baseline_coef = glm.fit_wls(g[control], y[control]).coefficients
        mu = g @ baseline_coef

    floor = options.variance_floor_fraction * float(np.var(y))
    if options.variance_model == "constant":
        v1 = v0 = np.ones_like(y)
        sigma = np.ones_like(y)
    else:
        beta0 = solve_efficient_beta(f, a, rho, y - mu, np.ones_like(y))
        squared = (y - mu - a * (f @ beta0)) ** 2
        v1 = np.maximum(_arm_variance(g, squared, a == 1.0, "A=1"), floor)
        v0 = np.maximum(_arm_variance(g, squared, a == 0.0, "A=0"), floor)
        sigma = (1.0 - rho) * v1 + rho * v0

    beta = solve_efficient_beta(f, a, rho, y - mu, sigma)

    # Sandwich for β with the nuisances held at their fitted values.
    row_score = efficient_score_rows(f, a, rho, y - mu, sigma, beta)
    panel_score = np.zeros((problem.n_panels, f.shape[1]))
    np.add.at(panel_score, problem.panel_index, row_score)
    n = problem.n_panels
    bread = -(f.T @ (((a - rho) * a / sigma)[:, None] * f)) / n
    meat = exact_sum(panel_score[:, :, None] * panel_score[:, None, :], axis=0) / n
    bread_inv = scipy.linalg.inv(bread)
    covariance = bread_inv @ meat @ bread_inv.T / n
    covariance = 0.5 * (covariance + covariance.T)

    contrast = spec.primary_contrast()
    ratio = float((contrast @ covariance @ contrast) / (contrast @ main.beta_covariance @ contrast))
    score_norm = float(np.max(np.abs(exact_sum(panel_score))))
    logger.info("Efficient beta=%s, variance ratio vs main %.4f", np.array2string(beta, precision=4), ratio)

    return EfficientFit(
        beta=beta,
        covariance=covariance,
        variance_ratio_vs_main=ratio,
        nuisances=EfficientNuisances(
            rho=rho,
            mu=mu,
            variance_treated=v1,
            variance_control=v0,
            sigma=sigma,
            variance_floor=floor,
            propensity_coefficients=main.eta,
            baseline_coefficients=baseline_coef,
        ),
        main_beta=main.beta,
        score_max_norm=score_norm,
    )
