"""Replication suites checking the estimators against simulated ground truth.

Every replicate simulates its own panel set from the stream
``(seed, suite, n_panels, replicate)``, so suites are reproducible and
independent of how replicates are spread over worker processes. Summaries use
exactly rounded sums, so ``threads=1`` and ``threads=8`` write the same bytes.
"""

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from app.components.oracle import check_identification, overlap_limit_target
from app.components.simulator import ScenarioSpec, simulate_panels
from app.config.app_config import DEFAULT_CLIP_EPSILON, DEFAULT_CONFIDENCE_LEVEL
from app.config.schemas import IdentificationCheck, RobustnessVariant
from app.utils.efficient_score import fit_efficient
from app.utils.exceptions import LagEffectsError
from app.utils.features import FeatureSpec, build_rows
from app.utils.lag_estimator import EstimateOptions, estimate, wald
from app.utils.numerics import exact_mean

logger = logging.getLogger(__name__)

SUITE_STREAMS = {"consistency": 1, "double_robustness": 2, "efficiency": 3, "overlap": 4}


# ============================================================================
# REPLICATES
# ============================================================================


@dataclass(frozen=True)
class ReplicateTask:
    scenario: ScenarioSpec
    spec: FeatureSpec
    n_panels: int
    seed: int
    path: tuple[int, ...]
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    confidence_level: float = DEFAULT_CONFIDENCE_LEVEL


@dataclass(frozen=True, eq=False)
class ReplicateOutcome:
    estimate: float = math.nan
    std_error: float = math.nan
    ci_low: float = math.nan
    ci_high: float = math.nan
    p_value: float = math.nan
    beta: np.ndarray = field(default_factory=lambda: np.empty(0))
    efficient_estimate: float = math.nan
    variance_ratio: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def estimate_replicate(task: ReplicateTask) -> ReplicateOutcome:
    """Simulate one panel set and report the main estimator's primary contrast."""
    panels = simulate_panels(task.scenario, task.n_panels, task.seed, *task.path)
    try:
        rows = build_rows(panels, task.spec)
        fit = estimate(rows, task.spec, EstimateOptions(clip_epsilon=task.clip_epsilon))
        report = wald(fit, task.spec.primary_contrast(), task.confidence_level)
    except LagEffectsError as e:
        logger.warning("Replicate %s failed: %s", task.path, e)
        return ReplicateOutcome(error=e.category)
    return ReplicateOutcome(
        estimate=report.estimate,
        std_error=report.std_error,
        ci_low=report.ci_low,
        ci_high=report.ci_high,
        p_value=report.p_value,
        beta=fit.beta,
    )


def efficiency_replicate(task: ReplicateTask) -> ReplicateOutcome:
    """Main and efficient-score estimates of the same contrast on one panel set (S_k = R_k)."""
    panels = simulate_panels(task.scenario, task.n_panels, task.seed, *task.path)
    contrast = task.spec.primary_contrast()
    try:
        rows = build_rows(panels, task.spec)
        main = estimate(rows, task.spec, EstimateOptions(clip_epsilon=task.clip_epsilon))
        efficient = fit_efficient(rows, task.spec, main=main)
    except LagEffectsError as e:
        logger.warning("Efficiency replicate %s failed: %s", task.path, e)
        return ReplicateOutcome(error=e.category)
    return ReplicateOutcome(
        estimate=float(contrast @ main.beta),
        beta=main.beta,
        efficient_estimate=float(contrast @ efficient.beta),
        variance_ratio=efficient.variance_ratio_vs_main,
    )


def run_replicates(
    worker: Callable[[ReplicateTask], ReplicateOutcome], tasks: Sequence[ReplicateTask], threads: int = 1
) -> list[ReplicateOutcome]:
    """Run ``worker`` over ``tasks``; results come back in task order."""
    if threads <= 1 or len(tasks) < 2:
        return [worker(task) for task in tasks]
    chunk = max(1, len(tasks) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, tasks, chunksize=chunk))


def _tasks(
    scenario: ScenarioSpec, spec: FeatureSpec, n_panels: int, replications: int, seed: int, suite: str, **options: float
) -> list[ReplicateTask]:
    stream = SUITE_STREAMS[suite]
    return [ReplicateTask(scenario, spec, n_panels, seed, (stream, n_panels, r), **options) for r in range(replications)]


# ============================================================================
# SUMMARIES
# ============================================================================


def _sample_sd(values: np.ndarray) -> float:
    if values.size < 2:
        return math.nan
    mean = exact_mean(values)
    return float(math.sqrt(exact_mean((values - mean) ** 2) * values.size / (values.size - 1)))


def summarize_replicates(outcomes: Sequence[ReplicateOutcome], target: float) -> dict[str, float]:
    """Bias, spread, calibration and p-value uniformity of one replication batch."""
    ok = [o for o in outcomes if o.ok]
    est = np.array([o.estimate for o in ok])
    se = np.array([o.std_error for o in ok])
    n = est.size
    if n == 0:
        return {"replications": len(outcomes), "failures": len(outcomes)}
    mean = float(exact_mean(est))
    sd = _sample_sd(est)
    covered = np.array([o.ci_low <= target <= o.ci_high for o in ok], dtype=float)
    p_values = np.array([o.p_value for o in ok])
    ks = stats.kstest(p_values, "uniform") if n > 1 else None
    return {
        "replications": len(outcomes),
        "failures": len(outcomes) - n,
        "target": target,
        "mean_estimate": mean,
        "bias": mean - target,
        "bias_se": sd / math.sqrt(n),
        "sd": sd,
        "mean_se": float(exact_mean(se)),
        "se_ratio": float(exact_mean(se)) / sd if sd > 0 else math.nan,
        "coverage": float(exact_mean(covered)),
        "rmse": float(math.sqrt(exact_mean((est - target) ** 2))),
        "rejection_rate": float(exact_mean((p_values < 0.05).astype(float))),
        "ks_statistic": float(ks.statistic) if ks is not None else math.nan,
        "ks_pvalue": float(ks.pvalue) if ks is not None else math.nan,
    }


# ============================================================================
# SUITES
# ============================================================================


def consistency_suite(
    scenario: ScenarioSpec,
    spec: FeatureSpec,
    target: float,
    n_panels: Sequence[int],
    replications: int,
    seed: int,
    threads: int = 1,
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
    confidence_level: float = DEFAULT_CONFIDENCE_LEVEL,
) -> pd.DataFrame:
    """Bias, SE calibration, coverage and RMSE for each panel count.

    ``rmse_ratio`` is the previous size's RMSE over this size's; √n consistency
    puts it near 2 when the sizes quadruple.
    """
    records = []
    previous_rmse = math.nan
    for n in n_panels:
        tasks = _tasks(scenario, spec, n, replications, seed, "consistency", clip_epsilon=clip_epsilon, confidence_level=confidence_level)
        summary = summarize_replicates(run_replicates(estimate_replicate, tasks, threads), target)
        rmse = summary.get("rmse", math.nan)
        records.append({"n_panels": n, **summary, "rmse_ratio": previous_rmse / rmse if rmse > 0 else math.nan})
        previous_rmse = rmse
        logger.info("Consistency n=%d: bias %.5f, coverage %.3f", n, summary.get("bias", math.nan), summary.get("coverage", math.nan))
    return pd.DataFrame.from_records(records)


def double_robustness_suite(
    scenario: ScenarioSpec,
    variants: Sequence[RobustnessVariant],
    target: float,
    n_panels: int,
    replications: int,
    seed: int,
    threads: int = 1,
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
) -> pd.DataFrame:
    """One row per working-model variant, all fitted on the same simulated datasets.

    Variants expected to be consistent pass when |bias| <= 3 standard errors
    of the mean; the others are reported without a pass requirement.
    """
    records = []
    for variant in variants:
        tasks = _tasks(scenario, variant.feature_spec, n_panels, replications, seed, "double_robustness", clip_epsilon=clip_epsilon)
        summary = summarize_replicates(run_replicates(estimate_replicate, tasks, threads), target)
        bias, bias_se = summary.get("bias", math.nan), summary.get("bias_se", math.nan)
        passed = abs(bias) <= 3.0 * bias_se if variant.expect_consistent else None
        records.append(
            {
                "variant": variant.name,
                "expect_consistent": variant.expect_consistent,
                **{key: summary.get(key, math.nan) for key in ("replications", "failures", "mean_estimate", "bias", "bias_se", "sd", "coverage")},
                "bias_z": bias / bias_se if bias_se > 0 else math.nan,
                "passed": passed,
            }
        )
        logger.info("Double robustness %r: bias %.5f (se %.5f)", variant.name, bias, bias_se)
    return pd.DataFrame.from_records(records)


def quadratic_variants(column: str) -> tuple[RobustnessVariant, ...]:
    """The four-cell design for a scenario whose propensity and outcome are quadratic in ``column``.

    The propensity model is correct when R_k carries the squared column; the
    outcome model is correct when g includes it.
    """
    quadratic_r = [{"column": column, "transform": "polynomial", "degree": 2}]
    linear_r = [{"column": column}]
    squared = f"{column}^2"
    cells = (
        ("both_correct", quadratic_r, ["1", column, f"{column}_pow2"], True),
        ("outcome_correct", linear_r, ["1", column, squared], True),
        ("propensity_correct", quadratic_r, ["1", column], True),
        ("both_wrong", linear_r, ["1", column], False),
    )
    return tuple(
        RobustnessVariant(
            name=name,
            feature_spec=FeatureSpec.model_validate({"r_terms": r_terms, "g_base_terms": g_basis}),
            expect_consistent=expected,
        )
        for name, r_terms, g_basis, expected in cells
    )


def efficiency_suite(
    scenario: ScenarioSpec,
    spec: FeatureSpec,
    n_panels: int,
    replications: int,
    seed: int,
    threads: int = 1,
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
) -> pd.DataFrame:
    """Replication variance of the efficient-score contrast against the main estimator's.

    ``difference_z`` tests the paired difference of squared deviations; values
    below -3 mean the efficient estimator is significantly less variable.
    """
    tasks = _tasks(scenario, spec, n_panels, replications, seed, "efficiency", clip_epsilon=clip_epsilon)
    ok = [o for o in run_replicates(efficiency_replicate, tasks, threads) if o.ok]
    main = np.array([o.estimate for o in ok])
    efficient = np.array([o.efficient_estimate for o in ok])
    if main.size < 2:
        return pd.DataFrame.from_records([{"n_panels": n_panels, "replications": replications, "failures": replications - main.size}])
    paired = (efficient - exact_mean(efficient)) ** 2 - (main - exact_mean(main)) ** 2
    paired_sd = _sample_sd(paired)
    record = {
        "n_panels": n_panels,
        "replications": replications,
        "failures": replications - main.size,
        "main_variance": _sample_sd(main) ** 2,
        "efficient_variance": _sample_sd(efficient) ** 2,
        "variance_ratio": (_sample_sd(efficient) / _sample_sd(main)) ** 2,
        "mean_reported_ratio": float(exact_mean(np.array([o.variance_ratio for o in ok]))),
        "difference_z": float(exact_mean(paired)) / (paired_sd / math.sqrt(paired.size)) if paired_sd > 0 else math.nan,
    }
    logger.info("Efficiency: variance ratio %.4f (z %.2f)", record["variance_ratio"], record["difference_z"])
    return pd.DataFrame.from_records([record])


def identification_suite(scenario: ScenarioSpec, check: IdentificationCheck, seed: int) -> pd.DataFrame:
    report = check_identification(
        scenario,
        check.k,
        check.lag,
        replicates=check.replicates,
        conditioning=check.conditioning,
        seed=seed,
        marginalize_over=check.marginalize_over,
    )
    return pd.DataFrame.from_records(
        [
            {
                "k": check.k,
                "lag": check.lag,
                "replicates": check.replicates,
                "oracle": report.oracle.value,
                "oracle_se": report.oracle.mc_se,
                "observational": report.observational.value,
                "observational_se": report.observational.mc_se,
                "difference": report.difference,
                "joint_se": report.joint_se,
                "z_score": report.z_score,
            }
        ]
    )


def overlap_suite(
    scenario: ScenarioSpec,
    spec: FeatureSpec,
    target_panels: int,
    n_panels: int,
    replications: int,
    seed: int,
    threads: int = 1,
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
) -> pd.DataFrame:
    """Mean β across replications against the overlap-weighted limit, per f component."""
    target = overlap_limit_target(scenario, spec, target_panels, seed, clip_epsilon)
    tasks = _tasks(scenario, spec, n_panels, replications, seed, "overlap", clip_epsilon=clip_epsilon)
    betas = np.array([o.beta for o in run_replicates(estimate_replicate, tasks, threads) if o.ok])
    records = []
    for j, name in enumerate(spec.f_names):
        column = betas[:, j] if betas.size else np.empty(0)
        mean = float(exact_mean(column)) if column.size else math.nan
        se = _sample_sd(column) / math.sqrt(column.size) if column.size > 1 else math.nan
        records.append(
            {
                "component": name,
                "limit": float(target.beta[j]),
                "mean_estimate": mean,
                "se_of_mean": se,
                "z_score": (mean - target.beta[j]) / se if se > 0 else math.nan,
                "replications": replications,
                "failures": replications - column.size,
            }
        )
    return pd.DataFrame.from_records(records)
