"""Runs behind the command line: analysis, simulation study and panel export.

Every number these functions write comes from a library call; the CLI only
parses arguments and maps errors to exit codes.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from app.components.report_writer import effect_rows, effects_frame, write_json, write_tsv
from app.components.simulator import load_scenario, simulate_panels
from app.components.study_runner import (
    consistency_suite,
    double_robustness_suite,
    efficiency_suite,
    identification_suite,
    overlap_suite,
)
from app.config import app_config
from app.config.schemas import CONFIG_MODELS, AnalysisConfig, PropensityCandidate, StudyConfig
from app.config.settings import settings
from app.data_processor import PanelSet, filter_panels, load_panels, serialize_panels
from app.utils import glm
from app.utils.exceptions import ConfigError, LagEffectsError
from app.utils.features import FeatureSpec, build_rows, with_intercept
from app.utils.lag_estimator import EstimateOptions, ThetaEstimate, estimate

logger = logging.getLogger(__name__)

ANALYSIS_TABLE = "lag_effects.tsv"
ANALYSIS_DIAGNOSTICS = "diagnostics.json"
STUDY_DIAGNOSTICS = "study.json"
BASE_CANDIDATE = "base"

NUMERIC_DEFAULTS = {
    "irls_tolerance": app_config.IRLS_TOLERANCE,
    "irls_max_iterations": app_config.IRLS_MAX_ITERATIONS,
    "separation_bound": app_config.SEPARATION_BOUND,
    "rank_tolerance": app_config.RANK_TOLERANCE,
    "fd_relative_step": app_config.FD_RELATIVE_STEP,
    "bread_condition_limit": app_config.BREAD_CONDITION_LIMIT,
    "normal_quantile_975": app_config.NORMAL_QUANTILE_975,
    "variance_floor_fraction": app_config.VARIANCE_FLOOR_FRACTION,
}


# ============================================================================
# ANALYSIS
# ============================================================================


@dataclass(frozen=True)
class CandidateScore:
    name: str
    qicu: float | None
    n_parameters: int | None = None
    iterations: int | None = None
    error: str | None = None


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    table: pd.DataFrame
    estimates: dict[str, ThetaEstimate]
    candidates: tuple[CandidateScore, ...]
    selected_candidate: str
    diagnostics: dict
    outputs: tuple[Path, ...] = ()


def select_propensity_model(
    panels: PanelSet, spec: FeatureSpec, candidates: tuple[PropensityCandidate, ...]
) -> tuple[FeatureSpec, tuple[CandidateScore, ...], str]:
    """Pick the denominator specification with the smallest QICu.

    ``spec`` itself competes as candidate ``base``. Candidates whose fit fails
    are recorded with their error and skipped.
    """
    variants = [(BASE_CANDIDATE, spec)] + [(c.name, c.apply(spec)) for c in candidates]
    if len(variants) == 1:
        return spec, (), BASE_CANDIDATE

    scores = []
    best: tuple[float, str, FeatureSpec] | None = None
    for name, variant in variants:
        try:
            rows = build_rows(panels, variant)
            design = with_intercept(rows.r)
            fit = glm.fit_logistic(design, rows.a)
        except LagEffectsError as e:
            logger.warning("Propensity candidate %r failed: %s", name, e)
            scores.append(CandidateScore(name=name, qicu=None, error=f"{e.category}: {e}"))
            continue
        score = glm.qicu(fit, design, rows.a)
        scores.append(CandidateScore(name=name, qicu=score, n_parameters=fit.coefficients.size, iterations=fit.iterations))
        if best is None or score < best[0]:
            best = (score, name, variant)
    if best is None:
        raise ConfigError("Every propensity candidate failed to fit; see the warnings above")
    logger.info("Selected propensity model %r (QICu %.3f)", best[1], best[0])
    return best[2], tuple(scores), best[1]


def run_analysis(config: AnalysisConfig, write: bool = True) -> AnalysisResult:
    """Estimate the lag effect for every configured S_k choice and write the report.

    η is fitted once on the selected R_k specification and shared by all S_k
    choices; ξ is refitted per choice.
    """
    panels = filter_panels(load_panels(config.input_path, config.columns), config.min_panel_size)
    spec, candidates, selected = select_propensity_model(panels, config.spec, config.propensity_candidates)

    base_rows = build_rows(panels, spec)
    denominator = glm.fit_logistic(with_intercept(base_rows.r), base_rows.a)
    options = EstimateOptions(clip_epsilon=config.clip_epsilon)

    report_rows = []
    estimates: dict[str, ThetaEstimate] = {}
    per_choice = {}
    for s_terms in config.s_variable_list:
        choice = spec.with_s_terms(s_terms)
        fit = estimate(build_rows(panels, choice), choice, options, denominator_fit=denominator)
        report_rows += effect_rows(choice, fit, config.confidence_level)
        estimates[choice.s_label] = fit
        per_choice[choice.s_label] = {
            "s_terms": list(s_terms),
            "f_basis": list(choice.f_names),
            "parameters": dict(zip(fit.parameter_names, fit.theta, strict=True)),
            **fit.diagnostics,
        }

    table = effects_frame(report_rows)
    diagnostics = {
        "config": config.model_dump(mode="json"),
        "defaults": NUMERIC_DEFAULTS,
        "n_panels": len(panels),
        "n_jobs": panels.n_jobs,
        "r_columns": list(spec.r_columns),
        "g_basis": list(spec.g_names),
        "selected_propensity_model": selected,
        "propensity_models": [vars(c) for c in candidates],
        "denominator": {"converged": denominator.converged, "iterations": denominator.iterations},
        "estimates": per_choice,
    }
    outputs: tuple[Path, ...] = ()
    if write:
        outputs = (
            write_tsv(table, config.output_path / ANALYSIS_TABLE),
            write_json(diagnostics, config.output_path / ANALYSIS_DIAGNOSTICS),
        )
    return AnalysisResult(table, estimates, candidates, selected, diagnostics, outputs)


# ============================================================================
# STUDY
# ============================================================================


@dataclass(frozen=True, eq=False)
class StudyResult:
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    outputs: tuple[Path, ...] = ()


def _study_target(config: StudyConfig, truth: dict[str, float]) -> float | None:
    if config.target is not None:
        return config.target
    return truth.get("effect")


def run_study(config: StudyConfig, threads: int | None = None, write: bool = True) -> StudyResult:
    """Run the configured suites; outputs do not depend on ``threads``."""
    threads = threads or config.threads or settings.threads
    scenario = config.load_scenario()
    suites = set(config.suites)
    target = _study_target(config, scenario.truth)
    if suites & {"consistency", "coverage", "double_robustness"} and target is None:
        raise ConfigError("Study needs a target: set 'target' or the scenario's truth.effect", path=str(config.scenario_path))

    common = {"seed": config.seed, "threads": threads, "clip_epsilon": config.clip_epsilon}
    tables: dict[str, pd.DataFrame] = {}
    if suites & {"consistency", "coverage"}:
        tables["consistency"] = consistency_suite(
            scenario,
            config.feature_spec,
            target,
            config.n_panels,
            config.replications,
            confidence_level=config.confidence_level,
            **common,
        )
    if "double_robustness" in suites:
        tables["double_robustness"] = double_robustness_suite(
            scenario, config.double_robustness, target, config.robustness_panels, config.replications, **common
        )
    if "efficiency" in suites:
        tables["efficiency"] = efficiency_suite(
            scenario, config.efficiency_spec, config.efficiency_panels, config.replications, **common
        )
    if "identification" in suites:
        tables["identification"] = identification_suite(scenario, config.identification, config.seed)
    if "overlap" in suites:
        tables["overlap"] = overlap_suite(
            scenario,
            config.feature_spec,
            config.overlap_target_panels,
            config.overlap_panels,
            config.replications,
            **common,
        )

    outputs: tuple[Path, ...] = ()
    if write:
        written = [write_tsv(frame, config.output_path / f"{name}.tsv") for name, frame in tables.items()]
        provenance = {
            "config": config.model_dump(mode="json", exclude={"threads"}),
            "scenario": scenario.model_dump(mode="json"),
            "target": target,
            "defaults": NUMERIC_DEFAULTS,
        }
        written.append(write_json(provenance, config.output_path / STUDY_DIAGNOSTICS))
        outputs = tuple(written)
    return StudyResult(tables=tables, outputs=outputs)


# ============================================================================
# SIMULATION EXPORT AND SCHEMAS
# ============================================================================


def run_simulate(scenario_path: str | Path, n_panels: int, seed: int, out: str | Path) -> PanelSet:
    """Simulate natural panels from a scenario file and write them as panel CSV."""
    if n_panels < 1:
        raise ValueError("--panels must be >= 1")
    panels = simulate_panels(load_scenario(scenario_path), n_panels, seed)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as handle:
        serialize_panels(panels, handle)
    logger.info("Wrote %d panels (%d jobs) to %s", len(panels), panels.n_jobs, out)
    return panels


def schema_document(name: str) -> str:
    """JSON schema of the ``analysis``, ``study`` or ``scenario`` document."""
    try:
        model = CONFIG_MODELS[name]
    except KeyError:
        raise ConfigError(f"Unknown schema {name!r}; choose one of {sorted(CONFIG_MODELS)}") from None
    return json.dumps(model.model_json_schema(), indent=2)
