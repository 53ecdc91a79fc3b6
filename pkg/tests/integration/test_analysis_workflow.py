"""Integration tests for the analysis workflow.

Tests verify the complete data flow:
1. Simulate panels and export them as panel CSV
2. Load, filter and select the propensity model by QICu
3. Estimate every S_k choice with a shared denominator fit
4. Write the effects table and diagnostics

The CLI output must match direct library calls bit for bit.
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml
from app.config.schemas import AnalysisConfig, load_analysis_config
from app.data_processor import filter_panels, load_panels
from app.pipeline import (
    ANALYSIS_DIAGNOSTICS,
    ANALYSIS_TABLE,
    run_analysis,
    run_simulate,
    select_propensity_model,
)
from app.utils import glm
from app.utils.features import build_rows, with_intercept
from app.utils.lag_estimator import EstimateOptions, estimate, wald

# ============================================================================
# TEST CONSTANTS
# ============================================================================

N_PANELS = 300
SEED = 7


@pytest.fixture(scope="module")
def exported_panels(tmp_path_factory: pytest.TempPathFactory, scenarios_dir: Path) -> Path:
    out = tmp_path_factory.mktemp("analysis") / "panels.csv"
    run_simulate(scenarios_dir / "constant_effect.yaml", N_PANELS, SEED, out)
    return out


@pytest.fixture
def analysis_config_file(tmp_path: Path, exported_panels: Path) -> Path:
    document = {
        "input_path": str(exported_panels),
        "output_path": "report",
        "feature_spec": {"lag": 1, "n_lagged_actions": 1, "r_terms": [{"column": "x0"}]},
        "s_variable_list": [[], "a_lag1"],
        "propensity_candidates": [{"name": "two_lags", "n_lagged_actions": 2}],
    }
    path = tmp_path / "analysis.yaml"
    path.write_text(yaml.safe_dump(document), encoding="utf-8")
    return path


@pytest.mark.integration
class TestAnalysisWorkflow:
    def test_writes_table_and_diagnostics(self, analysis_config_file: Path) -> None:
        # Act
        config = load_analysis_config(analysis_config_file)
        result = run_analysis(config)

        # Assert
        table = pd.read_csv(config.output_path / ANALYSIS_TABLE, sep="\t")
        diagnostics = json.loads((config.output_path / ANALYSIS_DIAGNOSTICS).read_text(encoding="utf-8"))
        assert list(table["variable"]) == ["(none)", "a_lag1"]
        assert diagnostics["selected_propensity_model"] == result.selected_candidate
        assert {c["name"] for c in diagnostics["propensity_models"]} == {"base", "two_lags"}
        assert diagnostics["n_panels"] <= N_PANELS

    def test_matches_direct_library_calls(self, analysis_config_file: Path) -> None:
        # Arrange
        config = load_analysis_config(analysis_config_file)
        panels = filter_panels(load_panels(config.input_path, config.columns), config.min_panel_size)
        spec, _, _ = select_propensity_model(panels, config.spec, config.propensity_candidates)
        base = build_rows(panels, spec)
        denominator = glm.fit_logistic(with_intercept(base.r), base.a)
        choice = spec.with_s_terms(())

        # Act
        fit = estimate(build_rows(panels, choice), choice, EstimateOptions(), denominator_fit=denominator)
        direct = wald(fit, choice.primary_contrast())
        run_analysis(config)
        table = pd.read_csv(config.output_path / ANALYSIS_TABLE, sep="\t")

        # Assert - %.17g export is bit-exact
        assert table["estimate"].iloc[0] == direct.estimate
        assert table["ci_low"].iloc[0] == direct.ci_low
        assert table["p_value"].iloc[0] == direct.p_value

    def test_reruns_are_byte_identical(self, analysis_config_file: Path) -> None:
        config = load_analysis_config(analysis_config_file)

        run_analysis(config)
        first = (config.output_path / ANALYSIS_TABLE).read_bytes()
        run_analysis(config)

        assert (config.output_path / ANALYSIS_TABLE).read_bytes() == first

    def test_recovers_known_effect(self, analysis_config_file: Path) -> None:
        result = run_analysis(load_analysis_config(analysis_config_file), write=False)

        row = result.table.iloc[0]
        assert row["ci_low"] < 0.5 < row["ci_high"]

    def test_configured_f_basis_reaches_estimates(self, tmp_path: Path, exported_panels: Path) -> None:
        # Arrange - f drops the padding indicator that the default basis would add
        config = AnalysisConfig.model_validate(
            {
                "input_path": str(exported_panels),
                "output_path": str(tmp_path / "report"),
                "feature_spec": {
                    "lag": 1,
                    "n_lagged_actions": 1,
                    "r_terms": [{"column": "x0"}],
                    "s_terms": ["a_lag1"],
                    "f_basis": ["1", "a_lag1"],
                },
                "s_variable_list": ["a_lag1"],
            }
        )

        # Act
        result = run_analysis(config, write=False)

        # Assert
        assert result.diagnostics["estimates"]["a_lag1"]["f_basis"] == ["1", "a_lag1"]
        assert result.estimates["a_lag1"].beta.size == 2
        assert list(result.table["variable"]) == ["a_lag1"]

    def test_denominator_shared_across_choices(self, analysis_config_file: Path) -> None:
        result = run_analysis(load_analysis_config(analysis_config_file), write=False)

        etas = [fit.eta for fit in result.estimates.values()]
        np.testing.assert_array_equal(etas[0], etas[1])


@pytest.mark.integration
class TestPropensitySelection:
    def test_lowest_qicu_wins(self, exported_panels: Path) -> None:
        # Arrange
        config = AnalysisConfig.model_validate(
            {
                "input_path": str(exported_panels),
                "output_path": "unused",
                "feature_spec": {"r_terms": [{"column": "x0"}]},
                "propensity_candidates": [
                    {"name": "one_lag", "n_lagged_actions": 1},
                    {"name": "quadratic", "term": "x0", "transform": "polynomial", "degree": 2},
                ],
            }
        )
        panels = load_panels(exported_panels)

        # Act
        _, scores, selected = select_propensity_model(panels, config.spec, config.propensity_candidates)

        # Assert
        best = min(scores, key=lambda s: s.qicu)
        assert selected == best.name
        assert len(scores) == 3

    def test_base_only_skips_scoring(self, exported_panels: Path) -> None:
        config = AnalysisConfig.model_validate(
            {"input_path": str(exported_panels), "output_path": "unused", "feature_spec": {"r_terms": [{"column": "x0"}]}}
        )

        spec, scores, selected = select_propensity_model(load_panels(exported_panels), config.spec, ())

        assert spec == config.spec
        assert scores == ()
        assert selected == "base"
