"""Shared fixtures and configuration for all tests.

Organized in logical sections: session-scoped paths, panel data, scenarios,
feature specifications and collection hooks.

Guidelines:
- Session scope: repository paths, scenario documents
- Module scope: simulated panel sets reused by several tests
- Function scope (default): small hand-written datasets, temporary files

Fixture composition pattern:
- Base fixtures provide raw data (sample_panel_csv)
- Derived fixtures transform data (sample_panel_file writes sample_panel_csv)
"""

import random
from pathlib import Path

import numpy as np
import pytest
from app.components.simulator import ScenarioSpec, load_scenario, simulate_panels
from app.data_processor import PanelSet, parse_panels
from app.utils.features import FeatureSpec

REPO_ROOT = Path(__file__).resolve().parents[1]

# ============================================================================
# SESSION-SCOPED FIXTURES
# ============================================================================


@pytest.fixture(scope="session")
def test_data_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Session-wide temporary directory for exported panels and reports."""
    return tmp_path_factory.mktemp("test_data")


@pytest.fixture(scope="session")
def scenarios_dir() -> Path:
    """The repository's scenario documents."""
    return REPO_ROOT / "scenarios"


# ============================================================================
# PANEL DATA FIXTURES
# ============================================================================


@pytest.fixture
def sample_panel_csv() -> str:
    """Two panels (K=3 and K=2) with one feature column ``x0``.

    Returns:
        str: CSV text in the panel schema, rows deliberately not grouped
            by panel to exercise ordering.
    """
    return (
        "panel_id,job_index,a,y,x0\n"
        "p1,1,1,0.5,1.25\n"
        "p1,2,0,-1.5,0.75\n"
        "p2,1,0,2.0,-0.5\n"
        "p1,3,1,3.25,0.0\n"
        "p2,2,1,1.0,2.5\n"
    )


@pytest.fixture
def sample_panel_file(tmp_path: Path, sample_panel_csv: str) -> Path:
    """Fixture composition: ``sample_panel_csv`` written to a temporary file."""
    path = tmp_path / "panels.csv"
    path.write_text(sample_panel_csv, encoding="utf-8")
    return path


@pytest.fixture
def sample_panels(sample_panel_csv: str) -> PanelSet:
    return parse_panels(sample_panel_csv)


# ============================================================================
# SCENARIO FIXTURES
# ============================================================================


@pytest.fixture(scope="session")
def constant_effect_scenario() -> ScenarioSpec:
    """Confounded scenario with a constant lag-1 effect of 0.5 and K <= 8.

    x0 drives both the decision and the next job's outcome, so unweighted
    comparisons are biased while the estimator with R_k = {x0} is not.
    """
    return ScenarioSpec.model_validate(
        {
            "label": "constant_effect_small",
            "k_max": 8,
            "positivity_floor": 0.02,
            "contexts": [{"name": "x0"}],
            "decision": {"terms": {"1": -0.2, "x0": 0.8}},
            "outcome": {"terms": {"1": 1.0, "x0": 0.5, "lag1.x0": 0.4, "lag1.a": 0.5}},
            "continuation": {"kind": "constant", "probability": 0.85},
            "truth": {"effect": 0.5},
        }
    )


@pytest.fixture(scope="session")
def discrete_scenario(scenarios_dir: Path) -> ScenarioSpec:
    return load_scenario(scenarios_dir / "discrete.yaml")


@pytest.fixture(scope="session")
def confounded_scenario(scenarios_dir: Path) -> ScenarioSpec:
    return load_scenario(scenarios_dir / "confounded.yaml")


@pytest.fixture(scope="module")
def simulated_panels(constant_effect_scenario: ScenarioSpec) -> PanelSet:
    """400 natural panels from ``constant_effect_scenario`` (seed 2024)."""
    return simulate_panels(constant_effect_scenario, 400, 2024)


# ============================================================================
# FEATURE SPECIFICATION FIXTURES
# ============================================================================


@pytest.fixture
def x0_spec() -> FeatureSpec:
    """R_k = {x0}, empty S_k, lag 1: the correct specification for the constant-effect scenario."""
    return FeatureSpec.model_validate({"lag": 1, "r_terms": [{"column": "x0"}]})


@pytest.fixture
def x0_modifier_spec() -> FeatureSpec:
    """R_k = S_k = {x0}: every weight is exactly 1."""
    return FeatureSpec.model_validate({"lag": 1, "r_terms": [{"column": "x0"}], "s_terms": ["x0"]})


# ============================================================================
# RANDOM SEED (reproducible tests)
# ============================================================================


@pytest.fixture(autouse=True)
def reset_random_seed() -> None:
    """Reset the global random generators; library code never uses them, test helpers may."""
    random.seed(42)
    np.random.seed(42)  # noqa: NPY002


# ============================================================================
# TEST COLLECTION & CONFIGURATION HOOKS
# ============================================================================


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    """Auto-mark tests by directory: tests/unit → unit, tests/integration → integration."""
    for item in items:
        path = str(item.fspath)
        if f"{Path('tests', 'unit')}" in path:
            item.add_marker(pytest.mark.unit)
        elif f"{Path('tests', 'integration')}" in path:
            item.add_marker(pytest.mark.integration)
