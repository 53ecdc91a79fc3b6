"""Shared constants and helper functions for performance benchmarks."""

from __future__ import annotations

from functools import cache

from app.components.simulator import ScenarioSpec
from app.data_processor import PanelSet
from app.utils.features import FeatureSpec

# ---------------------------------------------------------------------------
# Module-level constants
# ---------------------------------------------------------------------------

_SEED = 17

# Panel counts for parametrised benchmarks
_SCALE_PANELS = [200, 1_000, 4_000]

# Benchmark time budgets (seconds) – very conservative for CI robustness.
_MAX_SIMULATE_1K_SEC = 1.0
_MAX_BUILD_ROWS_4K_SEC = 0.5
_MAX_ESTIMATE_4K_SEC = 2.0
_MAX_SERIALIZE_1K_SEC = 1.0
_MAX_PARSE_1K_SEC = 2.0

# Scenario used by every benchmark: K <= 20, one Gaussian context.
_BENCH_SCENARIO = {
    "label": "benchmark",
    "k_max": 20,
    "positivity_floor": 0.02,
    "contexts": [{"name": "x0"}, {"name": "x1"}],
    "decision": {"terms": {"1": -0.2, "x0": 0.8, "x1": -0.3}},
    "outcome": {"terms": {"1": 1.0, "x0": 0.5, "lag1.x0": 0.4, "lag1.a": 0.5}},
    "continuation": {"kind": "constant", "probability": 0.9},
}

_BENCH_SPEC = {
    "lag": 1,
    "n_lagged_actions": 1,
    "r_terms": [{"column": "x0"}, {"column": "x1"}],
    "s_terms": ["x0"],
}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _scenario() -> ScenarioSpec:
    return ScenarioSpec.model_validate(_BENCH_SCENARIO)


def _spec() -> FeatureSpec:
    return FeatureSpec.model_validate(_BENCH_SPEC)


@cache
def _panels(n_panels: int) -> PanelSet:
    """Natural panels from the benchmark scenario, cached per size.

    Args:
        n_panels: Number of panels to simulate.

    Returns:
        A PanelSet built once per size and shared by every benchmark.
    """
    from app.components.simulator import simulate_panels

    return simulate_panels(_scenario(), n_panels, _SEED)
