"""Property-based tests for panel CSV export and row building.

Tests cover:
    - serialize_panels / parse_panels: bit-exact round trip
    - build_rows: row counts, outcome alignment and lagged-decision padding
"""

import numpy as np
import pytest
from app.data_processor import PanelSet, parse_panels, serialize_panels
from app.utils.features import FeatureSpec, build_rows
from hypothesis import given, note, settings
from hypothesis import strategies as st

from .conftest import panel_set_strategy


@pytest.mark.property
class TestCsvRoundTrip:
    """Properties verified:
    - Every panel survives export and re-parse with identical bits.
    - Column names and panel order are preserved.
    """

    @given(panel_set_strategy())
    @settings(max_examples=100, deadline=None)
    def test_round_trip_is_exact(self, panels: PanelSet) -> None:
        text = serialize_panels(panels)
        note(text)

        again = parse_panels(text)

        assert again.column_names == panels.column_names
        assert again.panel_ids == panels.panel_ids
        assert all(p == q for p, q in zip(again, panels, strict=True))

    @given(panel_set_strategy(max_features=0))
    @settings(max_examples=30, deadline=None)
    def test_job_count_preserved(self, panels: PanelSet) -> None:
        assert parse_panels(serialize_panels(panels)).n_jobs == panels.n_jobs


@pytest.mark.property
class TestBuildRows:
    """Properties verified:
    - One row per (panel, k) with k <= K - lag.
    - y_future is the outcome ``lag`` jobs later in the same panel.
    - Lagged decisions before job 1 are zero and flagged as padded.
    """

    @given(panel_set_strategy(max_features=1), st.integers(min_value=1, max_value=4))
    @settings(max_examples=100, deadline=None)
    def test_row_count(self, panels: PanelSet, lag: int) -> None:
        spec = FeatureSpec(lag=lag)

        rows = build_rows(panels, spec)

        assert len(rows) == sum(max(p.size - lag, 0) for p in panels)
        assert rows.n_panels == len(panels)

    @given(panel_set_strategy(max_features=1), st.integers(min_value=1, max_value=3))
    @settings(max_examples=100, deadline=None)
    def test_future_outcome_alignment(self, panels: PanelSet, lag: int) -> None:
        rows = build_rows(panels, FeatureSpec(lag=lag))

        for row in rows:
            panel = panels[row.panel_id]
            assert row.y_future == panel.y[row.k - 1 + lag]
            assert row.a == panel.a[row.k - 1]

    @given(panel_set_strategy(max_features=0), st.integers(min_value=1, max_value=3))
    @settings(max_examples=100, deadline=None)
    def test_lagged_decision_padding(self, panels: PanelSet, n_lagged: int) -> None:
        rows = build_rows(panels, FeatureSpec(n_lagged_actions=n_lagged))

        for j in range(1, n_lagged + 1):
            value = rows.r[:, 2 * (j - 1)]
            padded = rows.r[:, 2 * (j - 1) + 1]
            np.testing.assert_array_equal(padded, (rows.k <= j).astype(float))
            assert np.all(value[padded == 1.0] == 0.0)
