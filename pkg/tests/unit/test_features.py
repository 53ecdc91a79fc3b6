"""Unit tests for feature specifications and estimation-row building.

Tests cover:
- R_k term transforms (identity, polynomial, spline) and their column names
- S_k validation and the f/g basis defaults
- build_rows counts, future-job terms and lagged-action padding
- Effect contrasts reported per S_k choice
"""

import numpy as np
import pytest
from app.data_processor import PanelSet
from app.utils.exceptions import SpecColumnUnknown
from app.utils.features import FeatureSpec, FeatureTerm, build_rows, rows_from_arrays
from pydantic import ValidationError

# ============================================================================
# TEST CONSTANTS
# ============================================================================

# sample_panels: p1 has K=3, p2 has K=2, so lag 1 leaves 2 + 1 rows
ROWS_AT_LAG_1 = 3
ROWS_AT_LAG_2 = 1


def _spec(**kwargs: object) -> FeatureSpec:
    return FeatureSpec.model_validate({"lag": 1, "r_terms": [{"column": "x0"}], **kwargs})


class TestFeatureTerm:
    def test_polynomial_columns(self) -> None:
        # Arrange
        term = FeatureTerm(column="x0", transform="polynomial", degree=3)

        # Act
        expanded = term.expand(np.array([2.0]))

        # Assert
        assert term.output_names == ("x0", "x0_pow2", "x0_pow3")
        np.testing.assert_array_equal(expanded, [[2.0, 4.0, 8.0]])

    def test_spline_truncated_powers(self) -> None:
        term = FeatureTerm(column="x0", transform="spline", degree=2, knots=(-0.5, 0.5))

        expanded = term.expand(np.array([1.0, 0.0]))

        assert term.output_names == ("x0", "x0_pow2", "x0_knotm0.5", "x0_knot0.5")
        np.testing.assert_allclose(expanded, [[1.0, 1.0, 2.25, 0.25], [0.0, 0.0, 0.25, 0.0]])

    def test_future_term_default_name(self) -> None:
        assert FeatureTerm(column="x0", source="future").label == "x0_next"

    def test_identity_rejects_degree(self) -> None:
        with pytest.raises(ValidationError, match="identity"):
            FeatureTerm(column="x0", degree=2)

    def test_spline_knots_must_increase(self) -> None:
        with pytest.raises(ValidationError, match="increasing"):
            FeatureTerm(column="x0", transform="spline", knots=(1.0, 0.0))


class TestFeatureSpec:
    def test_default_bases(self) -> None:
        spec = _spec(n_lagged_actions=1, s_terms=["a_lag1"])

        assert spec.r_columns == ("x0", "a_lag1", "a_lag1_padded")
        assert spec.g_names == ("1", "x0", "a_lag1", "a_lag1_padded")
        assert spec.f_names == ("1", "a_lag1", "a_lag1_padded")
        assert spec.s_positions == (1, 2)

    def test_s_terms_must_be_in_r(self) -> None:
        with pytest.raises(ValidationError, match="not among"):
            _spec(s_terms=["x1"])

    def test_basis_needs_constant(self) -> None:
        with pytest.raises(ValidationError, match="constant"):
            _spec(g_base_terms=["x0"])

    def test_basis_columns_must_exist(self) -> None:
        with pytest.raises(ValidationError, match="not available"):
            _spec(g_base_terms=["1", "x1"])

    def test_duplicate_term_names(self) -> None:
        with pytest.raises(ValidationError, match="Duplicate"):
            FeatureSpec.model_validate({"r_terms": [{"column": "x0"}, {"column": "x0"}]})

    def test_with_s_terms_keeps_configured_f(self) -> None:
        # Arrange
        spec = _spec(n_lagged_actions=1, s_terms=["x0"], f_basis=["1", "x0"])

        # Act
        moved = spec.with_s_terms(["x0", "a_lag1"])
        cleared = _spec(s_terms=["x0"], f_basis=["1"]).with_s_terms([])

        # Assert
        assert moved.f_names == ("1", "x0")
        assert cleared.s_terms == ()
        assert cleared.f_names == ("1",)

    def test_with_s_terms_default_f_follows_s(self) -> None:
        spec = _spec(n_lagged_actions=1, s_terms=["x0"])

        assert spec.with_s_terms(["a_lag1"]).f_names == ("1", "a_lag1", "a_lag1_padded")

    def test_with_s_terms_rejects_f_outside_new_s(self) -> None:
        # Arrange
        spec = _spec(s_terms=["x0"], f_basis=["1", "x0"])

        # Act & Assert
        assert spec.f_columns_missing_from([]) == ["x0"]
        with pytest.raises(ValidationError, match="not available"):
            spec.with_s_terms([])

    def test_propensity_variant(self) -> None:
        variant = _spec().with_propensity_variant(n_lagged_actions=2, term="x0", transform="polynomial", degree=2)

        assert variant.r_columns == ("x0", "x0_pow2", "a_lag1", "a_lag1_padded", "a_lag2", "a_lag2_padded")

    def test_propensity_variant_unknown_term(self) -> None:
        with pytest.raises(ValueError, match="Unknown term"):
            _spec().with_propensity_variant(term="x9")


class TestEffectContrast:
    def test_main_effect(self) -> None:
        np.testing.assert_array_equal(_spec().effect_contrast(), [1.0])

    def test_interaction_for_binary_modifier(self) -> None:
        spec = _spec(n_lagged_actions=1, s_terms=["a_lag1"])

        np.testing.assert_array_equal(spec.effect_contrast(), [0.0, 1.0, 0.0])

    def test_primary_contrast_falls_back_to_first_column(self) -> None:
        # Arrange - constant f with a non-empty S_k has no interaction
        spec = _spec(s_terms=["x0"], f_basis=["1"])

        # Act & Assert
        np.testing.assert_array_equal(spec.primary_contrast(), [1.0])


class TestBuildRows:
    def test_row_counts(self, sample_panels: PanelSet) -> None:
        assert len(build_rows(sample_panels, _spec())) == ROWS_AT_LAG_1
        assert len(build_rows(sample_panels, _spec(lag=2))) == ROWS_AT_LAG_2

    def test_panels_without_rows_still_counted(self, sample_panels: PanelSet) -> None:
        rows = build_rows(sample_panels, _spec(lag=2))

        assert rows.n_panels == 2
        assert rows.n_contributing_panels == 1

    def test_outcome_is_lagged(self, sample_panels: PanelSet) -> None:
        # Act
        rows = build_rows(sample_panels, _spec())

        # Assert - rows ordered (p1,1), (p1,2), (p2,1)
        np.testing.assert_array_equal(rows.k, [1, 2, 1])
        np.testing.assert_array_equal(rows.y_future, [-1.5, 3.25, 1.0])
        np.testing.assert_array_equal(rows.a, [1, 0, 0])
        np.testing.assert_array_equal(rows.r[:, 0], [1.25, 0.75, -0.5])

    def test_future_source(self, sample_panels: PanelSet) -> None:
        spec = FeatureSpec.model_validate({"r_terms": [{"column": "x0", "source": "future"}]})

        rows = build_rows(sample_panels, spec)

        np.testing.assert_array_equal(rows.r[:, 0], [0.75, 0.0, 2.5])

    def test_lagged_action_padding(self, sample_panels: PanelSet) -> None:
        rows = build_rows(sample_panels, _spec(n_lagged_actions=1))

        np.testing.assert_array_equal(rows.r[:, 1], [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(rows.r[:, 2], [1.0, 0.0, 1.0])

    def test_unknown_column(self, sample_panels: PanelSet) -> None:
        spec = FeatureSpec.model_validate({"r_terms": [{"column": "age"}]})

        with pytest.raises(SpecColumnUnknown, match="age"):
            build_rows(sample_panels, spec)

    def test_panel_sums(self, sample_panels: PanelSet) -> None:
        rows = build_rows(sample_panels, _spec())

        np.testing.assert_array_equal(rows.panel_sums(rows.y_future), [1.75, 1.0])

    def test_iterates_row_views(self, sample_panels: PanelSet) -> None:
        first = next(iter(build_rows(sample_panels, _spec())))

        assert (first.panel_id, first.k, first.a) == ("p1", 1, 1)


class TestRowsFromArrays:
    def test_assigns_k_within_panel(self) -> None:
        rows = rows_from_arrays(np.zeros((3, 1)), [0, 1, 0], [1.0, 2.0, 3.0], [0, 0, 1], _spec())

        np.testing.assert_array_equal(rows.k, [1, 2, 1])
        assert rows.n_panels == 2

    def test_column_count_checked(self) -> None:
        with pytest.raises(ValueError, match="columns"):
            rows_from_arrays(np.zeros((2, 2)), [0, 1], [1.0, 2.0], [0, 1], _spec())
