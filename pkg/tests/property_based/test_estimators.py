"""Property-based tests for the regression fits and the weighting step.

Tests cover:
    - fit_wls: weight-scale invariance and outcome equivariance
    - fit_logistic: fitted probabilities invariant to affine covariate changes
    - compute_weight: bounded, positive, and 1 wherever q equals p
    - format_p_value: always one of the journal-style shapes
"""

import re

import numpy as np
import pytest
from app.styles.report_format import format_p_value
from app.utils import glm
from app.utils.exceptions import ModelError
from app.utils.lag_estimator import compute_weight
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from .conftest import design_seed_strategy, gaussian_design, probability_strategy

# ============================================================================
# TEST CONSTANTS
# ============================================================================

CLIP = 1e-3
P_VALUE_SHAPE = re.compile(r"^(<\.001|>\.99|\.\d{2,3})$")


@pytest.mark.property
class TestWlsProperties:
    """Properties verified:
    - Multiplying every weight by c > 0 leaves the coefficients unchanged.
    - Multiplying the outcome by c multiplies the coefficients by c.
    """

    @given(design_seed_strategy(), st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=60, deadline=None)
    def test_weight_scale_invariance(self, design: tuple[int, int, int], scale: float) -> None:
        rng, x = gaussian_design(*design)
        y = x @ rng.normal(size=x.shape[1]) + rng.normal(size=x.shape[0])
        w = rng.uniform(0.1, 5.0, size=x.shape[0])

        base = glm.fit_wls(x, y, w).coefficients
        scaled = glm.fit_wls(x, y, scale * w).coefficients

        np.testing.assert_allclose(scaled, base, rtol=1e-9, atol=1e-10)

    @given(design_seed_strategy(), st.floats(min_value=-100.0, max_value=100.0))
    @settings(max_examples=60, deadline=None)
    def test_outcome_equivariance(self, design: tuple[int, int, int], scale: float) -> None:
        rng, x = gaussian_design(*design)
        y = rng.normal(size=x.shape[0])

        base = glm.fit_wls(x, y).coefficients
        scaled = glm.fit_wls(x, scale * y).coefficients

        np.testing.assert_allclose(scaled, scale * base, rtol=1e-8, atol=1e-9)


@pytest.mark.property
class TestLogisticProperties:
    """Properties verified:
    - Fitted probabilities do not change under x -> c·x + b on a covariate.
    - The score vanishes at the returned coefficients.
    """

    @given(
        design_seed_strategy(),
        st.floats(min_value=0.5, max_value=10.0),
        st.floats(min_value=-5.0, max_value=5.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_affine_invariance(self, design: tuple[int, int, int], scale: float, shift: float) -> None:
        # Arrange
        rng, x = gaussian_design(*design)
        a = (rng.uniform(size=x.shape[0]) < 1.0 / (1.0 + np.exp(-0.5 * x[:, 1]))).astype(float)
        moved = x.copy()
        moved[:, 1] = scale * x[:, 1] + shift

        # Act
        try:
            base = glm.fit_logistic(x, a)
            other = glm.fit_logistic(moved, a)
        except ModelError:
            assume(False)
            return

        # Assert
        np.testing.assert_allclose(glm.predict_logistic(other, moved), glm.predict_logistic(base, x), atol=1e-7)

    @given(design_seed_strategy())
    @settings(max_examples=50, deadline=None)
    def test_score_vanishes(self, design: tuple[int, int, int]) -> None:
        rng, x = gaussian_design(*design)
        a = (rng.uniform(size=x.shape[0]) < 0.4).astype(float)
        try:
            fit = glm.fit_logistic(x, a)
        except ModelError:
            assume(False)
            return

        assert np.max(np.abs(glm.logistic_score(fit.coefficients, x, a))) < 1e-6


@pytest.mark.property
class TestWeightProperties:
    """Properties verified:
    - Weights are positive and bounded by (1 - clip) / clip.
    - W = 1 wherever q = p, for either decision.
    """

    @given(probability_strategy(), probability_strategy(), st.lists(st.integers(0, 1), min_size=20, max_size=20))
    @settings(max_examples=200)
    def test_bounded_and_positive(self, q: np.ndarray, p: np.ndarray, a: list[int]) -> None:
        result = compute_weight(np.array(a), q, p, clip=CLIP)

        assert np.all(result.values > 0.0)
        assert np.all(result.values <= (1.0 - CLIP) / CLIP + 1e-9)

    @given(probability_strategy(), st.lists(st.integers(0, 1), min_size=20, max_size=20))
    @settings(max_examples=200)
    def test_equal_models_give_unit_weight(self, q: np.ndarray, a: list[int]) -> None:
        result = compute_weight(np.array(a), q, q.copy(), clip=CLIP)

        np.testing.assert_allclose(result.values, 1.0, rtol=1e-12)


@pytest.mark.property
class TestPValueFormat:
    @given(st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=300)
    def test_shape(self, p_value: float) -> None:
        assert P_VALUE_SHAPE.match(format_p_value(p_value))
