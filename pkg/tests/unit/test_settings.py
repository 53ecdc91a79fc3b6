"""Unit tests for Settings pydantic-settings class.

Tests cover:
- Default field values when no environment variables are set
- Override via environment variable injection and constructor kwargs
- is_production and effective_log_level property logic
- Validation of the worker count
"""

import pytest
from app.config.settings import Settings
from pydantic import ValidationError

# ============================================================================
# MARKERS
# ============================================================================

pytestmark = pytest.mark.unit


@pytest.fixture(autouse=True)
def _clean_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("LAG_EFFECTS_THREADS", "LOG_LEVEL", "ENVIRONMENT", "DEBUG"):
        monkeypatch.delenv(name, raising=False)


# ============================================================================
# TESTS: Default values
# ============================================================================


class TestSettingsDefaults:
    """Verify all fields have correct defaults when no env vars are set."""

    def test_threads_default(self):
        assert Settings(_env_file=None).threads == 1

    def test_log_level_default(self):
        assert Settings(_env_file=None).log_level == "INFO"

    def test_environment_default(self):
        assert Settings(_env_file=None).environment == "local"

    def test_debug_default(self):
        assert Settings(_env_file=None).debug is False


# ============================================================================
# TESTS: Environment overrides
# ============================================================================


class TestSettingsEnvOverrides:
    """Verify env vars or constructor kwargs override defaults correctly."""

    def test_threads_via_field_name(self):
        assert Settings(threads=4).threads == 4

    def test_threads_via_env(self, monkeypatch):
        monkeypatch.setenv("LAG_EFFECTS_THREADS", "8")
        assert Settings().threads == 8

    def test_environment_via_alias(self, monkeypatch):
        monkeypatch.setenv("ENVIRONMENT", "staging")
        assert Settings().environment == "staging"

    def test_debug_via_env(self, monkeypatch):
        monkeypatch.setenv("DEBUG", "true")
        assert Settings().debug is True

    def test_threads_must_be_positive(self):
        with pytest.raises(ValidationError):
            Settings(threads=0)


# ============================================================================
# TESTS: Derived properties
# ============================================================================


class TestDerivedProperties:
    def test_is_production_case_insensitive(self):
        assert Settings(environment="PRODUCTION").is_production is True

    def test_is_production_false_for_local(self):
        assert Settings(environment="local").is_production is False

    def test_debug_forces_debug_level(self):
        assert Settings(debug=True, log_level="WARNING").effective_log_level == "DEBUG"

    def test_log_level_upper_cased(self):
        assert Settings(log_level="warning").effective_log_level == "WARNING"

    @pytest.mark.parametrize(("raw", "expected"), [("0", False), ("1", True), ("false", False)])
    def test_debug_coerced_from_string(self, monkeypatch, raw, expected):
        monkeypatch.setenv("DEBUG", raw)
        assert Settings().debug is expected
