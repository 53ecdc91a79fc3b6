"""
Run configurations for the ``analyze`` and ``study`` commands.

Both are YAML documents validated into frozen pydantic models; relative paths
resolve against the directory of the config file. ``main.py schema <name>``
prints the JSON schema of each model.
"""

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from app.components.oracle import Bin
from app.components.simulator import ScenarioSpec
from app.config.app_config import DEFAULT_CLIP_EPSILON, DEFAULT_CONFIDENCE_LEVEL, DEFAULT_MIN_PANEL_SIZE
from app.config.yaml_loader import load_yaml_model
from app.utils.features import FeatureSpec

SuiteName = Literal["consistency", "coverage", "double_robustness", "efficiency", "identification", "overlap"]


def _resolve(value: Path | None, info: ValidationInfo) -> Path | None:
    if value is None or value.is_absolute():
        return value
    base = (info.context or {}).get("base_dir")
    return Path(base) / value if base is not None else value


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ============================================================================
# ANALYSIS
# ============================================================================


class PropensityCandidate(_Frozen):
    """One denominator-model variant: a lag window and/or one term's transform."""

    name: str
    n_lagged_actions: int | None = Field(default=None, ge=0)
    term: str | None = None
    transform: Literal["identity", "polynomial", "spline"] | None = None
    degree: int | None = Field(default=None, ge=1, le=5)

    @model_validator(mode="after")
    def _term_for_transform(self) -> "PropensityCandidate":
        if (self.transform is not None or self.degree is not None) and self.term is None:
            raise ValueError(f"Candidate {self.name!r}: transform/degree need a term")
        return self

    def apply(self, spec: FeatureSpec) -> FeatureSpec:
        return spec.with_propensity_variant(
            n_lagged_actions=self.n_lagged_actions, term=self.term, degree=self.degree, transform=self.transform
        )


class AnalysisConfig(_Frozen):
    input_path: Path
    output_path: Path
    feature_spec: FeatureSpec
    lag: int | None = Field(default=None, ge=1, description="Overrides feature_spec.lag when set.")
    s_variable_list: tuple[tuple[str, ...], ...] = Field(
        default=((),), description="One estimation per S_k choice; [] is the empty S_k."
    )
    clip_epsilon: float = Field(default=DEFAULT_CLIP_EPSILON, gt=0.0, lt=0.5)
    min_panel_size: int = Field(default=DEFAULT_MIN_PANEL_SIZE, ge=1)
    confidence_level: float = Field(default=DEFAULT_CONFIDENCE_LEVEL, gt=0.0, lt=1.0)
    propensity_candidates: tuple[PropensityCandidate, ...] = ()
    columns: tuple[str, ...] | None = Field(default=None, description="Expected feature columns, in order.")

    _resolve_paths = field_validator("input_path", "output_path")(_resolve)

    @field_validator("s_variable_list", mode="before")
    @classmethod
    def _single_names(cls, value: object) -> object:
        if isinstance(value, list | tuple):
            return [[item] if isinstance(item, str) else item for item in value]
        return value

    @model_validator(mode="after")
    def _check_s_variables(self) -> "AnalysisConfig":
        known = set(self.feature_spec.r_term_names)
        for choice in self.s_variable_list:
            unknown = [s for s in choice if s not in known]
            if unknown:
                raise ValueError(f"s_variable_list entry {list(choice)} names {unknown}, which are not R_k terms {sorted(known)}")
            missing = self.feature_spec.f_columns_missing_from(choice)
            if missing:
                raise ValueError(
                    f"feature_spec.f_basis reads {missing}, which s_variable_list entry {list(choice)} does not provide"
                )
        names = [c.name for c in self.propensity_candidates]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate propensity candidate names in {names}")
        return self

    @property
    def spec(self) -> FeatureSpec:
        if self.lag is None or self.lag == self.feature_spec.lag:
            return self.feature_spec
        return FeatureSpec.model_validate({**self.feature_spec.model_dump(), "lag": self.lag})


# ============================================================================
# STUDY
# ============================================================================


class RobustnessVariant(_Frozen):
    """Working-model variant for the double-robustness table."""

    name: str
    feature_spec: FeatureSpec
    expect_consistent: bool = True


class IdentificationCheck(_Frozen):
    k: int = Field(default=1, ge=1)
    lag: int = Field(default=1, ge=1)
    conditioning: tuple[Bin, ...] = ()
    marginalize_over: tuple[str, ...] = ()
    replicates: int = Field(default=100_000, ge=1)


class StudyConfig(_Frozen):
    scenario_path: Path
    output_path: Path
    feature_spec: FeatureSpec
    target: float | None = Field(default=None, description="True contrast; defaults to the scenario's truth.effect.")
    n_panels: tuple[int, ...] = (100, 400, 1600)
    replications: int = Field(default=500, ge=1)
    seed: int = Field(default=0, ge=0)
    suites: tuple[SuiteName, ...] = ("consistency", "coverage")
    threads: int | None = Field(default=None, ge=1)
    clip_epsilon: float = Field(default=DEFAULT_CLIP_EPSILON, gt=0.0, lt=0.5)
    confidence_level: float = Field(default=DEFAULT_CONFIDENCE_LEVEL, gt=0.0, lt=1.0)
    double_robustness: tuple[RobustnessVariant, ...] = ()
    robustness_panels: int = Field(default=400, ge=2)
    efficiency_panels: int = Field(default=400, ge=2)
    identification: IdentificationCheck | None = None
    overlap_target_panels: int = Field(default=20_000, ge=2)
    overlap_panels: int = Field(default=1_600, ge=2)

    _resolve_paths = field_validator("scenario_path", "output_path")(_resolve)

    @field_validator("n_panels")
    @classmethod
    def _grid(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or min(value) < 2:
            raise ValueError("n_panels needs at least one size, each >= 2")
        return value

    @model_validator(mode="after")
    def _suite_inputs(self) -> "StudyConfig":
        if "double_robustness" in self.suites and not self.double_robustness:
            raise ValueError("suite 'double_robustness' needs double_robustness variants")
        if "identification" in self.suites and self.identification is None:
            raise ValueError("suite 'identification' needs an identification block")
        return self

    @property
    def efficiency_spec(self) -> FeatureSpec:
        """feature_spec with S_k = R_k, as the efficient score requires."""
        return self.feature_spec.with_s_terms(self.feature_spec.r_term_names)

    def load_scenario(self) -> ScenarioSpec:
        return load_yaml_model(self.scenario_path, ScenarioSpec)


def load_analysis_config(path: str | Path) -> AnalysisConfig:
    return load_yaml_model(path, AnalysisConfig)


def load_study_config(path: str | Path) -> StudyConfig:
    return load_yaml_model(path, StudyConfig)


CONFIG_MODELS: dict[str, type[BaseModel]] = {
    "analysis": AnalysisConfig,
    "study": StudyConfig,
    "scenario": ScenarioSpec,
}
