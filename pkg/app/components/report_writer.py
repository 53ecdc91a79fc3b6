"""Report tables (TSV) and diagnostics documents (JSON) for analysis and study runs."""

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.config.app_config import CSV_FLOAT_FORMAT, DEFAULT_CONFIDENCE_LEVEL, REPORT_COLUMNS
from app.styles.report_format import format_estimate, format_p_value
from app.utils.features import FeatureSpec
from app.utils.lag_estimator import ThetaEstimate, WaldReport, wald

logger = logging.getLogger(__name__)

DISPLAY_COLUMNS = ("estimate_ci", "p_display")


@dataclass(frozen=True)
class EffectRow:
    variable: str
    report: WaldReport

    def as_record(self) -> dict[str, Any]:
        r = self.report
        return {
            "variable": self.variable,
            "estimate": r.estimate,
            "ci_low": r.ci_low,
            "ci_high": r.ci_high,
            "p_value": r.p_value,
            "estimate_ci": format_estimate(r.estimate, r.ci_low, r.ci_high),
            "p_display": format_p_value(r.p_value),
        }


def effect_rows(spec: FeatureSpec, fit: ThetaEstimate, level: float = DEFAULT_CONFIDENCE_LEVEL) -> list[EffectRow]:
    """Report rows for one S_k choice.

    A single row with the main effect (empty S_k) or the interaction
    f(1)'β - f(0)'β (one S_k term); with several S_k terms, one row per β
    component named ``<S label>:<f column>``.
    """
    if len(spec.s_terms) <= 1:
        return [EffectRow(spec.s_label, wald(fit, spec.primary_contrast(), level))]
    unit = np.eye(fit.beta.size)
    return [EffectRow(f"{spec.s_label}:{name}", wald(fit, unit[j], level)) for j, name in enumerate(spec.f_names)]


def effects_frame(rows: Sequence[EffectRow]) -> pd.DataFrame:
    return pd.DataFrame.from_records([r.as_record() for r in rows], columns=[*REPORT_COLUMNS, *DISPLAY_COLUMNS])


def write_tsv(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep="\t", index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become null."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_ | bool):
        return bool(value)
    if isinstance(value, np.integer | int):
        return int(value)
    if isinstance(value, np.floating | float):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(payload: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(payload), indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote diagnostics to %s", path)
    return path
