"""Error hierarchy for the lag-effects toolkit.

Every error carries a machine-readable ``category`` that the CLI turns into an
exit code. Data-format errors are also ``ValueError``; numeric failures are
also ``ArithmeticError`` so callers can catch them the usual way.
"""

from collections.abc import Sequence
from typing import ClassVar


class LagEffectsError(Exception):
    """Base class for all toolkit errors."""

    category: ClassVar[str] = "internal"


# ---------------------------------------------------------------------------
# Data errors
# ---------------------------------------------------------------------------


class DataError(LagEffectsError, ValueError):
    category: ClassVar[str] = "data"


class MissingColumn(DataError):
    """A required CSV column is absent."""

    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"Missing required columns: {', '.join(self.columns)}")


class NonContiguousIndex(DataError):
    """job_index within a panel has a gap, a duplicate, or does not start at 1."""


class NonBinaryDecision(DataError):
    """Decision column holds a value other than 0 or 1."""


class NonFiniteValue(DataError):
    """A numeric cell is missing, NaN, infinite or unparseable."""


class SpecColumnUnknown(DataError):
    """A feature term references a column the dataset does not have."""


class NoRows(DataError):
    """No estimation rows survive the lag and panel filters."""


# ---------------------------------------------------------------------------
# Model fitting errors
# ---------------------------------------------------------------------------


class ModelError(LagEffectsError, ArithmeticError):
    category: ClassVar[str] = "model"


class Separation(ModelError):
    """Logistic likelihood is unbounded (perfect or quasi-complete separation)."""


class RankDeficient(ModelError):
    """Design matrix does not have full column rank."""

    def __init__(self, columns: Sequence[int], message: str | None = None):
        self.columns = tuple(int(c) for c in columns)
        super().__init__(message or f"Design is rank deficient; dependent columns: {list(self.columns)}")


class NotConverged(ModelError):
    """Iterative fit hit its iteration limit."""


class NoControlRows(ModelError):
    """No A=0 rows are available to fit the control-arm mean."""


# ---------------------------------------------------------------------------
# Inference errors
# ---------------------------------------------------------------------------


class InferenceError(LagEffectsError, ArithmeticError):
    category: ClassVar[str] = "inference"


class SingularBread(InferenceError):
    """Empirical Jacobian of the stacked score is numerically singular."""


class ZeroVariance(InferenceError):
    """Contrast has zero (or non-finite) estimated variance."""


# ---------------------------------------------------------------------------
# Simulation errors
# ---------------------------------------------------------------------------


class SimulationError(LagEffectsError):
    category: ClassVar[str] = "simulation"


class KStarNeverReached(SimulationError):
    """The panel terminated before the intervened job."""


class EmptyConditioningCell(SimulationError):
    """No replicate satisfied the conditioning event in at least one arm."""


# ---------------------------------------------------------------------------
# Configuration errors
# ---------------------------------------------------------------------------


class ConfigError(LagEffectsError, ValueError):
    """Invalid run configuration; carries the source file and line when known."""

    category: ClassVar[str] = "config"

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


EXIT_CODES: dict[str, int] = {
    "config": 2,
    "io": 3,
    "data": 4,
    "model": 5,
    "inference": 5,
    "simulation": 6,
    "internal": 1,
}
