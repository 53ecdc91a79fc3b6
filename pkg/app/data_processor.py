"""Panel data model: loading, validating, exporting and filtering job panels."""

import io
import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import ClassVar, TextIO

import numpy as np
import pandas as pd

from app.config.app_config import CSV_FLOAT_FORMAT, REQUIRED_COLUMNS
from app.utils.exceptions import (
    DataError,
    MissingColumn,
    NonBinaryDecision,
    NonContiguousIndex,
    NonFiniteValue,
)

logger = logging.getLogger(__name__)


def _frozen(values: np.ndarray, dtype: type) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Job:
    """A single job: context features, binary decision, outcome."""

    x: np.ndarray
    a: int
    y: float


@dataclass(frozen=True, eq=False)
class Panel:
    """One independent cluster of jobs in processing order (k = 1..K).

    Columns are stored as read-only arrays: ``x`` has shape (K, d), ``a`` and
    ``y`` have shape (K,).
    """

    panel_id: str
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        if np.ndim(self.x) != 2:
            raise DataError(f"Panel {self.panel_id!r}: features must be a (K, d) matrix")
        object.__setattr__(self, "x", _frozen(self.x, float))
        object.__setattr__(self, "a", _frozen(self.a, np.int8))
        object.__setattr__(self, "y", _frozen(self.y, float))
        k = self.a.shape[0]
        if k < 1:
            raise DataError(f"Panel {self.panel_id!r} has no jobs")
        if self.x.shape[0] != k or self.y.shape[0] != k:
            raise DataError(f"Panel {self.panel_id!r}: x, a and y lengths differ")
        if not np.isin(self.a, (0, 1)).all():
            raise NonBinaryDecision(f"Panel {self.panel_id!r}: decisions must be 0 or 1")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise NonFiniteValue(f"Panel {self.panel_id!r}: non-finite feature or outcome")

    @property
    def size(self) -> int:
        """Number of jobs K."""
        return int(self.a.shape[0])

    @property
    def jobs(self) -> tuple[Job, ...]:
        return tuple(Job(x=self.x[i], a=int(self.a[i]), y=float(self.y[i])) for i in range(self.size))

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.panel_id == other.panel_id
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class PanelArrays:
    """Panels padded to a common length for vectorized row building."""

    x: np.ndarray  # (n_panels, k_max, d)
    a: np.ndarray  # (n_panels, k_max)
    y: np.ndarray  # (n_panels, k_max)
    sizes: np.ndarray  # (n_panels,)


@dataclass(frozen=True, eq=False)
class PanelSet:
    """A collection of panels sharing one feature schema."""

    panels: tuple[Panel, ...]
    column_names: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "panels", tuple(self.panels))
        object.__setattr__(self, "column_names", tuple(self.column_names))
        d = len(self.column_names)
        ids: dict[str, int] = {}
        for i, panel in enumerate(self.panels):
            if panel.x.shape[1] != d:
                raise DataError(
                    f"Panel {panel.panel_id!r} has {panel.x.shape[1]} features, expected {d}"
                )
            if panel.panel_id in ids:
                raise DataError(f"Duplicate panel_id {panel.panel_id!r}")
            ids[panel.panel_id] = i
        object.__setattr__(self, "_index", ids)

    @property
    def feature_dimension(self) -> int:
        return len(self.column_names)

    @property
    def panel_ids(self) -> tuple[str, ...]:
        return tuple(p.panel_id for p in self.panels)

    @property
    def n_jobs(self) -> int:
        return sum(p.size for p in self.panels)

    def __len__(self) -> int:
        return len(self.panels)

    def __iter__(self) -> Iterator[Panel]:
        return iter(self.panels)

    def __getitem__(self, panel_id: str) -> Panel:
        return self.panels[self._index[panel_id]]

    def column_index(self, name: str) -> int:
        return self.column_names.index(name)

    @cached_property
    def padded(self) -> PanelArrays:
        """Zero-padded (n_panels, k_max, ...) arrays; ``sizes`` holds each K."""
        sizes = np.array([p.size for p in self.panels], dtype=np.int64)
        k_max = int(sizes.max()) if sizes.size else 0
        n, d = len(self.panels), self.feature_dimension
        x = np.zeros((n, k_max, d))
        a = np.zeros((n, k_max), dtype=np.int8)
        y = np.zeros((n, k_max))
        for i, panel in enumerate(self.panels):
            x[i, : panel.size] = panel.x
            a[i, : panel.size] = panel.a
            y[i, : panel.size] = panel.y
        return PanelArrays(x=x, a=a, y=y, sizes=sizes)


class PanelCsvReader:
    """Parses the panel CSV schema into a validated :class:`PanelSet`.

    Schema: ``panel_id`` (string), ``job_index`` (1-based integer, contiguous
    within a panel), ``a`` (0/1), ``y`` (decimal), then feature columns.
    Reported line numbers are 1-based file lines (the header is line 1).
    """

    REQUIRED_COLUMNS: ClassVar[tuple[str, ...]] = REQUIRED_COLUMNS
    _HEADER_LINES: ClassVar[int] = 1

    def __init__(self, schema: Sequence[str] | None = None):
        self.schema = tuple(schema) if schema is not None else None

    def read(self, text_stream: TextIO | str) -> PanelSet:
        source = io.StringIO(text_stream) if isinstance(text_stream, str) else text_stream
        try:
            df = pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
        except pd.errors.EmptyDataError as e:
            raise MissingColumn(self.REQUIRED_COLUMNS) from e
        df.columns = df.columns.str.strip()
        feature_columns = self._validate_columns(df)

        panel_ids = df["panel_id"].str.strip()
        job_index = self._integer_column(df, "job_index")
        decisions = self._decision_column(df)
        outcomes = self._float_column(df, "y")
        features = (
            np.column_stack([self._float_column(df, c) for c in feature_columns])
            if feature_columns
            else np.zeros((len(df), 0))
        )

        panels = []
        groups = panel_ids.groupby(panel_ids, sort=False).indices
        for panel_id in pd.unique(panel_ids):
            positions = groups[panel_id]
            order = positions[np.argsort(job_index[positions], kind="stable")]
            self._check_contiguous(str(panel_id), job_index[order], order)
            panels.append(
                Panel(
                    panel_id=str(panel_id),
                    x=features[order],
                    a=decisions[order],
                    y=outcomes[order],
                )
            )
        logger.info("Parsed %d panels (%d jobs, %d features)", len(panels), len(df), len(feature_columns))
        return PanelSet(panels=tuple(panels), column_names=feature_columns)

    def _validate_columns(self, df: pd.DataFrame) -> tuple[str, ...]:
        """Check required columns; return feature columns in schema order."""
        present = list(df.columns)
        missing = [c for c in self.REQUIRED_COLUMNS if c not in present]
        if self.schema is not None:
            missing += [c for c in self.schema if c not in present]
            if missing:
                raise MissingColumn(missing)
            return self.schema
        if missing:
            raise MissingColumn(missing)
        return tuple(c for c in present if c not in self.REQUIRED_COLUMNS)

    def _line(self, position: int) -> int:
        return int(position) + self._HEADER_LINES + 1

    def _float_column(self, df: pd.DataFrame, column: str) -> np.ndarray:
        raw = df[column].str.strip()
        values = np.empty(len(raw))
        for i, text in enumerate(raw):
            try:
                values[i] = float(text)
            except ValueError:
                raise NonFiniteValue(
                    f"line {self._line(i)}: column {column!r} value {text!r} is not a number"
                ) from None
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            i = int(bad[0])
            raise NonFiniteValue(f"line {self._line(i)}: column {column!r} value {raw.iloc[i]!r} is not finite")
        return values

    def _integer_column(self, df: pd.DataFrame, column: str) -> np.ndarray:
        values = self._float_column(df, column)
        fractional = np.flatnonzero(values != np.round(values))
        if fractional.size:
            i = int(fractional[0])
            raise NonContiguousIndex(f"line {self._line(i)}: {column} must be an integer")
        return values.astype(np.int64)

    def _decision_column(self, df: pd.DataFrame) -> np.ndarray:
        values = self._float_column(df, "a")
        bad = np.flatnonzero((values != 0.0) & (values != 1.0))
        if bad.size:
            i = int(bad[0])
            raise NonBinaryDecision(f"line {self._line(i)}: decision a={df['a'].iloc[i]!r} is not 0 or 1")
        return values.astype(np.int8)

    def _check_contiguous(self, panel_id: str, indices: np.ndarray, positions: np.ndarray) -> None:
        expected = np.arange(1, indices.size + 1)
        mismatch = np.flatnonzero(indices != expected)
        if mismatch.size:
            i = int(mismatch[0])
            raise NonContiguousIndex(
                f"line {self._line(positions[i])}: panel {panel_id!r} has job_index {indices[i]}, "
                f"expected {expected[i]} (indices must run 1..K without gaps or duplicates)"
            )


def parse_panels(text_stream: TextIO | str, schema: Sequence[str] | None = None) -> PanelSet:
    """Parse panel CSV text. ``schema`` fixes feature columns and their order."""
    return PanelCsvReader(schema).read(text_stream)


def load_panels(path: str | Path, schema: Sequence[str] | None = None) -> PanelSet:
    """Read a panel CSV file from disk."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as handle:
            return parse_panels(handle, schema)
    except FileNotFoundError:
        raise FileNotFoundError(f"Data file not found at {path}") from None
    except DataError as e:
        e.add_note(f"while reading {path}")
        raise


def panels_to_frame(panels: PanelSet) -> pd.DataFrame:
    """Long-format frame in the CSV schema (one row per job)."""
    frames = []
    for panel in panels:
        frame = pd.DataFrame(panel.x, columns=list(panels.column_names))
        frame.insert(0, "panel_id", panel.panel_id)
        frame.insert(1, "job_index", np.arange(1, panel.size + 1))
        frame.insert(2, "a", panel.a.astype(np.int64))
        frame.insert(3, "y", panel.y)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=[*REQUIRED_COLUMNS, *panels.column_names])
    return pd.concat(frames, ignore_index=True)


def serialize_panels(panels: PanelSet, stream: TextIO | None = None) -> str | None:
    """Write panels as CSV with 17 significant digits (bit-exact round trip).

    Returns the CSV text when no ``stream`` is given.
    """
    frame = panels_to_frame(panels)
    return frame.to_csv(stream, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def filter_panels(panels: PanelSet, min_size: int) -> PanelSet:
    """Drop panels with fewer than ``min_size`` jobs."""
    kept = tuple(p for p in panels if p.size >= min_size)
    dropped = len(panels) - len(kept)
    if dropped:
        logger.warning("Dropped %d of %d panels with fewer than %d jobs", dropped, len(panels), min_size)
    return PanelSet(panels=kept, column_names=panels.column_names)
