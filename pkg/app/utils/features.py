"""Feature specification and estimation-row building.

A :class:`FeatureSpec` declares the conditioning set R_k (current-job and
future-job columns, transforms, lagged decisions), the effect-modifier subset
S_k, and the two working-model bases: f over S_k and g over R_k. ``build_rows``
flattens panels into one row per (panel, k) with k = 1..K-lag.
"""

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.data_processor import PanelSet
from app.utils import expressions
from app.utils.exceptions import SpecColumnUnknown

logger = logging.getLogger(__name__)

LAGGED_ACTION_PREFIX = "a_lag"
PADDED_SUFFIX = "_padded"
EMPTY_S_LABEL = "(none)"


def lagged_action_name(j: int) -> str:
    return f"{LAGGED_ACTION_PREFIX}{j}"


def _knot_label(knot: float) -> str:
    return f"{knot:g}".replace("-", "m")


class FeatureTerm(BaseModel):
    """One entry of R_k: a dataset column, optionally from the future job, with a transform.

    ``polynomial`` of degree d expands to ``name``, ``name_pow2`` .. ``name_pow{d}``;
    ``spline`` adds truncated-power columns ``name_knot{κ}`` = max(0, x-κ)^d
    for each knot.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    column: str
    name: str = ""
    source: Literal["current", "future"] = "current"
    transform: Literal["identity", "polynomial", "spline"] = "identity"
    degree: int = Field(default=1, ge=1, le=5)
    knots: tuple[float, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _default_name(cls, data: object) -> object:
        if isinstance(data, dict) and not data.get("name") and "column" in data:
            suffix = "_next" if data.get("source") == "future" else ""
            data = {**data, "name": f"{data['column']}{suffix}"}
        return data

    @model_validator(mode="after")
    def _check_transform(self) -> "FeatureTerm":
        if not expressions.is_valid_name(self.label):
            raise ValueError(f"Invalid feature name {self.label!r}")
        if self.transform == "identity" and (self.degree != 1 or self.knots):
            raise ValueError(f"Term {self.label!r}: identity transform takes no degree or knots")
        if self.transform == "polynomial" and self.knots:
            raise ValueError(f"Term {self.label!r}: knots require transform 'spline'")
        if self.transform == "spline":
            if not self.knots:
                raise ValueError(f"Term {self.label!r}: spline needs at least one knot")
            if list(self.knots) != sorted(set(self.knots)):
                raise ValueError(f"Term {self.label!r}: knots must be strictly increasing")
        return self

    @property
    def label(self) -> str:
        return self.name

    @property
    def output_names(self) -> tuple[str, ...]:
        names = [self.label]
        if self.transform != "identity":
            names += [f"{self.label}_pow{p}" for p in range(2, self.degree + 1)]
        if self.transform == "spline":
            names += [f"{self.label}_knot{_knot_label(k)}" for k in self.knots]
        return tuple(names)

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Evaluate the transform on raw column values; shape (n, len(output_names))."""
        x = np.asarray(values, dtype=float)
        cols = [x]
        if self.transform != "identity":
            cols += [x**p for p in range(2, self.degree + 1)]
        if self.transform == "spline":
            cols += [np.maximum(x - k, 0.0) ** self.degree for k in self.knots]
        return np.column_stack(cols)


class FeatureSpec(BaseModel):
    """Declarative R_k, S_k and working-model bases for one lag.

    ``s_terms`` names entries of R_k (feature-term names or ``a_lag{j}``).
    ``f_basis`` and ``g_base_terms`` are monomial expressions over the expanded
    S_k and R_k columns; both default to ``["1", <all columns>]`` and must
    contain the constant ``"1"``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    lag: int = Field(default=1, ge=1)
    r_terms: tuple[FeatureTerm, ...] = ()
    s_terms: tuple[str, ...] = ()
    f_basis: tuple[str, ...] | None = None
    g_base_terms: tuple[str, ...] | None = None
    n_lagged_actions: int = Field(default=0, ge=0)

    @field_validator("f_basis", "g_base_terms")
    @classmethod
    def _parseable(cls, value: tuple[str, ...] | None) -> tuple[str, ...] | None:
        if value is not None:
            expressions.parse_all(value)
        return value

    @model_validator(mode="after")
    def _check_structure(self) -> "FeatureSpec":
        names = [t.label for t in self.r_terms] + list(self.lagged_action_terms)
        duplicated = sorted({n for n in names if names.count(n) > 1})
        if duplicated:
            raise ValueError(f"Duplicate R_k term names: {duplicated}")
        unknown = [s for s in self.s_terms if s not in names]
        if unknown:
            raise ValueError(f"s_terms {unknown} are not among the R_k terms {names}")
        if len(set(self.s_terms)) != len(self.s_terms):
            raise ValueError("s_terms must not repeat")
        self._check_basis("f_basis", self.f_expressions, self.s_columns)
        self._check_basis("g_base_terms", self.g_expressions, self.r_columns)
        return self

    @staticmethod
    def _check_basis(field: str, basis: Sequence[expressions.Monomial], allowed: Sequence[str]) -> None:
        if not any(m.is_constant for m in basis):
            raise ValueError(f"{field} must contain the constant term '1'")
        stray = sorted(expressions.referenced_names(basis) - set(allowed))
        if stray:
            raise ValueError(f"{field} references {stray}, which are not available columns {list(allowed)}")

    # -- derived column layout ------------------------------------------------

    @property
    def lagged_action_terms(self) -> tuple[str, ...]:
        return tuple(lagged_action_name(j) for j in range(1, self.n_lagged_actions + 1))

    def term_columns(self, term_name: str) -> tuple[str, ...]:
        if term_name in self.lagged_action_terms:
            return (term_name, term_name + PADDED_SUFFIX)
        for term in self.r_terms:
            if term.label == term_name:
                return term.output_names
        raise KeyError(term_name)

    @property
    def r_term_names(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.r_terms) + self.lagged_action_terms

    @property
    def r_columns(self) -> tuple[str, ...]:
        return tuple(c for name in self.r_term_names for c in self.term_columns(name))

    @property
    def s_columns(self) -> tuple[str, ...]:
        return tuple(c for name in self.s_terms for c in self.term_columns(name))

    @property
    def s_positions(self) -> tuple[int, ...]:
        """Positions of the S_k columns inside the R_k vector."""
        r = self.r_columns
        return tuple(r.index(c) for c in self.s_columns)

    @property
    def f_expressions(self) -> tuple[expressions.Monomial, ...]:
        return expressions.parse_all(self.f_basis or (expressions.CONSTANT, *self.s_columns))

    @property
    def g_expressions(self) -> tuple[expressions.Monomial, ...]:
        return expressions.parse_all(self.g_base_terms or (expressions.CONSTANT, *self.r_columns))

    @property
    def f_names(self) -> tuple[str, ...]:
        return tuple(m.text for m in self.f_expressions)

    @property
    def g_names(self) -> tuple[str, ...]:
        return tuple(m.text for m in self.g_expressions)

    @property
    def s_label(self) -> str:
        return "+".join(self.s_terms) if self.s_terms else EMPTY_S_LABEL

    @property
    def source_columns(self) -> tuple[str, ...]:
        """Dataset columns the R_k terms read."""
        return tuple(dict.fromkeys(t.column for t in self.r_terms))

    # -- variants ---------------------------------------------------------------

    def f_columns_missing_from(self, s_terms: Sequence[str]) -> list[str]:
        """Columns a configured f basis reads that ``s_terms`` would not provide."""
        if self.f_basis is None:
            return []
        provided = {c for name in s_terms for c in self.term_columns(name)}
        return sorted(expressions.referenced_names(self.f_expressions) - provided)

    def with_s_terms(self, s_terms: Sequence[str], f_basis: Sequence[str] | None = None) -> "FeatureSpec":
        """Same R_k, g and f basis with a different S_k; ``f_basis`` replaces the basis when given.

        Raises:
            ValidationError: the kept basis reads columns outside the new S_k.
        """
        basis = self.f_basis if f_basis is None else tuple(f_basis)
        return FeatureSpec.model_validate({**self.model_dump(), "s_terms": tuple(s_terms), "f_basis": basis})

    def with_propensity_variant(
        self,
        n_lagged_actions: int | None = None,
        term: str | None = None,
        degree: int | None = None,
        transform: str | None = None,
    ) -> "FeatureSpec":
        """Copy with a different lag window and/or one term's transform."""
        data = self.model_dump()
        if n_lagged_actions is not None:
            data["n_lagged_actions"] = n_lagged_actions
        if term is not None:
            matched = False
            for t in data["r_terms"]:
                if t["name"] == term:
                    matched = True
                    if transform is not None:
                        t["transform"] = transform
                    if degree is not None:
                        t["degree"] = degree
            if not matched:
                raise ValueError(f"Unknown term {term!r}")
        return FeatureSpec.model_validate(data)

    # -- bases ------------------------------------------------------------------

    def f_matrix(self, s: np.ndarray) -> np.ndarray:
        """Evaluate f on S_k rows; shape (n, |f|)."""
        return _evaluate_basis(self.f_expressions, self.s_columns, s)

    def g_matrix(self, r: np.ndarray) -> np.ndarray:
        """Evaluate g on R_k rows; shape (n, |g|)."""
        return _evaluate_basis(self.g_expressions, self.r_columns, r)

    def s_values_at(self, value: float) -> np.ndarray:
        """S_k vector obtained by setting every S_k term's raw input to ``value``."""
        parts = []
        for name in self.s_terms:
            if name in self.lagged_action_terms:
                parts.append(np.array([[value, 0.0]]))
            else:
                term = next(t for t in self.r_terms if t.label == name)
                parts.append(term.expand(np.array([value])))
        return np.hstack(parts) if parts else np.zeros((1, 0))

    def effect_contrast(self) -> np.ndarray:
        """Contrast over β reported for this S_k choice.

        The main effect f'β when S_k is empty (f is then constant), otherwise
        the interaction f(1)'β - f(0)'β for a single S_k term.
        """
        if not self.s_terms:
            return self.f_matrix(np.zeros((1, 0)))[0]
        if len(self.s_terms) > 1:
            raise ValueError("effect_contrast needs S_k with at most one term")
        return self.f_matrix(self.s_values_at(1.0))[0] - self.f_matrix(self.s_values_at(0.0))[0]

    def primary_contrast(self) -> np.ndarray:
        """``effect_contrast`` when it is defined and non-zero, else the coefficient of f's first column."""
        if len(self.s_terms) <= 1:
            contrast = self.effect_contrast()
            if np.any(contrast != 0.0):
                return contrast
        return np.eye(len(self.f_expressions))[0]


def _evaluate_basis(basis: Sequence[expressions.Monomial], columns: Sequence[str], values: np.ndarray) -> np.ndarray:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    index = {c: i for i, c in enumerate(columns)}
    n = values.shape[0]
    return np.column_stack([m.evaluate(lambda name: values[:, index[name]], n) for m in basis])


@dataclass(frozen=True)
class EstimationRow:
    panel_id: str
    k: int
    r: np.ndarray
    s: np.ndarray
    a: int
    y_future: float


@dataclass(frozen=True, eq=False)
class EstimationRows:
    """Columnar estimation rows ordered by (panel, k).

    ``panel_index`` points into ``panel_ids``; ``n_panels`` counts every panel,
    including those with K <= lag that contribute no rows.
    """

    panel_ids: tuple[str, ...]
    panel_index: np.ndarray
    k: np.ndarray
    r: np.ndarray
    s: np.ndarray
    a: np.ndarray
    y_future: np.ndarray
    r_columns: tuple[str, ...]
    s_columns: tuple[str, ...]

    @property
    def n_panels(self) -> int:
        return len(self.panel_ids)

    @property
    def n_contributing_panels(self) -> int:
        return int(np.unique(self.panel_index).size)

    def __len__(self) -> int:
        return int(self.a.shape[0])

    def __iter__(self) -> Iterator[EstimationRow]:
        for i in range(len(self)):
            yield EstimationRow(
                panel_id=self.panel_ids[self.panel_index[i]],
                k=int(self.k[i]),
                r=self.r[i],
                s=self.s[i],
                a=int(self.a[i]),
                y_future=float(self.y_future[i]),
            )

    def select(self, mask: np.ndarray) -> "EstimationRows":
        """Rows where ``mask`` holds; the panel list is unchanged."""
        return EstimationRows(
            panel_ids=self.panel_ids,
            panel_index=self.panel_index[mask],
            k=self.k[mask],
            r=self.r[mask],
            s=self.s[mask],
            a=self.a[mask],
            y_future=self.y_future[mask],
            r_columns=self.r_columns,
            s_columns=self.s_columns,
        )

    def panel_sums(self, per_row: np.ndarray) -> np.ndarray:
        """Sum per-row vectors within each panel; shape (n_panels, ...)."""
        per_row = np.asarray(per_row, dtype=float)
        out = np.zeros((self.n_panels, *per_row.shape[1:]))
        np.add.at(out, self.panel_index, per_row)
        return out


def with_intercept(matrix: np.ndarray) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    return np.column_stack([np.ones(matrix.shape[0]), matrix])


def build_rows(panels: PanelSet, spec: FeatureSpec) -> EstimationRows:
    """Flatten panels into one row per (panel, k), k = 1..K-lag.

    Lagged decisions A_{k-j} with j >= k are 0 and their ``_padded`` column is 1.

    Raises:
        SpecColumnUnknown: if a term reads a column the panels do not have.
    """
    unknown = [c for c in spec.source_columns if c not in panels.column_names]
    if unknown:
        raise SpecColumnUnknown(f"Feature columns {unknown} not in dataset columns {list(panels.column_names)}")

    arrays = panels.padded
    lag = spec.lag
    k_max = arrays.a.shape[1]
    in_range = np.arange(k_max)[None, :] < (arrays.sizes[:, None] - lag)
    panel_idx, k_idx = np.nonzero(in_range)

    blocks = []
    for term in spec.r_terms:
        offset = lag if term.source == "future" else 0
        raw = arrays.x[panel_idx, k_idx + offset, panels.column_index(term.column)]
        blocks.append(term.expand(raw))
    for j in range(1, spec.n_lagged_actions + 1):
        src = k_idx - j
        padded = src < 0
        lagged = np.where(padded, 0, arrays.a[panel_idx, np.maximum(src, 0)]).astype(float)
        blocks.append(np.column_stack([lagged, padded.astype(float)]))

    n = panel_idx.size
    r = np.hstack(blocks) if blocks else np.zeros((n, 0))
    s = r[:, list(spec.s_positions)] if spec.s_positions else np.zeros((n, 0))
    rows = EstimationRows(
        panel_ids=panels.panel_ids,
        panel_index=panel_idx,
        k=k_idx + 1,
        r=r,
        s=s,
        a=arrays.a[panel_idx, k_idx].astype(np.int8),
        y_future=arrays.y[panel_idx, k_idx + lag],
        r_columns=spec.r_columns,
        s_columns=spec.s_columns,
    )
    logger.info("Built %d estimation rows from %d panels (lag %d)", len(rows), len(panels), lag)
    return rows


def rows_from_arrays(
    r: np.ndarray,
    a: np.ndarray,
    y_future: np.ndarray,
    panel_index: np.ndarray,
    spec: FeatureSpec,
    n_panels: int | None = None,
) -> EstimationRows:
    """Assemble rows directly from arrays (R_k already evaluated in spec column order)."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    panel_index = np.asarray(panel_index, dtype=np.int64)
    if r.shape[1] != len(spec.r_columns):
        raise ValueError(f"r has {r.shape[1]} columns, spec expects {len(spec.r_columns)}")
    n_panels = int(panel_index.max()) + 1 if n_panels is None else n_panels
    k = np.zeros_like(panel_index)
    for p in np.unique(panel_index):
        where = np.flatnonzero(panel_index == p)
        k[where] = np.arange(1, where.size + 1)
    return EstimationRows(
        panel_ids=tuple(str(i) for i in range(n_panels)),
        panel_index=panel_index,
        k=k,
        r=r,
        s=r[:, list(spec.s_positions)] if spec.s_positions else np.zeros((r.shape[0], 0)),
        a=np.asarray(a, dtype=np.int8),
        y_future=np.asarray(y_future, dtype=float),
        r_columns=spec.r_columns,
        s_columns=spec.s_columns,
    )

