"""Synthetic panel generator with paired counterfactual worlds.

A :class:`ScenarioSpec` declares four kernels applied job by job in the order
context → decision → outcome → continuation. Each kernel is a linear index
over monomial terms of the current job and a bounded history window:

* context columns: gaussian (index + noise_scale·ε) or bernoulli (expit(index))
* decision: P(A_k = 1) = expit(index) clipped to [δ, 1 - δ]
* outcome: gaussian with sd = noise_scale + Σ c·|term|, or bernoulli
* continuation: fixed length, constant probability, or logistic; K <= k_max

Term names: context columns, ``a``, ``y``, ``k`` (job index) and
``lag{j}.{column|a|y}`` for job k - j (0 before the first job).

Every panel owns one Philox stream with a fixed slot layout per job (one
uniform per context column, then decision, outcome, continuation), so two
worlds that differ only in a forced decision read identical exogenous draws.
"""

import logging
import re
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit, ndtri

from app.config.app_config import DEFAULT_K_MAX, DEFAULT_POSITIVITY_FLOOR
from app.config.yaml_loader import load_yaml_model
from app.data_processor import Panel, PanelSet
from app.utils import expressions
from app.utils.exceptions import KStarNeverReached
from app.utils.numerics import derive_key, stream_uniforms

logger = logging.getLogger(__name__)

_LAG_NAME = re.compile(r"^lag(\d+)\.([A-Za-z_][A-Za-z0-9_]*)$")
_LEAD_NAME = re.compile(r"^lead(\d+)\.([A-Za-z_][A-Za-z0-9_]*)$")
RESERVED_NAMES = frozenset({"a", "y", "k"})

Resolver = Callable[[str], np.ndarray]


# ============================================================================
# KERNEL MODELS
# ============================================================================


class LinearIndex(BaseModel):
    """Σ coefficient·term over monomial terms; ``{"1": c}`` is an intercept."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    terms: dict[str, float] = Field(default_factory=dict)

    @field_validator("terms")
    @classmethod
    def _parse_terms(cls, value: dict[str, float]) -> dict[str, float]:
        for text in value:
            expressions.parse(text)
        return value

    @property
    def monomials(self) -> tuple[tuple[expressions.Monomial, float], ...]:
        return tuple((expressions.parse(t), float(c)) for t, c in self.terms.items())

    @property
    def names(self) -> set[str]:
        return expressions.referenced_names(m for m, _ in self.monomials)

    def value(self, resolve: Resolver, n: int) -> np.ndarray:
        total = np.zeros(n)
        for monomial, coef in self.monomials:
            total = total + coef * monomial.evaluate(resolve, n)
        return total


class ContextKernel(LinearIndex):
    name: str
    distribution: Literal["gaussian", "bernoulli"] = "gaussian"
    noise_scale: float = Field(default=1.0, ge=0.0)


class DecisionKernel(LinearIndex):
    pass


class OutcomeKernel(LinearIndex):
    distribution: Literal["gaussian", "bernoulli"] = "gaussian"
    noise_scale: float = Field(default=1.0, ge=0.0)
    noise_terms: dict[str, float] = Field(default_factory=dict)

    @field_validator("noise_terms")
    @classmethod
    def _non_negative(cls, value: dict[str, float]) -> dict[str, float]:
        for text, coef in value.items():
            expressions.parse(text)
            if coef < 0:
                raise ValueError(f"noise term {text!r} needs a non-negative coefficient")
        return value

    @property
    def noise_monomials(self) -> tuple[tuple[expressions.Monomial, float], ...]:
        return tuple((expressions.parse(t), float(c)) for t, c in self.noise_terms.items())

    def noise_sd(self, resolve: Resolver, n: int) -> np.ndarray:
        sd = np.full(n, self.noise_scale)
        for monomial, coef in self.noise_monomials:
            sd = sd + coef * np.abs(monomial.evaluate(resolve, n))
        return sd


class ContinuationKernel(LinearIndex):
    """Whether the panel continues past job k.

    ``fixed``: K = min(length, k_max). ``constant``: continue with
    ``probability``. ``logistic``: continue with expit(index).
    """

    kind: Literal["fixed", "constant", "logistic"] = "fixed"
    length: int | None = Field(default=None, ge=1)
    probability: float = Field(default=1.0, ge=0.0, le=1.0)


class ScenarioSpec(BaseModel):
    """Generative model for synthetic panels plus ground-truth metadata."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    label: str = "scenario"
    k_max: int = Field(default=DEFAULT_K_MAX, ge=1)
    positivity_floor: float = Field(default=DEFAULT_POSITIVITY_FLOOR, ge=0.0, lt=0.5)
    contexts: tuple[ContextKernel, ...] = ()
    decision: DecisionKernel = Field(default_factory=DecisionKernel)
    outcome: OutcomeKernel = Field(default_factory=OutcomeKernel)
    continuation: ContinuationKernel = Field(default_factory=ContinuationKernel)
    truth: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_references(self) -> "ScenarioSpec":
        names = [c.name for c in self.contexts]
        for name in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) or name in RESERVED_NAMES or _is_history_name(name):
                raise ValueError(f"Invalid context column name {name!r}")
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate context columns in {names}")
        history = set(names) | {"a", "y"}
        for i, kernel in enumerate(self.contexts):
            _check_names(f"context {kernel.name!r}", kernel.names, set(names[:i]) | {"k"}, history)
        current = set(names) | {"k"}
        _check_names("decision", self.decision.names, current, history)
        outcome_names = self.outcome.names | expressions.referenced_names(m for m, _ in self.outcome.noise_monomials)
        _check_names("outcome", outcome_names, current | {"a"}, history)
        _check_names("continuation", self.continuation.names, current | {"a", "y"}, history)
        if self.positivity_floor == 0.0:
            logger.warning("Scenario %r has positivity floor 0; decision probabilities may reach 0 or 1", self.label)
        return self

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.contexts)

    @property
    def n_slots(self) -> int:
        """Uniform draws per job: one per context column, then decision, outcome, continuation."""
        return len(self.contexts) + 3

    def referenced_names(self) -> set[str]:
        names = set(self.decision.names) | self.outcome.names | self.continuation.names
        names |= expressions.referenced_names(m for m, _ in self.outcome.noise_monomials)
        for kernel in self.contexts:
            names |= kernel.names
        return names

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _is_history_name(name: str) -> bool:
    return bool(_LAG_NAME.match(name) or _LEAD_NAME.match(name))


def _check_names(kernel: str, names: set[str], current: set[str], history: set[str]) -> None:
    for name in names:
        lagged = _LAG_NAME.match(name)
        if lagged:
            if int(lagged.group(1)) < 1 or lagged.group(2) not in history:
                raise ValueError(f"{kernel}: unknown history term {name!r}")
        elif name not in current:
            raise ValueError(f"{kernel}: term {name!r} is not available (allowed: {sorted(current)} or lag<j>.<name>)")


def load_scenario(path: str | Path) -> ScenarioSpec:
    """Read a scenario YAML document."""
    return load_yaml_model(path, ScenarioSpec)


# ============================================================================
# HISTORY ACCESS
# ============================================================================


def history_resolver(
    accessor: Callable[[str, int], np.ndarray],
    k: int,
    n: int,
    current: Mapping[str, np.ndarray],
) -> Resolver:
    """Resolve term names at job ``k`` (1-based).

    ``accessor(variable, index)`` returns the values of ``variable`` at an
    earlier (or, for ``lead`` names, later) job; indices outside 1..k_max give 0.
    """

    def resolve(name: str) -> np.ndarray:
        if name in current:
            return current[name]
        if name == "k":
            return np.full(n, float(k))
        lagged = _LAG_NAME.match(name)
        if lagged:
            return accessor(lagged.group(2), k - int(lagged.group(1)))
        lead = _LEAD_NAME.match(name)
        if lead:
            return accessor(lead.group(2), k + int(lead.group(1)))
        raise KeyError(name)

    return resolve


# ============================================================================
# BATCH SIMULATION
# ============================================================================


@dataclass(frozen=True, eq=False)
class Trajectories:
    """Simulated panels as padded arrays; entries past a panel's K are 0.

    ``natural_a`` holds the decision each panel would have taken at the forced
    index (-1 when nothing was forced or the panel ended before it).
    """

    x: np.ndarray  # (n, k_max, d)
    a: np.ndarray  # (n, k_max)
    y: np.ndarray  # (n, k_max)
    sizes: np.ndarray  # (n,)
    natural_a: np.ndarray  # (n,)
    columns: tuple[str, ...]

    def __len__(self) -> int:
        return int(self.sizes.shape[0])

    def value(self, variable: str, index: int) -> np.ndarray:
        """Values of ``variable`` (column, ``a`` or ``y``) at 1-based job ``index``; 0 off-panel."""
        return _array_accessor(self.x, self.a, self.y, self.columns)(variable, index)

    def resolver(self, k: int) -> Resolver:
        return history_resolver(self.value, k, len(self), {})

    def panel(self, i: int, panel_id: str | None = None) -> Panel:
        size = int(self.sizes[i])
        return Panel(
            panel_id=str(i) if panel_id is None else panel_id,
            x=self.x[i, :size],
            a=self.a[i, :size],
            y=self.y[i, :size],
        )

    def to_panel_set(self, id_prefix: str = "") -> PanelSet:
        return PanelSet(
            panels=tuple(self.panel(i, f"{id_prefix}{i}") for i in range(len(self))),
            column_names=self.columns,
        )


def _array_accessor(
    x: np.ndarray, a: np.ndarray, y: np.ndarray, columns: tuple[str, ...]
) -> Callable[[str, int], np.ndarray]:
    n, k_max = a.shape

    def access(variable: str, index: int) -> np.ndarray:
        if index < 1 or index > k_max:
            return np.zeros(n)
        if variable == "a":
            return a[:, index - 1].astype(float)
        if variable == "y":
            return y[:, index - 1]
        return x[:, index - 1, columns.index(variable)]

    return access


def panel_uniforms(spec: ScenarioSpec, key: np.ndarray, start: int, count: int) -> np.ndarray:
    """Exogenous draws for panels ``start .. start+count-1``; shape (count, k_max, n_slots)."""
    per_panel = spec.k_max * spec.n_slots
    draws = np.empty((count, spec.k_max, spec.n_slots))
    for i in range(count):
        draws[i] = stream_uniforms(key, start + i, per_panel).reshape(spec.k_max, spec.n_slots)
    return draws


def run_kernels(spec: ScenarioSpec, uniforms: np.ndarray, forced: tuple[int, int] | None = None) -> Trajectories:
    """Apply the scenario kernels to pre-drawn uniforms.

    Args:
        spec: scenario.
        uniforms: (n, k_max, n_slots) open-interval uniforms.
        forced: optional (k_star, value); the decision at k_star is still
            drawn (recorded in ``natural_a``) but ``value`` is passed forward.
    """
    n = uniforms.shape[0]
    k_max, d = spec.k_max, len(spec.contexts)
    x = np.zeros((n, k_max, d))
    a = np.zeros((n, k_max), dtype=np.int8)
    y = np.zeros((n, k_max))
    sizes = np.full(n, k_max, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    natural = np.full(n, -1, dtype=np.int8)
    delta = spec.positivity_floor

    accessor = _array_accessor(x, a, y, spec.columns)

    for k in range(1, k_max + 1):
        u = uniforms[:, k - 1, :]
        current: dict[str, np.ndarray] = {}
        resolve = history_resolver(accessor, k, n, current)
        for c, kernel in enumerate(spec.contexts):
            index = kernel.value(resolve, n)
            if kernel.distribution == "bernoulli":
                values = (u[:, c] < expit(index)).astype(float)
            else:
                values = index + kernel.noise_scale * ndtri(u[:, c])
            current[kernel.name] = values
            x[:, k - 1, c] = values

        prob = np.clip(expit(spec.decision.value(resolve, n)), delta, 1.0 - delta)
        decision = (u[:, d] < prob).astype(np.int8)
        if forced is not None and k == forced[0]:
            natural = np.where(alive, decision, -1).astype(np.int8)
            decision = np.full(n, forced[1], dtype=np.int8)
        a[:, k - 1] = decision
        current["a"] = decision.astype(float)

        index = spec.outcome.value(resolve, n)
        if spec.outcome.distribution == "bernoulli":
            outcome = (u[:, d + 1] < expit(index)).astype(float)
        else:
            outcome = index + spec.outcome.noise_sd(resolve, n) * ndtri(u[:, d + 1])
        y[:, k - 1] = outcome
        current["y"] = outcome

        if k < k_max:
            go_on = _continues(spec, resolve, u[:, d + 2], k, n)
            stopping = alive & ~go_on
            sizes[stopping] = k
            alive &= go_on

    # zero the unobserved tail so padded arrays compare equal across worlds
    tail = np.arange(1, k_max + 1)[None, :] > sizes[:, None]
    x[tail] = 0.0
    a[tail] = 0
    y[tail] = 0.0
    return Trajectories(x=x, a=a, y=y, sizes=sizes, natural_a=natural, columns=spec.columns)


def _continues(spec: ScenarioSpec, resolve: Resolver, u: np.ndarray, k: int, n: int) -> np.ndarray:
    kernel = spec.continuation
    if kernel.kind == "fixed":
        return np.full(n, k < (kernel.length or spec.k_max))
    if kernel.kind == "constant":
        return u < kernel.probability
    return u < expit(kernel.value(resolve, n))


def simulate_batch(
    spec: ScenarioSpec,
    n_panels: int,
    seed: int,
    *path: int,
    forced: tuple[int, int] | None = None,
    start: int = 0,
) -> Trajectories:
    """Simulate panels ``start .. start+n_panels-1`` of the stream family (seed, *path)."""
    key = derive_key(seed, *path)
    return run_kernels(spec, panel_uniforms(spec, key, start, n_panels), forced)


def simulate_panels(spec: ScenarioSpec, n_panels: int, seed: int, *path: int) -> PanelSet:
    """Natural (unforced) panels as a :class:`PanelSet` with ids ``0 .. n-1``."""
    traj = simulate_batch(spec, n_panels, seed, *path)
    logger.info("Simulated %d panels of scenario %r (mean K %.2f)", n_panels, spec.label, traj.sizes.mean())
    return traj.to_panel_set()


def simulate_panel(spec: ScenarioSpec, seed: int) -> Panel:
    """One natural panel; a pure function of (spec, seed)."""
    return simulate_batch(spec, 1, seed).panel(0)


# ============================================================================
# WORLD PAIRS
# ============================================================================


@dataclass(frozen=True, eq=False)
class WorldPair:
    """Two trajectories sharing exogenous draws, forced to A=1 and A=0 at ``k_star``."""

    k_star: int
    world_1: Panel
    world_0: Panel
    natural_a: int
    shared_seed: int

    def world(self, arm: int) -> Panel:
        return self.world_1 if arm == 1 else self.world_0


@dataclass(frozen=True, eq=False)
class WorldPairBatch:
    k_star: int
    world_1: Trajectories
    world_0: Trajectories

    @property
    def natural_a(self) -> np.ndarray:
        return self.world_1.natural_a

    def world(self, arm: int) -> Trajectories:
        return self.world_1 if arm == 1 else self.world_0

    def reached(self) -> np.ndarray:
        """Pairs whose panels reach job k_star (identical in both worlds)."""
        return self.world_1.sizes >= self.k_star


def simulate_world_pairs(
    spec: ScenarioSpec, k_star: int, n_pairs: int, seed: int, *path: int, start: int = 0
) -> WorldPairBatch:
    if k_star < 1:
        raise ValueError("k_star must be >= 1")
    uniforms = panel_uniforms(spec, derive_key(seed, *path), start, n_pairs)
    return WorldPairBatch(
        k_star=k_star,
        world_1=run_kernels(spec, uniforms, forced=(k_star, 1)),
        world_0=run_kernels(spec, uniforms, forced=(k_star, 0)),
    )


def simulate_world_pair(spec: ScenarioSpec, k_star: int, seed: int) -> WorldPair:
    """World pair for the panel ``simulate_panel(spec, seed)`` would produce.

    Raises:
        KStarNeverReached: the panel ends before job ``k_star``.
    """
    batch = simulate_world_pairs(spec, k_star, 1, seed)
    if not batch.reached()[0]:
        raise KStarNeverReached(f"Panel ended at K={int(batch.world_1.sizes[0])} before job {k_star}")
    return WorldPair(
        k_star=k_star,
        world_1=batch.world_1.panel(0),
        world_0=batch.world_0.panel(0),
        natural_a=int(batch.natural_a[0]),
        shared_seed=int(seed),
    )
