"""Ground-truth lag effects for simulated scenarios.

``oracle_lag_effect`` averages Y_{k+ℓ}(a) over world pairs, conditioning each
arm on its own world's events (the conditioning bins and K(a) >= k+ℓ).
``enumerate_lag_effect`` computes the same quantity exactly for discrete
scenarios by walking every branch of the outcome tree. ``check_identification``
compares the oracle with the observational contrast on natural panels, and
``overlap_limit_target`` computes the q(1-q)-weighted solve 𝔾β = g that the
estimator converges to when f is too coarse for the true effect.
"""

import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import expit

from app.components.simulator import (
    ScenarioSpec,
    Trajectories,
    history_resolver,
    simulate_batch,
    simulate_world_pairs,
)
from app.config.app_config import DEFAULT_CLIP_EPSILON
from app.utils import glm
from app.utils.exceptions import EmptyConditioningCell
from app.utils.features import FeatureSpec, build_rows, with_intercept
from app.utils.lag_estimator import clip_probability

logger = logging.getLogger(__name__)

ORACLE_CHUNK = 20_000
_Y_REFERENCE = re.compile(r"^(y|lag\d+\.y)$")


# ============================================================================
# CONDITIONING
# ============================================================================


class Bin(BaseModel):
    """Event on one variable of R_k: ``equals`` a value, or in ``[low, high)``.

    ``variable`` is a column of job k, ``lag{j}.{column|a|y}`` (job k-j) or
    ``lead{j}.{column}`` (job k+j, evaluated in each arm's own world).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    variable: str
    equals: float | None = None
    low: float | None = None
    high: float | None = None

    @model_validator(mode="after")
    def _one_kind(self) -> "Bin":
        if self.equals is not None and (self.low is not None or self.high is not None):
            raise ValueError(f"Bin on {self.variable!r}: use either equals or low/high")
        if self.equals is None and self.low is None and self.high is None:
            raise ValueError(f"Bin on {self.variable!r} has no bounds")
        return self

    def mask(self, values: np.ndarray) -> np.ndarray:
        if self.equals is not None:
            return values == self.equals
        keep = np.ones(values.shape, dtype=bool)
        if self.low is not None:
            keep &= values >= self.low
        if self.high is not None:
            keep &= values < self.high
        return keep


def _variable_values(traj: Trajectories, k: int, variable: str) -> np.ndarray:
    if variable in traj.columns:
        return traj.value(variable, k)
    return traj.resolver(k)(variable)


def event_mask(traj: Trajectories, k: int, lag: int, bins: Sequence[Bin]) -> np.ndarray:
    """Panels with job k+lag observed and every bin satisfied."""
    keep = traj.sizes >= k + lag
    for b in bins:
        keep &= b.mask(_variable_values(traj, k, b.variable))
    return keep


def _cell_keys(traj: Trajectories, k: int, variables: Sequence[str]) -> np.ndarray:
    if not variables:
        return np.zeros((len(traj), 0))
    return np.column_stack([_variable_values(traj, k, v) for v in variables])


# ============================================================================
# RESULT TYPES
# ============================================================================


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    mc_se: float
    n_effective: int
    n_replicates: int = 0
    arm_means: tuple[float, float] = (np.nan, np.nan)
    arm_counts: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class IdentificationReport:
    oracle: OracleEstimate
    observational: OracleEstimate
    difference: float
    joint_se: float

    @property
    def z_score(self) -> float:
        return self.difference / self.joint_se if self.joint_se > 0 else np.inf


@dataclass(frozen=True, eq=False)
class OverlapTarget:
    beta: np.ndarray
    gram: np.ndarray
    moment: np.ndarray
    n_panels: int
    xi: np.ndarray


# ============================================================================
# CONTRASTS
# ============================================================================


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> tuple[float, float, float]:
    """Mean, variance of the mean, and total weight (unit weights give the sample mean)."""
    total = float(weights.sum())
    mean = float(weights @ values / total)
    count = float(np.count_nonzero(weights))
    var = float(weights @ (values - mean) ** 2 / total) * count / max(count - 1.0, 1.0)
    return mean, var / count, total


def _arm_contrast(
    y1: np.ndarray, w1: np.ndarray, y0: np.ndarray, w0: np.ndarray, label: str
) -> tuple[float, float, tuple[float, float], tuple[int, int]]:
    n1, n0 = int(np.count_nonzero(w1)), int(np.count_nonzero(w0))
    if n1 == 0 or n0 == 0:
        raise EmptyConditioningCell(f"{label}: no replicates satisfy the conditioning event (arm counts 1:{n1}, 0:{n0})")
    m1, v1, _ = _weighted_mean(y1, w1)
    m0, v0, _ = _weighted_mean(y0, w0)
    return m1 - m0, float(np.sqrt(v1 + v0)), (m1, m0), (n1, n0)


def _marginal_contrast(
    world_1: tuple[np.ndarray, np.ndarray, np.ndarray],
    world_0: tuple[np.ndarray, np.ndarray, np.ndarray],
    reference: tuple[np.ndarray, np.ndarray],
    label: str,
) -> OracleEstimate:
    """Average per-cell contrasts with weights from the reference (natural) cell frequencies.

    Each world tuple is (y, event mask, cell keys); ``reference`` is
    (event mask, cell keys) for the distribution of R_k given the S_k event.
    """
    y1, e1, c1 = world_1
    y0, e0, c0 = world_0
    ref_event, ref_cells = reference
    if ref_cells.shape[1] == 0:
        value, se, means, counts = _arm_contrast(y1, e1.astype(float), y0, e0.astype(float), label)
        return OracleEstimate(value, se, min(counts), len(y1), means, counts)

    cells, counts = np.unique(ref_cells[ref_event], axis=0, return_counts=True)
    if cells.shape[0] == 0:
        raise EmptyConditioningCell(f"{label}: no replicates satisfy the conditioning event")
    weights = counts / counts.sum()
    contrasts, variances = [], []
    n_eff = len(y1)
    for cell in cells:
        in1 = e1 & np.all(c1 == cell, axis=1)
        in0 = e0 & np.all(c0 == cell, axis=1)
        value, se, _, arm_counts = _arm_contrast(y1, in1.astype(float), y0, in0.astype(float), f"{label} cell {cell}")
        contrasts.append(value)
        variances.append(se**2)
        n_eff = min(n_eff, *arm_counts)
    contrasts_arr = np.array(contrasts)
    value = float(weights @ contrasts_arr)
    weight_term = float(weights @ contrasts_arr**2 - value**2) / counts.sum()
    se = float(np.sqrt(weights**2 @ np.array(variances) + max(weight_term, 0.0)))
    return OracleEstimate(value, se, int(n_eff), len(y1))


# ============================================================================
# MONTE CARLO ORACLE
# ============================================================================


def oracle_lag_effect(
    spec: ScenarioSpec,
    k: int,
    lag: int,
    conditioning: Sequence[Bin] = (),
    replicates: int = 10_000,
    seed: int = 0,
    marginalize_over: Sequence[str] = (),
    path: tuple[int, ...] = (),
) -> OracleEstimate:
    """Monte Carlo lag effect at job k on job k+lag.

    Without ``marginalize_over`` this is the conditional effect given the bins.
    With it, per-cell effects over those R_k variables are averaged with the
    cell frequencies of the natural world inside the bins.

    Raises:
        EmptyConditioningCell: an arm (or a weighted cell) has no qualifying replicates.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    parts: dict[str, list[np.ndarray]] = {key: [] for key in ("y1", "e1", "c1", "y0", "e0", "c0", "en", "cn")}
    for start in range(0, replicates, ORACLE_CHUNK):
        size = min(ORACLE_CHUNK, replicates - start)
        pairs = simulate_world_pairs(spec, k, size, seed, *path, start=start)
        for arm in (1, 0):
            world = pairs.world(arm)
            parts[f"y{arm}"].append(world.value("y", k + lag))
            parts[f"e{arm}"].append(event_mask(world, k, lag, conditioning))
            parts[f"c{arm}"].append(_cell_keys(world, k, marginalize_over))
        natural_is_1 = pairs.natural_a == 1
        e_nat = np.where(natural_is_1, parts["e1"][-1], parts["e0"][-1])
        c_nat = np.where(natural_is_1[:, None], parts["c1"][-1], parts["c0"][-1])
        parts["en"].append(e_nat & pairs.reached())
        parts["cn"].append(c_nat)
    joined = {key: np.concatenate(value) for key, value in parts.items()}
    estimate = _marginal_contrast(
        (joined["y1"], joined["e1"], joined["c1"]),
        (joined["y0"], joined["e0"], joined["c0"]),
        (joined["en"], joined["cn"]),
        f"oracle k={k} lag={lag}",
    )
    logger.info("Oracle lag effect k=%d lag=%d: %.5f (mc_se %.5f, n_eff %d)", k, lag, estimate.value, estimate.mc_se, estimate.n_effective)
    return estimate


def observational_contrast(
    spec: ScenarioSpec,
    k: int,
    lag: int,
    conditioning: Sequence[Bin] = (),
    replicates: int = 10_000,
    seed: int = 0,
    marginalize_over: Sequence[str] = (),
    path: tuple[int, ...] = (),
) -> OracleEstimate:
    """E[Y_{k+ℓ} | A_k=1, event] - E[Y_{k+ℓ} | A_k=0, event] on natural panels."""
    ys, events, cells, decisions = [], [], [], []
    for start in range(0, replicates, ORACLE_CHUNK):
        size = min(ORACLE_CHUNK, replicates - start)
        traj = simulate_batch(spec, size, seed, *path, start=start)
        ys.append(traj.value("y", k + lag))
        events.append(event_mask(traj, k, lag, conditioning))
        cells.append(_cell_keys(traj, k, marginalize_over))
        decisions.append(traj.value("a", k))
    y, event, cell, a = (np.concatenate(v) for v in (ys, events, cells, decisions))
    return _marginal_contrast(
        (y, event & (a == 1.0), cell),
        (y, event & (a == 0.0), cell),
        (event, cell),
        f"observational k={k} lag={lag}",
    )


def check_identification(
    spec: ScenarioSpec,
    k: int,
    lag: int,
    replicates: int = 10_000,
    conditioning: Sequence[Bin] = (),
    seed: int = 0,
    marginalize_over: Sequence[str] = (),
) -> IdentificationReport:
    """Compare the counterfactual oracle with the observational contrast.

    The two use independent streams derived from ``seed``.
    """
    oracle = oracle_lag_effect(spec, k, lag, conditioning, replicates, seed, marginalize_over, path=(0,))
    observed = observational_contrast(spec, k, lag, conditioning, replicates, seed, marginalize_over, path=(1,))
    difference = observed.value - oracle.value
    joint_se = float(np.hypot(oracle.mc_se, observed.mc_se))
    logger.info("Identification check k=%d lag=%d: difference %.5f (joint se %.5f)", k, lag, difference, joint_se)
    return IdentificationReport(oracle=oracle, observational=observed, difference=difference, joint_se=joint_se)


# ============================================================================
# EXACT ENUMERATION
# ============================================================================


def check_enumerable(spec: ScenarioSpec) -> None:
    """Raise ValueError unless every random draw in ``spec`` is binary or never read."""
    continuous = [c.name for c in spec.contexts if c.distribution != "bernoulli"]
    if continuous:
        raise ValueError(f"Enumeration needs bernoulli contexts; {continuous} are gaussian")
    if spec.outcome.distribution == "gaussian":
        used = [n for n in spec.referenced_names() if _Y_REFERENCE.match(n)]
        if used:
            raise ValueError(f"Enumeration with a gaussian outcome needs kernels that never read y; found {used}")


def enumerate_paths(spec: ScenarioSpec, forced: tuple[int, int] | None = None) -> tuple[Trajectories, np.ndarray]:
    """Every branch of the outcome tree with its probability.

    Gaussian outcomes are stored as their conditional means. Returns the
    trajectories and the path probabilities (summing to 1).
    """
    check_enumerable(spec)
    k_max, d = spec.k_max, len(spec.contexts)
    x = np.zeros((1, k_max, d))
    a = np.zeros((1, k_max), dtype=np.int8)
    y = np.zeros((1, k_max))
    leaves: list[tuple[np.ndarray, np.ndarray, np.ndarray, int, float]] = []
    delta = spec.positivity_floor

    def access(variable: str, index: int) -> np.ndarray:
        if index < 1 or index > k_max:
            return np.zeros(1)
        if variable == "a":
            return a[:, index - 1].astype(float)
        if variable == "y":
            return y[:, index - 1]
        return x[:, index - 1, spec.columns.index(variable)]

    def record(k: int, weight: float) -> None:
        xs, as_, ys = x[0].copy(), a[0].copy(), y[0].copy()
        xs[k:], as_[k:], ys[k:] = 0.0, 0, 0.0
        leaves.append((xs, as_, ys, k, weight))

    def branches(prob: float) -> list[tuple[float, float]]:
        return [(v, w) for v, w in ((1.0, prob), (0.0, 1.0 - prob)) if w > 0.0]

    def job(k: int, weight: float, current: dict[str, np.ndarray], stage: int) -> None:
        resolve = history_resolver(access, k, 1, current)
        if stage < d:
            kernel = spec.contexts[stage]
            for value, w in branches(float(expit(kernel.value(resolve, 1))[0])):
                x[0, k - 1, stage] = value
                job(k, weight * w, {**current, kernel.name: np.array([value])}, stage + 1)
            return
        if stage == d:
            if forced is not None and k == forced[0]:
                options = [(float(forced[1]), 1.0)]
            else:
                prob = float(np.clip(expit(spec.decision.value(resolve, 1)), delta, 1.0 - delta)[0])
                options = branches(prob)
            for value, w in options:
                a[0, k - 1] = int(value)
                job(k, weight * w, {**current, "a": np.array([value])}, stage + 1)
            return
        if stage == d + 1:
            index = float(spec.outcome.value(resolve, 1)[0])
            options = branches(float(expit(index))) if spec.outcome.distribution == "bernoulli" else [(index, 1.0)]
            for value, w in options:
                y[0, k - 1] = value
                job(k, weight * w, {**current, "y": np.array([value])}, stage + 1)
            return
        if k == k_max:
            record(k, weight)
            return
        kernel = spec.continuation
        if kernel.kind == "fixed":
            go_on = 1.0 if k < (kernel.length or k_max) else 0.0
        elif kernel.kind == "constant":
            go_on = kernel.probability
        else:
            go_on = float(expit(kernel.value(resolve, 1))[0])
        if go_on < 1.0:
            record(k, weight * (1.0 - go_on))
        if go_on > 0.0:
            job(k + 1, weight * go_on, {}, 0)

    job(1, 1.0, {}, 0)
    traj = Trajectories(
        x=np.stack([leaf[0] for leaf in leaves]),
        a=np.stack([leaf[1] for leaf in leaves]),
        y=np.stack([leaf[2] for leaf in leaves]),
        sizes=np.array([leaf[3] for leaf in leaves], dtype=np.int64),
        natural_a=np.full(len(leaves), -1, dtype=np.int8),
        columns=spec.columns,
    )
    return traj, np.array([leaf[4] for leaf in leaves])


def _exact_contrast(
    arms: tuple[tuple[Trajectories, np.ndarray, np.ndarray], tuple[Trajectories, np.ndarray, np.ndarray]],
    reference: tuple[Trajectories, np.ndarray, np.ndarray],
    k: int,
    lag: int,
    marginalize_over: Sequence[str],
) -> float:
    """Weighted-path version of the marginal contrast; each tuple is (paths, probabilities, event mask)."""
    ref_traj, ref_w, ref_event = reference
    ref_cells = _cell_keys(ref_traj, k, marginalize_over)
    if not ref_event.any():
        raise EmptyConditioningCell("No path satisfies the conditioning event")
    cells = np.unique(ref_cells[ref_event], axis=0) if marginalize_over else np.zeros((1, 0))
    total_ref = ref_w[ref_event].sum()
    value = 0.0
    for cell in cells:
        cell_weight = ref_w[ref_event & np.all(ref_cells == cell, axis=1)].sum() / total_ref if marginalize_over else 1.0
        means = []
        for traj, w, event in arms:
            in_cell = event & np.all(_cell_keys(traj, k, marginalize_over) == cell, axis=1)
            mass = w[in_cell].sum()
            if mass <= 0.0:
                raise EmptyConditioningCell(f"No path reaches the conditioning cell {cell}")
            means.append(float(w[in_cell] @ traj.value("y", k + lag)[in_cell] / mass))
        value += cell_weight * (means[0] - means[1])
    return value


def enumerate_lag_effect(
    spec: ScenarioSpec,
    k: int,
    lag: int,
    conditioning: Sequence[Bin] = (),
    marginalize_over: Sequence[str] = (),
) -> float:
    """Exact lag effect for a discrete scenario."""
    arms = []
    for arm in (1, 0):
        traj, w = enumerate_paths(spec, forced=(k, arm))
        arms.append((traj, w, event_mask(traj, k, lag, conditioning)))
    natural, w_nat = enumerate_paths(spec)
    reference = (natural, w_nat, event_mask(natural, k, lag, conditioning))
    return _exact_contrast((arms[0], arms[1]), reference, k, lag, marginalize_over)


def enumerate_observational_contrast(
    spec: ScenarioSpec,
    k: int,
    lag: int,
    conditioning: Sequence[Bin] = (),
    marginalize_over: Sequence[str] = (),
) -> float:
    """Exact observational contrast for a discrete scenario."""
    natural, w = enumerate_paths(spec)
    event = event_mask(natural, k, lag, conditioning)
    decision = natural.value("a", k)
    arms = ((natural, w, event & (decision == 1.0)), (natural, w, event & (decision == 0.0)))
    return _exact_contrast(arms, (natural, w, event), k, lag, marginalize_over)


# ============================================================================
# OVERLAP-WEIGHTED LIMIT
# ============================================================================


def _check_pre_intervention(scenario: ScenarioSpec, spec: FeatureSpec) -> None:
    future = [t.label for t in spec.r_terms if t.source != "current"]
    if future:
        raise ValueError(f"Overlap target needs pre-intervention R_k; {future} read the future job")
    reads_decisions = [n for n in scenario.continuation.names if n in ("a", "y") or re.match(r"^lag\d+\.(a|y)$", n)]
    if reads_decisions:
        raise ValueError(f"Overlap target needs continuation independent of decisions; it reads {reads_decisions}")


def overlap_limit_target(
    scenario: ScenarioSpec,
    spec: FeatureSpec,
    n_panels: int,
    seed: int = 0,
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
) -> OverlapTarget:
    """Solve 𝔾β = g with 𝔾 = E[Σ_k q(1-q) f f'] and g = E[Σ_k q(1-q) ζ f].

    The per-row effect is the paired world difference Y_{k+ℓ}(1) - Y_{k+ℓ}(0)
    on the natural panel's own draws; its conditional mean given S_k is the
    marginalized lag effect when R_k is pre-intervention and job existence does
    not depend on decisions.
    """
    _check_pre_intervention(scenario, spec)
    natural = simulate_batch(scenario, n_panels, seed)
    rows = build_rows(natural.to_panel_set(), spec)
    xi = glm.fit_logistic(with_intercept(rows.s), rows.a).coefficients
    q, _ = clip_probability(expit(with_intercept(rows.s) @ xi), clip_epsilon)
    f = spec.f_matrix(rows.s)

    effect = np.empty(len(rows))
    for k in np.unique(rows.k):
        pairs = simulate_world_pairs(scenario, int(k), n_panels, seed)
        diff = pairs.world_1.value("y", int(k) + spec.lag) - pairs.world_0.value("y", int(k) + spec.lag)
        at_k = rows.k == k
        effect[at_k] = diff[rows.panel_index[at_k]]

    overlap = q * (1.0 - q)
    gram = f.T @ (overlap[:, None] * f) / n_panels
    moment = f.T @ (overlap * effect) / n_panels
    beta = scipy.linalg.solve(gram, moment)
    logger.info("Overlap-limit target beta=%s from %d panels", np.array2string(beta, precision=5), n_panels)
    return OverlapTarget(beta=beta, gram=gram, moment=moment, n_panels=n_panels, xi=xi)
