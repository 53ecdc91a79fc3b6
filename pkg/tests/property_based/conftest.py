"""Shared Hypothesis strategies for property-based tests.

These composite strategies encode the panel and design constraints once and
are reused across all test modules in this package.
"""

import numpy as np
from app.data_processor import Panel, PanelSet
from hypothesis import strategies as st

FINITE = {"allow_nan": False, "allow_infinity": False}


@st.composite
def panel_set_strategy(
    draw: st.DrawFn, max_panels: int = 6, max_jobs: int = 8, max_features: int = 3
) -> PanelSet:
    """Generate a valid panel set with unique ids and a shared feature schema.

    Values span the full double range so CSV export has to keep all 17
    significant digits.

    Args:
        draw: Hypothesis draw function injected by ``@st.composite``.

    Returns:
        A PanelSet with 1..max_panels panels of 1..max_jobs jobs each.
    """
    d = draw(st.integers(min_value=0, max_value=max_features))
    n_panels = draw(st.integers(min_value=1, max_value=max_panels))
    values = st.floats(min_value=-1e300, max_value=1e300, **FINITE)
    panels = []
    for i in range(n_panels):
        k = draw(st.integers(min_value=1, max_value=max_jobs))
        x = np.array(draw(st.lists(st.lists(values, min_size=d, max_size=d), min_size=k, max_size=k))).reshape(k, d)
        a = draw(st.lists(st.integers(min_value=0, max_value=1), min_size=k, max_size=k))
        y = draw(st.lists(values, min_size=k, max_size=k))
        panels.append(Panel(panel_id=f"panel{i}", x=x, a=np.array(a), y=np.array(y)))
    return PanelSet(panels=tuple(panels), column_names=tuple(f"x{j}" for j in range(d)))


@st.composite
def design_seed_strategy(draw: st.DrawFn) -> tuple[int, int, int]:
    """Generate (seed, n, p) for a random Gaussian design with an intercept.

    n is at least 20·p so draws are full rank and logistic fits stay away
    from separation.

    Args:
        draw: Hypothesis draw function injected by ``@st.composite``.

    Returns:
        A ``(seed, n_rows, n_covariates)`` triple.
    """
    p = draw(st.integers(min_value=1, max_value=3))
    n = draw(st.integers(min_value=60 * p, max_value=300))
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    return seed, n, p


@st.composite
def probability_strategy(draw: st.DrawFn, size: int = 20) -> np.ndarray:
    """Generate a vector of probabilities in [0, 1], endpoints included.

    Args:
        draw: Hypothesis draw function injected by ``@st.composite``.

    Returns:
        A float array of length ``size``.
    """
    return np.array(draw(st.lists(st.floats(min_value=0.0, max_value=1.0, **FINITE), min_size=size, max_size=size)))


def gaussian_design(seed: int, n: int, p: int) -> tuple[np.random.Generator, np.ndarray]:
    """Random design [1, Z] with Z standard normal."""
    rng = np.random.default_rng(seed)
    return rng, np.column_stack([np.ones(n), rng.normal(size=(n, p))])
