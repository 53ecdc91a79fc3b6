"""Monomial expressions shared by feature bases and scenario kernels.

An expression is ``1`` (the constant) or a product of factors joined by
``*``; each factor is a name with an optional integer power, e.g.
``age``, ``age^2``, ``lag1.a*age``. Names are resolved by the caller, so the
same grammar serves dataset columns and simulator history terms.
"""

import re
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from functools import reduce

import numpy as np

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
CONSTANT = "1"


@dataclass(frozen=True)
class Factor:
    name: str
    power: int = 1


@dataclass(frozen=True)
class Monomial:
    """Parsed expression; an empty factor tuple is the constant 1."""

    text: str
    factors: tuple[Factor, ...]

    @property
    def is_constant(self) -> bool:
        return not self.factors

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    def evaluate(self, resolve: Callable[[str], np.ndarray], size: int) -> np.ndarray:
        """Evaluate with ``resolve(name)`` supplying each factor's values."""
        if self.is_constant:
            return np.ones(size)
        values = (np.asarray(resolve(f.name), dtype=float) ** f.power for f in self.factors)
        return reduce(np.multiply, values)


def parse(text: str) -> Monomial:
    """Parse ``text`` into a :class:`Monomial`.

    Raises:
        ValueError: if a factor name or power is malformed.
    """
    cleaned = text.replace(" ", "")
    if cleaned == CONSTANT:
        return Monomial(text=CONSTANT, factors=())
    factors = []
    for part in cleaned.split("*"):
        name, _, power = part.partition("^")
        if not _NAME.match(name):
            raise ValueError(f"Invalid term {text!r}: bad factor {part!r}")
        if power and (not power.isdigit() or int(power) < 1):
            raise ValueError(f"Invalid term {text!r}: power must be a positive integer")
        factors.append(Factor(name=name, power=int(power) if power else 1))
    return Monomial(text=cleaned, factors=tuple(factors))


def parse_all(texts: Iterable[str]) -> tuple[Monomial, ...]:
    return tuple(parse(t) for t in texts)


def referenced_names(monomials: Iterable[Monomial]) -> set[str]:
    return {name for m in monomials for name in m.names}


def is_valid_name(name: str) -> bool:
    return bool(_NAME.match(name))
