"""Formula syntax tree for metric temporal logic."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi):
            raise ValueError(f"malformed interval [{self.lo}, {self.hi}]")
        if self.lo == self.hi and not (self.lo_closed and self.hi_closed):
            raise ValueError("degenerate interval must be closed")


class Formula:
    """Base class. Subclasses are immutable and compare structurally."""

    def __str__(self):
        from .parser import to_text

        return to_text(self)

    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __invert__(self):
        return Not(self)


@dataclass(frozen=True, eq=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True, eq=True)
class Predicate(Formula):
    """``x[index] >= c`` or ``x[index] <= c`` (``index`` is zero-based)."""

    index: int
    op: str
    c: float

    def __post_init__(self):
        if self.op not in (">=", "<="):
            raise ValueError(f"unknown comparison {self.op!r}")

    def signed_dist(self, x):
        v = float(x[self.index])
        return v - self.c if self.op == ">=" else self.c - v

    def signed_dist_many(self, X):
        col = np.asarray(X)[..., self.index]
        return col - self.c if self.op == ">=" else self.c - col


@dataclass(frozen=True, eq=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True, eq=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True, eq=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True, eq=True)
class Until(Formula):
    interval: Interval
    left: Formula
    right: Formula


@dataclass(frozen=True, eq=True)
class Eventually(Formula):
    interval: Interval
    arg: Formula


@dataclass(frozen=True, eq=True)
class Always(Formula):
    interval: Interval
    arg: Formula


TRUE = TrueF()


def horizon(phi):
    """Largest future time offset the formula inspects."""
    if isinstance(phi, (TrueF, Predicate)):
        return 0.0
    if isinstance(phi, Not):
        return horizon(phi.arg)
    if isinstance(phi, (And, Or)):
        return max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, Until):
        return phi.interval.hi + max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, (Eventually, Always)):
        return phi.interval.hi + horizon(phi.arg)
    raise TypeError(f"not a formula: {phi!r}")


def coordinates(phi):
    """Zero-based state coordinates referenced by the formula."""
    if isinstance(phi, TrueF):
        return frozenset()
    if isinstance(phi, Predicate):
        return frozenset([phi.index])
    if isinstance(phi, (Not, Eventually, Always)):
        return coordinates(phi.arg)
    return coordinates(phi.left) | coordinates(phi.right)
