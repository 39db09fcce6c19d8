"""Grid-based robustness semantics.

A signal is a uniform sample grid ``values[k] = x(k*h)``. Extended
evaluation accepts negative grid indices: there the trajectory is undefined
and atoms evaluate to ``-inf`` in the strong view and ``+inf`` in the weak
view. Negation swaps the views. Temporal windows are snapped outward to the
grid: ``[a, b]`` covers indices ``floor(a/h) .. ceil(b/h)``; an open endpoint
lying exactly on the grid excludes that sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import HorizonError
from .ast import Always, And, Eventually, Not, Or, Predicate, TrueF, Until

STRONG = "strong"
WEAK = "weak"
PLAIN = "plain"
_SNAP = 1e-9


def other(view):
    return {STRONG: WEAK, WEAK: STRONG, PLAIN: PLAIN}[view]


@dataclass(frozen=True, eq=False)
class Signal:
    """Samples ``values[k]`` of a trajectory at clock times ``k * step``."""

    values: np.ndarray
    step: float

    @property
    def length(self):
        return self.values.shape[0]

    def index_of(self, tau):
        k = round(tau / self.step)
        if abs(k * self.step - tau) > 1e-6 * max(1.0, self.step):
            raise ValueError(f"time {tau} is not on the sample grid")
        return int(k)


def window(interval, step):
    """Inclusive grid offsets ``(k_lo, k_hi)`` covered by ``interval``."""
    a = interval.lo / step
    b = interval.hi / step
    k_lo = math.floor(a + _SNAP)
    if not interval.lo_closed and abs(a - round(a)) <= _SNAP:
        k_lo = round(a) + 1
    k_hi = math.ceil(b - _SNAP)
    if not interval.hi_closed and abs(b - round(b)) <= _SNAP:
        k_hi = round(b) - 1
    return k_lo, k_hi


def reach(phi, step):
    """Largest grid offset inspected by ``phi``."""
    if isinstance(phi, (TrueF, Predicate)):
        return 0
    if isinstance(phi, Not):
        return reach(phi.arg, step)
    if isinstance(phi, (And, Or)):
        return max(reach(phi.left, step), reach(phi.right, step))
    _, k_hi = window(phi.interval, step)
    k_hi = max(k_hi, 0)
    if isinstance(phi, Until):
        return k_hi + max(reach(phi.left, step), reach(phi.right, step))
    return k_hi + reach(phi.arg, step)


def _atom(sig, phi, k0, k1, view):
    if k1 >= sig.length:
        raise HorizonError(f"evaluation reaches sample {k1} beyond the horizon {sig.length - 1}")
    out = np.empty(k1 - k0 + 1)
    neg = max(0, min(-k0, k1 - k0 + 1))  # count of negative indices
    if neg:
        if view == PLAIN:
            raise HorizonError("plain robustness evaluated before time zero")
        out[:neg] = -np.inf if view == STRONG else np.inf
    lo = k0 + neg
    if lo <= k1:
        out[neg:] = phi.signed_dist_many(sig.values[lo:k1 + 1])
    return out


def evaluate(sig, phi, k0, k1, view):
    """Robustness of ``phi`` at every grid index in ``k0 .. k1`` (inclusive)."""
    n = k1 - k0 + 1
    if isinstance(phi, TrueF):
        return np.full(n, np.inf)
    if isinstance(phi, Predicate):
        return _atom(sig, phi, k0, k1, view)
    if isinstance(phi, Not):
        return -evaluate(sig, phi.arg, k0, k1, other(view))
    if isinstance(phi, And):
        return np.minimum(evaluate(sig, phi.left, k0, k1, view),
                          evaluate(sig, phi.right, k0, k1, view))
    if isinstance(phi, Or):
        return np.maximum(evaluate(sig, phi.left, k0, k1, view),
                          evaluate(sig, phi.right, k0, k1, view))
    k_lo, k_hi = window(phi.interval, sig.step)
    if isinstance(phi, Until):
        if k_hi < k_lo:
            return np.full(n, -np.inf)
        left = evaluate(sig, phi.left, k0, k1 + k_hi, view)
        right = evaluate(sig, phi.right, k0, k1 + k_hi, view)
        return kernels.until_scan(left, right, k_lo, k_hi, n)
    if k_hi < k_lo:
        return np.full(n, -np.inf if isinstance(phi, Eventually) else np.inf)
    child = evaluate(sig, phi.arg, k0 + k_lo, k1 + k_hi, view)
    if isinstance(phi, Eventually):
        return kernels.window_max(child, 0, k_hi - k_lo, n)
    if isinstance(phi, Always):
        return kernels.window_min(child, 0, k_hi - k_lo, n)
    raise TypeError(f"not a formula: {phi!r}")


def signed_dist(x, pred):
    """Signed distance from ``x`` to the half-space of a predicate."""
    return pred.signed_dist(x)


def robustness(sig, phi, tau=0.0):
    """Classical robustness degree at clock time ``tau``."""
    k = sig.index_of(tau)
    return float(evaluate(sig, phi, k, k, PLAIN)[0])


def ext_robustness(sig, phi, tau, view):
    """Extended robustness (``view`` is ``"strong"`` or ``"weak"``)."""
    if view not in (STRONG, WEAK):
        raise ValueError(f"unknown view {view!r}")
    k = sig.index_of(tau)
    return float(evaluate(sig, phi, k, k, view)[0])


@dataclass(frozen=True)
class SatResult:
    sat: bool
    boundary: bool
    robustness: float


def sat(sig, phi, tau, view):
    r = ext_robustness(sig, phi, tau, view)
    return SatResult(r > 0, r == 0, r)
