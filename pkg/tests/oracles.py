"""Independent reference implementations used only by the tests.

The MTL oracle recurses point by point over the sample grid with exact
rational window arithmetic. It shares no code with ``hytl.mtl.semantics``.
"""
from fractions import Fraction
import math

import numpy as np

from hytl.mtl import Always, And, Eventually, Not, Or, Predicate, TrueF, Until

INF = math.inf


def _exact(v):
    # decimal text of the float, so 0.15 / 0.05 is exactly 3
    return Fraction(repr(float(v)))


def grid_offsets(iv, step):
    """Grid offsets whose times fall in the interval, endpoints snapped outward."""
    h = _exact(step)
    a, b = _exact(iv.lo) / h, _exact(iv.hi) / h
    lo = math.floor(a)
    if a.denominator == 1 and not iv.lo_closed:
        lo = int(a) + 1
    hi = math.ceil(b)
    if b.denominator == 1 and not iv.hi_closed:
        hi = int(b) - 1
    return lo, hi


def oracle_reach(phi, step):
    if isinstance(phi, (TrueF, Predicate)):
        return 0
    if isinstance(phi, Not):
        return oracle_reach(phi.arg, step)
    if isinstance(phi, (And, Or)):
        return max(oracle_reach(phi.left, step), oracle_reach(phi.right, step))
    hi = max(grid_offsets(phi.interval, step)[1], 0)
    if isinstance(phi, Until):
        return hi + max(oracle_reach(phi.left, step), oracle_reach(phi.right, step))
    return hi + oracle_reach(phi.arg, step)


def rob(values, step, phi, k, view):
    """Robustness at grid index ``k`` (may be negative) in ``strong``/``weak``/``plain``."""
    if isinstance(phi, TrueF):
        return INF
    if isinstance(phi, Predicate):
        if k < 0:
            if view == "plain":
                raise ValueError("undefined")
            return -INF if view == "strong" else INF
        v = values[k][phi.index]
        return v - phi.c if phi.op == ">=" else phi.c - v
    if isinstance(phi, Not):
        flip = {"strong": "weak", "weak": "strong", "plain": "plain"}[view]
        return -rob(values, step, phi.arg, k, flip)
    if isinstance(phi, And):
        return min(rob(values, step, phi.left, k, view), rob(values, step, phi.right, k, view))
    if isinstance(phi, Or):
        return max(rob(values, step, phi.left, k, view), rob(values, step, phi.right, k, view))
    lo, hi = grid_offsets(phi.interval, step)
    js = range(k + lo, k + hi + 1)
    if isinstance(phi, Eventually):
        return max((rob(values, step, phi.arg, j, view) for j in js), default=-INF)
    if isinstance(phi, Always):
        return min((rob(values, step, phi.arg, j, view) for j in js), default=INF)
    if isinstance(phi, Until):
        best = -INF
        for j in js:
            guard = min((rob(values, step, phi.left, i, view) for i in range(k, j)), default=INF)
            best = max(best, min(rob(values, step, phi.right, j, view), guard))
        return best
    raise TypeError(phi)


def lyapunov_direct(A, Q):
    """Solve ``A^T M + M A = -Q`` through the Kronecker-product linear system."""
    A = np.asarray(A, float)
    n = A.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    m = np.linalg.solve(K, -np.asarray(Q, float).reshape(-1, order="F"))
    M = m.reshape((n, n), order="F")
    return 0.5 * (M + M.T)


def affine_flow_rk4(A, b, x0, tau, steps=20000):
    """Classical RK4 integration, used as a check on the matrix exponential."""
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    x = np.asarray(x0, float).copy()
    h = tau / steps
    f = lambda y: A @ y + b  # noqa: E731
    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x
