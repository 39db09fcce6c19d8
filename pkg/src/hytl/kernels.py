"""Numeric inner loops.

Every kernel has a pure-numpy implementation and, when numba is importable,
an ``@njit`` twin. The active backend is chosen once at import time; set
``HYTL_NO_NUMBA=1`` to force the numpy path.
"""
from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    if os.environ.get("HYTL_NO_NUMBA", "").strip() not in ("", "0"):
        raise ImportError("numba disabled by HYTL_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations


def _window_reduce_np(values, lo, hi, out_len, take_max):
    # out[i] = reduce(values[i+lo : i+hi+1]); caller guarantees bounds.
    width = hi - lo + 1
    if width <= 0:
        fill = -np.inf if take_max else np.inf
        return np.full(out_len, fill)
    view = sliding_window_view(values[lo:lo + out_len + width - 1], width)
    return view.max(axis=1) if take_max else view.min(axis=1)


def _until_np(left, right, lo, hi, out_len):
    out = np.full(out_len, -np.inf)
    if hi < lo:
        return out
    # prefix minima of `left` starting at each i, built incrementally per offset
    running = np.full(out_len, np.inf)
    for off in range(0, hi + 1):
        if off >= lo:
            cand = np.minimum(right[off:off + out_len], running)
            out = np.maximum(out, cand)
        if off < hi:
            running = np.minimum(running, left[off:off + out_len])
    return out


def _propagate_np(step, x0, count):
    # rows: x0, step @ x0, step^2 @ x0, ... (augmented affine coordinates)
    out = np.empty((count + 1, x0.shape[0]))
    out[0] = x0
    for i in range(count):
        out[i + 1] = step @ out[i]
    return out


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _window_reduce_nb(values, lo, hi, out_len, take_max):
        # monotone deque over values[lo : lo + out_len + width - 1], O(n) total
        width = hi - lo + 1
        out = np.empty(out_len)
        sign = 1.0 if take_max else -1.0
        dq = np.empty(out_len + width, dtype=np.int64)
        head = 0
        tail = 0
        for j in range(lo, lo + out_len + width - 1):
            v = sign * values[j]
            while tail > head and sign * values[dq[tail - 1]] <= v:
                tail -= 1
            dq[tail] = j
            tail += 1
            i = j - hi  # window of output i ends at j
            if i >= 0:
                while dq[head] < i + lo:
                    head += 1
                out[i] = values[dq[head]]
        return out

    @njit(cache=True)
    def _until_nb(left, right, lo, hi, out_len):
        # same offset-major sweep as the numpy version, without temporaries
        out = np.full(out_len, -np.inf)
        running = np.full(out_len, np.inf)
        for off in range(0, hi + 1):
            if off >= lo:
                for i in range(out_len):
                    r = right[i + off]
                    cand = r if r < running[i] else running[i]
                    if cand > out[i]:
                        out[i] = cand
            if off < hi:
                for i in range(out_len):
                    v = left[i + off]
                    if v < running[i]:
                        running[i] = v
        return out

    @njit(cache=True)
    def _propagate_nb(step, x0, count):
        n = x0.shape[0]
        out = np.empty((count + 1, n))
        out[0] = x0
        for i in range(count):
            for r in range(n):
                s = 0.0
                for c in range(n):
                    s += step[r, c] * out[i, c]
                out[i + 1, r] = s
        return out


def window_max(values, lo, hi, out_len):
    """``out[i] = max(values[i+lo .. i+hi])`` for ``i < out_len``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if HAVE_NUMBA and hi >= lo:
        return _window_reduce_nb(values, lo, hi, out_len, True)
    return _window_reduce_np(values, lo, hi, out_len, True)


def window_min(values, lo, hi, out_len):
    """``out[i] = min(values[i+lo .. i+hi])`` for ``i < out_len``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if HAVE_NUMBA and hi >= lo:
        return _window_reduce_nb(values, lo, hi, out_len, False)
    return _window_reduce_np(values, lo, hi, out_len, False)


def until_scan(left, right, lo, hi, out_len):
    """Discrete until: ``max_{j in [i+lo, i+hi]} min(right[j], min left[i:j])``."""
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    if hi < lo:
        return np.full(out_len, -np.inf)
    if HAVE_NUMBA:
        return _until_nb(left, right, lo, hi, out_len)
    return _until_np(left, right, lo, hi, out_len)


def propagate(step, x0, count):
    """Repeatedly apply a one-step transition matrix, returning all iterates."""
    step = np.ascontiguousarray(step, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if HAVE_NUMBA:
        return _propagate_nb(step, x0, int(count))
    return _propagate_np(step, x0, int(count))


BACKEND = "numba" if HAVE_NUMBA else "numpy"
