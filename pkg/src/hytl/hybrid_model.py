"""Hybrid automata with affine dynamics, simulation and event detection."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import kernels
from .errors import DeadlockError, IntegrationError, ModelError, SchedulingError

EVENT_TOL = 1e-9  # seconds, bisection tolerance on event times
GUARD_TOL = 1e-6  # state-space slack when checking guard/invariant membership


@dataclass(frozen=True)
class Halfspace:
    """The closed half-space ``w . x <= c``."""

    w: tuple
    c: float

    def value(self, x):
        return float(np.dot(self.w, x)) - self.c

    def to_dict(self):
        return {"w": list(self.w), "c": self.c}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["w"]), float(d["c"]))


@dataclass(frozen=True, eq=False)
class Location:
    id: str
    A: np.ndarray
    b: np.ndarray
    invariant: tuple = ()

    @property
    def dim(self):
        return self.b.shape[0]

    def in_invariant(self, x, tol=GUARD_TOL):
        return all(h.value(x) <= tol * max(1.0, abs(h.c)) for h in self.invariant)

    def augmented(self):
        """The (n+1)x(n+1) generator [[A, b], [0, 0]] of the affine flow."""
        n = self.dim
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = self.A
        aug[:n, n] = self.b
        return aug

    def equilibrium(self):
        return np.linalg.solve(self.A, -self.b)


@dataclass(frozen=True)
class Guard:
    """Conjunction of equalities ``w . x = c`` and inequalities ``w . x <= c``."""

    eq: tuple = ()
    le: tuple = ()

    def holds(self, x, tol=GUARD_TOL):
        for h in self.eq:
            if abs(h.value(x)) > tol * max(1.0, abs(h.c)):
                return False
        return all(h.value(x) <= tol * max(1.0, abs(h.c)) for h in self.le)

    def to_dict(self):
        return {"eq": [h.to_dict() for h in self.eq], "le": [h.to_dict() for h in self.le]}

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        return cls(
            tuple(Halfspace.from_dict(h) for h in d.get("eq", [])),
            tuple(Halfspace.from_dict(h) for h in d.get("le", [])),
        )


@dataclass(frozen=True, eq=False)
class Event:
    id: str
    source: str
    target: str
    guard: Guard
    R: np.ndarray
    d: np.ndarray
    symbol: str | None = None  # None is the unobservable symbol
    kind: str = "deterministic"

    def reset(self, x):
        return self.R @ x + self.d

    @property
    def observable(self):
        return self.symbol is not None


@dataclass(frozen=True, eq=False)
class HybridAutomaton:
    locations: dict
    events: tuple
    initial: tuple = ()  # (location id, lo vector, hi vector)

    def __post_init__(self):
        for e in self.events:
            for end in (e.source, e.target):
                if end not in self.locations:
                    raise ModelError(f"event {e.id} references unknown location {end}")
        for loc, lo, hi in self.initial:
            if loc not in self.locations:
                raise ModelError(f"initial set references unknown location {loc}")
            if np.any(np.asarray(lo) > np.asarray(hi)):
                raise ModelError(f"empty initial box for {loc}")

    @property
    def dim(self):
        return next(iter(self.locations.values())).dim

    def event(self, eid):
        for e in self.events:
            if e.id == eid:
                return e
        raise ModelError(f"unknown event {eid}")

    def outgoing(self, loc_id, kind=None):
        return [e for e in self.events if e.source == loc_id and (kind is None or e.kind == kind)]

    def check_guards(self, samples=64, seed=0):
        """Sample-check that each guard lies inside its source invariant.

        Returns a list of offending event ids. Points are drawn near the guard
        surfaces so the check is meaningful for equality guards.
        """
        rng = np.random.default_rng(seed)
        bad = []
        for e in self.events:
            loc = self.locations[e.source]
            if not loc.invariant:
                continue
            pts = _guard_representatives(e.guard, loc, rng, samples)
            if any(not loc.in_invariant(p) for p in pts if e.guard.holds(p)):
                bad.append(e.id)
        return bad

    def to_dict(self):
        return {
            "dim": self.dim,
            "locations": [
                {
                    "id": loc.id,
                    "A": loc.A.tolist(),
                    "b": loc.b.tolist(),
                    "invariant": [h.to_dict() for h in loc.invariant],
                }
                for loc in self.locations.values()
            ],
            "events": [
                {
                    "id": e.id,
                    "source": e.source,
                    "target": e.target,
                    "guard": e.guard.to_dict(),
                    "reset": {"R": e.R.tolist(), "d": e.d.tolist()},
                    "symbol": e.symbol,
                    "kind": e.kind,
                }
                for e in self.events
            ],
            "initial": [
                {"location": loc, "lo": list(map(float, lo)), "hi": list(map(float, hi))}
                for loc, lo, hi in self.initial
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            locs = {}
            for item in d["locations"]:
                A = np.asarray(item["A"], dtype=float)
                b = np.asarray(item.get("b", [0.0] * A.shape[0]), dtype=float)
                inv = tuple(Halfspace.from_dict(h) for h in item.get("invariant", []))
                locs[item["id"]] = Location(item["id"], A, b, inv)
            n = next(iter(locs.values())).dim
            events = []
            for item in d.get("events", []):
                reset = item.get("reset", {})
                R = np.asarray(reset.get("R", np.eye(n)), dtype=float)
                dv = np.asarray(reset.get("d", np.zeros(n)), dtype=float)
                kind = item.get("kind", "deterministic")
                if kind not in ("deterministic", "nondeterministic"):
                    raise ModelError(f"bad event kind {kind!r}")
                events.append(
                    Event(item["id"], item["source"], item["target"],
                          Guard.from_dict(item.get("guard")), R, dv, item.get("symbol"), kind)
                )
            initial = tuple(
                (it["location"], np.asarray(it["lo"], float), np.asarray(it["hi"], float))
                for it in d.get("initial", [])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed automaton document: {exc}") from exc
        return cls(locs, tuple(events), initial)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _guard_representatives(guard, loc, rng, count):
    # project random points around the equilibrium onto the guard equalities
    n = loc.dim
    try:
        centre = loc.equilibrium()
    except np.linalg.LinAlgError:
        centre = np.zeros(n)
    pts = centre + rng.normal(scale=1.0, size=(count, n))
    if guard.eq:
        W = np.array([h.w for h in guard.eq])
        c = np.array([h.c for h in guard.eq])
        corr = np.linalg.pinv(W) @ (W @ pts.T - c[:, None])
        pts = pts - corr.T
    return pts


# ---------------------------------------------------------------------------
# flows


def flow(location, x0, tau):
    """State reached from ``x0`` after ``tau`` seconds of the affine flow."""
    if tau < 0:
        raise ValueError("flow time must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    phi = expm(location.augmented() * tau)
    out = phi[:n, :n] @ x0 + phi[:n, n]
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state in {location.id} at tau={tau}")
    return out


def flow_grid(location, x0, step, count):
    """States at clock times ``0, step, ..., count*step`` as a (count+1, n) array."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    E = expm(location.augmented() * step)
    states = kernels.propagate(E, np.append(x0, 1.0), count)[:, :n]
    if not np.all(np.isfinite(states)):
        raise IntegrationError(f"non-finite state in {location.id}")
    return states


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Segment:
    event: str | None  # None marks the initialization event
    location: str
    x0: np.ndarray
    dwell: float
    start_time: float
    times: np.ndarray  # clock times of the stored samples
    states: np.ndarray
    end_state: np.ndarray

    def sample(self, tau):
        """Linear interpolation of the stored samples at clock time ``tau``."""
        return np.array([np.interp(tau, self.times, self.states[:, j])
                         for j in range(self.states.shape[1])])


@dataclass(frozen=True, eq=False)
class Trajectory:
    segments: tuple
    grid_step: float
    ended_by: str = "horizon"  # or "event"

    @property
    def dwell_times(self):
        return [s.dwell for s in self.segments]

    @property
    def event_ids(self):
        return [s.event for s in self.segments]

    def event_log(self, automaton):
        log = []
        for m, seg in enumerate(self.segments):
            ev = automaton.event(seg.event) if seg.event else None
            log.append({
                "segment": m,
                "event": seg.event,
                "symbol": ev.symbol if ev else None,
                "location": seg.location,
                "time": seg.start_time,
                "x0": seg.x0.tolist(),
                "dwell": seg.dwell,
            })
        return log

    def write_csv(self, path):
        n = self.segments[0].x0.shape[0]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["segment", "clock_time"] + [f"x{j + 1}" for j in range(n)])
            for m, seg in enumerate(self.segments):
                for tau, x in zip(seg.times, seg.states):
                    wr.writerow([m, repr(float(tau))] + [repr(float(v)) for v in x])


@dataclass(frozen=True)
class TimedSymbol:
    time: float
    symbol: str


def project_outputs(trajectory, automaton):
    """Observable (absolute time, symbol) pairs of a trajectory, in order."""
    out = []
    for seg in trajectory.segments:
        if seg.event is None:
            continue
        ev = automaton.event(seg.event)
        if ev.observable:
            out.append(TimedSymbol(seg.start_time, ev.symbol))
    return out


def _surface_functions(location, events):
    # one scalar function per deterministic event; crossing zero means firing
    funcs = []
    for e in events:
        if e.guard.eq:
            h = e.guard.eq[0]
            funcs.append((e, np.asarray(h.w), h.c, "cross"))
        elif e.guard.le:
            funcs.append((e, None, None, "enter"))
        # guard == whole space: fires immediately, handled as "enter"
        else:
            funcs.append((e, None, None, "enter"))
    return funcs


def _guard_level(e, x):
    # max violation of the guard's inequalities; <= 0 means inside
    if not e.guard.le:
        return -1.0
    return max(h.value(x) for h in e.guard.le)


def _invariant_level(location, x):
    if not location.invariant:
        return -math.inf
    return max(h.value(x) - GUARD_TOL * max(1.0, abs(h.c)) for h in location.invariant)


def _bisect(fn, lo, hi, tol=EVENT_TOL):
    # fn(lo) is False, fn(hi) is True; return the smallest hi within tol
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _first_trigger(location, events, x0, t_max, step):
    """Earliest (time, event) at which a deterministic event fires within ``t_max``."""
    count = max(1, int(math.ceil(t_max / step)))
    states = flow_grid(location, x0, step, count)
    taus = np.arange(count + 1) * step
    best = None
    for e in events:
        if e.guard.eq:
            h = e.guard.eq[0]
            g = states @ np.asarray(h.w) - h.c
            s0 = g[0]
            if s0 == 0.0:
                s0 = g[1] if len(g) > 1 else 0.0
            crossed = np.nonzero(np.sign(g[1:]) != np.sign(s0))[0]
            cands = crossed + 1
            sign0 = np.sign(s0)

            def fired(t, h=h, sign0=sign0):
                return np.sign(h.value(flow(location, x0, t))) != sign0
        else:
            g = np.array([_guard_level(e, x) for x in states])
            cands = np.nonzero(g[1:] <= 0.0)[0] + 1

            def fired(t, e=e):
                return _guard_level(e, flow(location, x0, t)) <= 0.0
        for k in cands:
            lo, hi = taus[k - 1], min(taus[k], t_max)
            if hi <= 0.0:
                continue
            t = _bisect(fired, lo, hi) if lo < hi else hi
            if t > t_max:
                break
            if e.guard.holds(flow(location, x0, t), tol=1e-5):
                if best is None or t < best[0]:
                    best = (t, e)
                break
            # crossing outside the inequality part of the guard; keep looking
    return best


def _first_exit(location, x0, t_max, step):
    if not location.invariant:
        return None
    count = max(1, int(math.ceil(t_max / step)))
    states = flow_grid(location, x0, step, count)
    lv = np.array([_invariant_level(location, x) for x in states])
    out = np.nonzero(lv > 0.0)[0]
    if len(out) == 0:
        return None
    k = out[0]
    if k == 0:
        return 0.0
    taus = np.arange(count + 1) * step
    return _bisect(lambda t: _invariant_level(location, flow(location, x0, t)) > 0.0,
                   taus[k - 1], min(taus[k], t_max))


def simulate(automaton, initial, schedule=(), horizon=100.0, grid_step=0.05, check_initial=True):
    """Simulate one trajectory.

    ``initial`` is ``(location id, state)``; ``schedule`` lists
    ``(absolute time, event id)`` for nondeterministic events.
    """
    loc_id, x = initial
    x = np.asarray(x, dtype=float)
    if check_initial and automaton.initial:
        ok = any(
            lid == loc_id and np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)
            for lid, lo, hi in automaton.initial
        )
        if not ok:
            raise SchedulingError(f"initial state not in the initial set of {loc_id}")
    schedule = sorted(((float(t), eid) for t, eid in schedule), key=lambda p: p[0])
    for (t1, _), (t2, _) in zip(schedule, schedule[1:]):
        if t2 <= t1:
            raise SchedulingError("schedule times must be strictly increasing")
    t_abs = 0.0
    segments = []
    entering = None
    pending = list(schedule)
    ended_by = "horizon"
    while True:
        loc = automaton.locations[loc_id]
        budget = horizon - t_abs
        next_sched = pending[0] if pending else None
        limit = budget
        if next_sched is not None:
            limit = min(limit, next_sched[0] - t_abs)
        det = automaton.outgoing(loc_id, "deterministic")
        trig = _first_trigger(loc, det, x, limit, grid_step) if det and limit > 0 else None
        exit_t = _first_exit(loc, x, limit, grid_step) if limit > 0 else None
        if trig is not None and (exit_t is None or trig[0] <= exit_t + 1e-7):
            dwell, ev = trig
        elif exit_t is not None:
            raise DeadlockError(
                f"flow leaves the invariant of {loc_id} at clock time {exit_t:.6g} "
                "with no enabled deterministic event")
        elif next_sched is not None and next_sched[0] - t_abs <= budget:
            dwell = next_sched[0] - t_abs
            ev = automaton.event(next_sched[1])
            pending.pop(0)
            if ev.source != loc_id:
                raise SchedulingError(
                    f"scheduled event {ev.id} at t={next_sched[0]} but system is in {loc_id}")
            if ev.kind != "nondeterministic":
                raise SchedulingError(f"event {ev.id} is deterministic and cannot be scheduled")
        else:
            dwell, ev = budget, None
        segments.append(_make_segment(entering, loc, x, dwell, t_abs, grid_step))
        end = segments[-1].end_state
        if ev is None:
            break
        if not ev.guard.holds(end, tol=1e-5):
            raise SchedulingError(f"guard of {ev.id} violated when it fires")
        t_abs += dwell
        x = ev.reset(end)
        loc_id = ev.target
        entering = ev.id
        if t_abs >= horizon:
            # the event fires exactly at the horizon; record the empty tail segment
            segments.append(_make_segment(entering, automaton.locations[loc_id], x, 0.0,
                                          t_abs, grid_step))
            ended_by = "event"
            break
        if len(segments) > 10_000:
            raise IntegrationError("too many events; possible Zeno behaviour")
    return Trajectory(tuple(segments), grid_step, ended_by)


def _make_segment(event, loc, x0, dwell, start, step):
    count = int(math.floor(dwell / step + 1e-9))
    states = flow_grid(loc, x0, step, count)
    times = np.arange(count + 1) * step
    end = flow(loc, x0, dwell)
    if dwell - times[-1] > 1e-12:
        times = np.append(times, dwell)
        states = np.vstack([states, end])
    return Segment(event, loc.id, np.asarray(x0, float).copy(), float(dwell), float(start),
                   times, states, end)
