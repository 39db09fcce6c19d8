"""Single-clock timed abstraction built from simulated trajectories.

States are pairs ``(k, n)``: segment ``n`` of trajectory ``k`` (both counted
as in the simulation, ``k`` from 1). All times are exact fractions on a fixed
resolution grid; continuous-side windows are rounded outward.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import AbstractionError

EOS = "EoS"
DEFAULT_RESOLUTION = Fraction(1, 10)


def state_name(q):
    return EOS if q == EOS else f"({q[0]},{q[1]})"


def parse_state(text):
    if text == EOS:
        return EOS
    k, n = text.strip("()").split(",")
    return (int(k), int(n))


def quantize(value, resolution=DEFAULT_RESOLUTION, mode="nearest"):
    """Round ``value`` to the resolution grid (``floor``, ``ceil`` or ``nearest``)."""
    v = Fraction(value).limit_denominator(10**9) / resolution
    if mode == "floor":
        k = math.floor(v)
    elif mode == "ceil":
        k = math.ceil(v)
    else:
        k = round(v)
    return k * resolution


@dataclass(frozen=True)
class TimedEvent:
    source: tuple
    target: object  # (k, n) or EOS
    lo: Fraction
    hi: Fraction
    symbol: str | None
    case: int

    @property
    def observable(self):
        return self.symbol is not None


@dataclass(frozen=True)
class SegmentTiming:
    """Nominal timing of one simulated trajectory."""

    taus: tuple  # dwell time of each segment n = 0..N
    leads: tuple  # for n < N
    lags: tuple
    symbols: tuple  # output symbol of the event ending segment n, n < N
    normal: bool = True

    @property
    def last(self):
        return len(self.taus) - 1


@dataclass
class TimedAutomaton:
    states: list
    initial: list
    events: list
    inv: dict  # state -> upper bound of the invariant [0, ub]
    resolution: Fraction = DEFAULT_RESOLUTION

    def feasible(self, q):
        if q != EOS and q not in self.inv:
            raise AbstractionError(f"unknown state {q}")
        return [e for e in self.events if e.source == q]

    def upper(self, q):
        return None if q == EOS else self.inv[q]

    def to_dict(self):
        return {
            "resolution": str(self.resolution),
            "states": [state_name(q) for q in self.states],
            "initial": [state_name(q) for q in self.initial],
            "invariants": {state_name(q): str(ub) for q, ub in self.inv.items()},
            "events": [
                {"source": state_name(e.source), "target": state_name(e.target),
                 "guard": [str(e.lo), str(e.hi)], "symbol": e.symbol, "case": e.case}
                for e in self.events
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            states = [parse_state(s) for s in d["states"]]
            inv = {parse_state(k): Fraction(v) for k, v in d["invariants"].items()}
            events = [
                TimedEvent(parse_state(e["source"]), parse_state(e["target"]),
                           Fraction(e["guard"][0]), Fraction(e["guard"][1]), e.get("symbol"),
                           int(e.get("case", 0)))
                for e in d["events"]
            ]
            return cls(states, [parse_state(s) for s in d["initial"]], events, inv,
                       Fraction(d.get("resolution", "1/10")))
        except (KeyError, ValueError, TypeError) as exc:
            raise AbstractionError(f"malformed timed automaton: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dot(self):
        lines = ["digraph T {", "  rankdir=LR;"]
        for q in self.states:
            shape = "doublecircle" if q in self.initial else "circle"
            lines.append(f'  "{state_name(q)}" [shape={shape}, '
                         f'label="{state_name(q)}\\nc<={self.inv[q]}"];')
        if any(e.target == EOS for e in self.events):
            lines.append(f'  "{EOS}" [shape=box];')
        for e in self.events:
            sym = e.symbol if e.symbol is not None else "eps"
            lines.append(f'  "{state_name(e.source)}" -> "{state_name(e.target)}" '
                         f'[label="{sym} [{e.lo},{e.hi}]"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_abstraction(timings, cover, feas_f=None, ind_f=None, resolution=DEFAULT_RESOLUTION):
    """Build the timed abstraction.

    ``timings`` maps trajectory index ``k`` to a :class:`SegmentTiming`.
    ``cover`` maps each normal ``k`` to the list of ``k'`` whose initial balls
    cover the end of trajectory ``k``; an empty list means the trajectory ends
    the simulation. ``feas_f`` maps ``(k, n)`` to ``[(fault id, symbol)]`` and
    ``ind_f`` maps ``(k, n, fault id)`` to the indices of the fault
    trajectories that cover it.
    """
    feas_f = feas_f or {}
    ind_f = ind_f or {}
    states, initial, events, inv = [], [], [], {}
    for k in sorted(timings):
        tm = timings[k]
        N = tm.last
        if len(tm.leads) < N or len(tm.lags) < N or len(tm.symbols) < N:
            raise AbstractionError(f"trajectory {k}: timing data does not cover all segments")
        for n in range(N + 1):
            q = (k, n)
            states.append(q)
            if n < N:
                tau = tm.taus[n]
                lo = quantize(tau - tm.leads[n], resolution, "floor")
                hi = quantize(tau + tm.lags[n], resolution, "ceil")
                lo = max(lo, Fraction(0))
                if lo > hi:
                    raise AbstractionError(f"empty guard window for {state_name(q)}")
                inv[q] = hi
                events.append(TimedEvent(q, (k, n + 1), lo, hi, tm.symbols[n], 1))
            else:
                tau = quantize(tm.taus[n], resolution, "nearest")
                inv[q] = tau
                if tm.normal:
                    if k not in cover:
                        raise AbstractionError(f"no cover entry for trajectory {k}")
                    targets = [(kk, 0) for kk in cover[k]] or [EOS]
                    for t in targets:
                        events.append(TimedEvent(q, t, tau, tau, None, 2))
                else:
                    events.append(TimedEvent(q, EOS, tau, tau, None, 3))
        if tm.normal:
            initial.append((k, 0))
    for (k, n), faults in feas_f.items():
        if (k, n) not in inv:
            raise AbstractionError(f"fault declared for unknown state ({k},{n})")
        for fid, symbol in faults:
            key = (k, n, fid)
            if key not in ind_f:
                raise AbstractionError(f"no Ind entry for fault {fid} in ({k},{n})")
            for kk in ind_f[key]:
                if kk not in timings:
                    raise AbstractionError(f"fault target trajectory {kk} unknown")
                events.append(TimedEvent((k, n), (kk, 0), Fraction(0), inv[(k, n)], symbol, 4))
    for e in events:
        if e.lo < 0 or e.lo > e.hi or e.hi > inv[e.source]:
            raise AbstractionError(f"guard [{e.lo},{e.hi}] of {state_name(e.source)} is malformed")
    return TimedAutomaton(states, initial, events, inv, resolution)


def check_output_preservation(T, timings):
    """Replay each nominal timing through ``T``; return a list of failures."""
    failures = []
    for k, tm in timings.items():
        for n in range(tm.last):
            tau = Fraction(tm.taus[n]).limit_denominator(10**9)
            ok = any(
                e.target == (k, n + 1) and e.lo <= tau <= e.hi and e.symbol == tm.symbols[n]
                for e in T.feasible((k, n))
            )
            if not ok:
                failures.append((k, n))
    return failures
