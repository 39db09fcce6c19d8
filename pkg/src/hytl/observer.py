"""Basic observer over sets of timed atoms, its runtime, and refinement.

An atom ``(q, a, b)`` states that the abstraction may be in ``q`` with clock
value in ``[t + a, t + b]`` at external time ``t`` since the last update.
Negative clock values are latent: the transition into ``q`` is still pending.
All arithmetic uses :class:`fractions.Fraction`.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .abstraction import EOS, parse_state, state_name
from .errors import (CycleError, HorizonEnd, ObservationInconsistent, ObserverError,
                     RefinementError, ResourceError)

ZERO = Fraction(0)


@dataclass(frozen=True, order=True)
class Atom:
    q: object
    a: Fraction
    b: Fraction

    def __str__(self):
        return f"{state_name(self.q)}[{_fmt(self.a)},{_fmt(self.b)}]"

    def shifted(self, t):
        return Atom(self.q, self.a + t, self.b + t)


def _fmt(x):
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else str(float(x))


def _key(q):
    return (1, 0, 0) if q == EOS else (0, q[0], q[1])


def canonical(atoms):
    """Merge atoms of the same state whose intervals overlap or touch."""
    by_q = {}
    for at in atoms:
        by_q.setdefault(at.q, []).append((at.a, at.b))
    out = []
    for q, ivs in by_q.items():
        ivs.sort()
        cur_a, cur_b = ivs[0]
        for a, b in ivs[1:]:
            if a <= cur_b:
                cur_b = max(cur_b, b)
            else:
                out.append(Atom(q, cur_a, cur_b))
                cur_a, cur_b = a, b
        out.append(Atom(q, cur_a, cur_b))
    return frozenset(out)


def sorted_atoms(s):
    return sorted(s, key=lambda at: (_key(at.q), at.a, at.b))


def state_text(s):
    return "{" + ", ".join(str(at) for at in sorted_atoms(s)) + "}"


@dataclass(frozen=True)
class Label:
    """Observer transition label.

    ``kind`` is ``eps`` (blank of length ``hi``), ``obs`` (symbol string seen
    at an elapsed time in the interval), or ``phi`` / ``notphi`` (formula
    verdict at elapsed time ``hi``).
    """

    kind: str
    symbol: tuple = ()
    lo: Fraction = ZERO
    hi: Fraction = ZERO
    lo_closed: bool = True
    hi_closed: bool = True

    def contains(self, t):
        t = Fraction(t)
        if t < self.lo or t > self.hi:
            return False
        if t == self.lo and not self.lo_closed:
            return False
        if t == self.hi and not self.hi_closed:
            return False
        return True

    def __str__(self):
        if self.kind == "eps":
            return f"eps[{_fmt(self.hi)}]"
        if self.kind in ("phi", "notphi"):
            return ("phi" if self.kind == "phi" else "!phi") + f"[{_fmt(self.hi)}]"
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{'.'.join(self.symbol)}{left}{_fmt(self.lo)},{_fmt(self.hi)}{right}"

    def to_dict(self):
        return {"kind": self.kind, "symbol": list(self.symbol), "lo": str(self.lo),
                "hi": str(self.hi), "lo_closed": self.lo_closed, "hi_closed": self.hi_closed,
                "text": str(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["symbol"]), Fraction(d["lo"]), Fraction(d["hi"]),
                   d["lo_closed"], d["hi_closed"])


def eps_label(a):
    return Label("eps", (), Fraction(a), Fraction(a))


# ---------------------------------------------------------------------------
# single-step operators


def feasible_events(T, q):
    return [] if q == EOS else T.feasible(q)


def feasible_labels(T, q):
    """``(symbol, lo, hi)`` of the events leaving ``q`` (``None`` = unobservable)."""
    return {(e.symbol, e.lo, e.hi) for e in feasible_events(T, q)}


def eps0_extension(T, atoms, max_depth=None):
    """Close a set of atoms under zero-lower-bound unobservable events.

    For every atom ``q[a, 0]`` and unobservable event ``q -> q'`` with guard
    ``[0, b~]`` the latent atom ``q'[a - b~, 0]`` is added, transitively.
    """
    limit = max_depth if max_depth is not None else len(T.states) + 2
    out = set(atoms)
    frontier = [(at, 0) for at in atoms if at.b == 0]
    while frontier:
        at, depth = frontier.pop()
        for e in feasible_events(T, at.q):
            if e.observable or e.lo != 0:
                continue
            if depth + 1 > limit:
                raise CycleError(f"cycle of zero-time unobservable events through {state_name(at.q)}")
            new = Atom(e.target, at.a - e.hi, ZERO)
            if new not in out:
                out.add(new)
                frontier.append((new, depth + 1))
    return canonical(out)


def blank_candidates(T, s):
    vals = []
    for at in s:
        for e in feasible_events(T, at.q):
            if not e.observable and at.b < e.lo:
                vals.append(e.lo - at.b)
            elif e.observable and at.a < e.hi:
                vals.append(e.hi - at.a)
        ub = T.upper(at.q)
        if ub is not None:
            vals.append(ub - at.a)
    return vals


def blank_min(T, s):
    vals = blank_candidates(T, s)
    if not vals:
        raise HorizonEnd("no pending event or invariant bound: end of the horizon")
    a = min(vals)
    if a <= 0:
        raise ObserverError(f"nonpositive blank interval in {state_text(s)}")
    return a


def _latent_successors(T, s, a):
    # f'(s, eps[a]): unobservable events whose window opens exactly after a
    out = []
    for at in s:
        for e in feasible_events(T, at.q):
            if not e.observable and at.b < e.lo and e.lo == at.b + a:
                out.append(Atom(e.target, at.a + a - e.hi, ZERO))
    return out


def _shift(T, s, a):
    kept = []
    for at in s:
        lo = at.a + a
        ub = T.upper(at.q)
        if ub is None:
            kept.append(Atom(at.q, lo, at.b + a))
        elif lo < ub:
            kept.append(Atom(at.q, lo, min(at.b + a, ub)))
    return kept


def step_eps(T, s, a=None):
    """Successor after a blank interval of length ``a`` (default ``blank_min``)."""
    if a is None:
        a = blank_min(T, s)
    a = Fraction(a)
    out = list(_shift(T, s, a)) + list(eps0_extension(T, _latent_successors(T, s, a)))
    if not out:
        raise ObservationInconsistent(
            f"no state of {state_text(s)} survives a blank of length {_fmt(a)}")
    return canonical(out)


def _psi00_chains(T, q, limit):
    """Extended zero-time successors of ``q[0,0]``: ``(projected symbols, target)``."""
    out = []
    stack = [(q, (), 0)]
    while stack:
        cur, syms, depth = stack.pop()
        for e in feasible_events(T, cur):
            if e.lo != 0:
                continue
            if depth + 1 > limit:
                raise CycleError(f"cycle of zero-time events through {state_name(q)}")
            nsyms = syms + ((e.symbol,) if e.observable else ())
            if nsyms:
                out.append((nsyms, e.target))
            stack.append((e.target, nsyms, depth + 1))
    return out


def _windows(T, s, b):
    """Applicability windows ``(symbol, lo, lo_closed, hi, hi_closed, targets)``."""
    limit = len(T.states) + 2
    wins = []
    for at in s:
        for e in feasible_events(T, at.q):
            if not e.observable or not at.a < e.hi:
                continue
            lo = max(ZERO, e.lo - at.b)
            hi = e.hi - at.a  # >= b by construction of blank_min
            if lo > b or (lo == b and lo == 0):
                continue
            closed = lo > 0
            sym = (e.symbol,)
            wins.append((sym, lo, closed, b, True, {e.target}))
            for syms, tgt in _psi00_chains(T, e.target, limit):
                wins.append((sym + syms, lo, closed, b, True, {tgt}))
    for at in _latent_successors(T, s, b):
        for syms, tgt in _psi00_chains(T, at.q, limit):
            wins.append((syms, b, True, b, True, {tgt}))
    return wins


def _partition(wins):
    """Split overlapping windows of one symbol into disjoint labelled pieces."""
    points = sorted({w[1] for w in wins} | {w[3] for w in wins})
    pieces = []  # (lo, lo_closed, hi, hi_closed)
    for i, p in enumerate(points):
        pieces.append((p, True, p, True))
        if i + 1 < len(points):
            pieces.append((p, False, points[i + 1], False))

    def covers(w, piece):
        _, lo, lc, hi, hc, _ = w
        plo, plc, phi, phc = piece
        if plo == phi:  # point piece
            t = plo
            return (lo < t or (lo == t and lc)) and (t < hi or (t == hi and hc))
        return lo <= plo and phi <= hi

    labelled = []
    for piece in pieces:
        tg = set()
        for w in wins:
            if covers(w, piece):
                tg |= w[5]
        if tg:
            labelled.append([piece, frozenset(tg)])
    merged = []
    for piece, tg in labelled:
        if merged and merged[-1][1] == tg:
            prev = merged[-1][0]
            if prev[2] == piece[0] and prev[3] != piece[1]:
                merged[-1][0] = (prev[0], prev[1], piece[2], piece[3])
                continue
        merged.append([piece, tg])
    return merged


def observable_labels(T, s, b=None):
    """Deterministic observable labels of ``s`` with their target atom sets."""
    if b is None:
        b = blank_min(T, s)
    by_sym = {}
    for w in _windows(T, s, b):
        by_sym.setdefault(w[0], []).append(w)
    out = []
    for sym in sorted(by_sym):
        for (lo, lc, hi, hc), targets in _partition(by_sym[sym]):
            lab = Label("obs", sym, lo, hi, lc, hc)
            atoms = [Atom(t, ZERO, ZERO) for t in targets]
            out.append((lab, eps0_extension(T, atoms)))
    return out


def step_obs(T, s, symbol, elapsed):
    """Successor after observing ``symbol`` (a tuple) ``elapsed`` time units in."""
    for lab, target in observable_labels(T, s):
        if lab.symbol == tuple(symbol) and lab.contains(elapsed):
            return target
    raise ObservationInconsistent(
        f"symbol {'.'.join(symbol)} at elapsed {_fmt(elapsed)} is impossible in {state_text(s)}")


# ---------------------------------------------------------------------------
# observer automaton


@dataclass
class ObserverAutomaton:
    states: list  # index -> frozenset of atoms
    transitions: dict  # index -> list of (Label, target index)
    blank: dict  # index -> Fraction or None for terminal states
    initial: int = 0
    checkpoints: dict = field(default_factory=dict)  # index -> decision time
    formula: str | None = None

    def index(self, s):
        return self.states.index(s)

    def labels(self, sid):
        return [lab for lab, _ in self.transitions.get(sid, [])]

    def eps_transition(self, sid):
        for lab, tgt in self.transitions.get(sid, []):
            if lab.kind == "eps":
                return lab, tgt
        return None

    def verdict_transitions(self, sid):
        return {lab.kind: (lab, tgt) for lab, tgt in self.transitions.get(sid, [])
                if lab.kind in ("phi", "notphi")}

    def to_dict(self):
        return {
            "initial": self.initial,
            "formula": self.formula,
            "states": [
                {"id": i, "atoms": [
                    {"state": state_name(at.q), "lo": str(at.a), "hi": str(at.b)}
                    for at in sorted_atoms(s)],
                 "text": state_text(s),
                 "blank_min": None if self.blank.get(i) is None else str(self.blank[i]),
                 "checkpoint": None if i not in self.checkpoints else str(self.checkpoints[i])}
                for i, s in enumerate(self.states)
            ],
            "transitions": [
                {"source": i, "label": lab.to_dict(), "target": tgt}
                for i in range(len(self.states)) for lab, tgt in self.transitions.get(i, [])
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            states = [frozenset(Atom(parse_state(a["state"]), Fraction(a["lo"]), Fraction(a["hi"]))
                                for a in st["atoms"]) for st in d["states"]]
            blank = {st["id"]: None if st["blank_min"] is None else Fraction(st["blank_min"])
                     for st in d["states"]}
            checkpoints = {st["id"]: Fraction(st["checkpoint"]) for st in d["states"]
                           if st.get("checkpoint") is not None}
            transitions = {i: [] for i in range(len(states))}
            for tr in d["transitions"]:
                transitions[tr["source"]].append((Label.from_dict(tr["label"]), tr["target"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise ObserverError(f"malformed observer: {exc}") from exc
        return cls(states, transitions, blank, d.get("initial", 0), checkpoints, d.get("formula"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dot(self):
        lines = ["digraph O {", "  rankdir=LR;"]
        for i, s in enumerate(self.states):
            shape = "doublecircle" if i == self.initial else "box"
            lines.append(f'  s{i} [shape={shape}, label="s{i}\\n{state_text(s)}"];')
        for i in range(len(self.states)):
            for lab, tgt in self.transitions.get(i, []):
                lines.append(f'  s{i} -> s{tgt} [label="{lab}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _expand(T, s):
    """Outgoing ``(label, target)`` pairs of an observer state, and its blank."""
    try:
        b = blank_min(T, s)
    except HorizonEnd:
        return None, []
    out = []
    try:
        out.append((eps_label(b), step_eps(T, s, b)))
    except ObservationInconsistent:
        pass  # no transition: a blank that long contradicts the model
    out.extend(observable_labels(T, s, b))
    return b, out


def _close(T, obs, queue, max_states):
    lookup = {s: i for i, s in enumerate(obs.states)}
    while queue:
        sid = queue.popleft()
        b, edges = _expand(T, obs.states[sid])
        obs.blank[sid] = b
        trans = []
        for lab, tgt in edges:
            if tgt not in lookup:
                if len(obs.states) >= max_states:
                    raise ResourceError(f"observer exceeds {max_states} states")
                lookup[tgt] = len(obs.states)
                obs.states.append(tgt)
                queue.append(lookup[tgt])
            trans.append((lab, lookup[tgt]))
        obs.transitions[sid] = trans
    return obs


def build_observer(T, max_states=100_000):
    """Compile the basic observer by breadth-first closure."""
    s0 = eps0_extension(T, [Atom(q, ZERO, ZERO) for q in T.initial])
    obs = ObserverAutomaton([s0], {}, {})
    return _close(T, obs, deque([0]), max_states)


# ---------------------------------------------------------------------------
# runtime


@dataclass(frozen=True)
class Tube:
    k: int
    m: int
    lo: Fraction
    hi: Fraction
    q: object = None

    def to_dict(self):
        return {"state": state_name(self.q), "lo": float(self.lo), "hi": float(self.hi)}


def tubes_of(s, t=0):
    """One clock-time interval ``[t + a, t + b]`` per atom."""
    t = Fraction(t)
    out = []
    for at in sorted_atoms(s):
        k, m = (None, None) if at.q == EOS else at.q
        out.append(Tube(k, m, at.a + t, at.b + t, at.q))
    return out


def group_symbols(stream, resolution=None):
    """Merge stream entries sharing a timestamp into concatenated symbols."""
    out = []
    for t, sym in stream:
        t = Fraction(t).limit_denominator(10**9) if not isinstance(t, Fraction) else t
        if resolution is not None:
            t = round(t / resolution) * resolution
        sym = tuple(sym) if isinstance(sym, (list, tuple)) else (sym,)
        if out and out[-1][0] == t:
            out[-1] = (t, out[-1][1] + sym)
        else:
            if out and t < out[-1][0]:
                raise ObserverError("symbol stream times must be nondecreasing")
            out.append((t, sym))
    return out


@dataclass(frozen=True)
class RunRecord:
    time: Fraction
    state_id: int
    label: str | None
    tubes: tuple

    def to_dict(self):
        return {"time": float(self.time), "external_time": 0.0, "state_id": self.state_id,
                "label": self.label, "tubes": [tb.to_dict() for tb in self.tubes]}


def run_observer(obs, stream, until=None, verdict=None, resolution=None):
    """Drive the observer with a timed symbol stream.

    ``stream`` holds ``(absolute time, symbol)`` pairs. Blank transitions fire
    when their interval elapses with no symbol; a symbol exactly at the end of
    a blank interval takes precedence. ``verdict(state_id, time)`` answers
    formula checkpoints of a refined observer. Runs stop at ``until`` (default:
    the last symbol) or in a terminal state.
    """
    events = group_symbols(stream, resolution)
    horizon = Fraction(until).limit_denominator(10**9) if until is not None else (
        events[-1][0] if events else ZERO)
    sid = obs.initial
    t0 = ZERO
    records = [RunRecord(ZERO, sid, None, tuple(tubes_of(obs.states[sid])))]
    i = 0
    while True:
        nxt = events[i] if i < len(events) else None
        verdicts = obs.verdict_transitions(sid)
        if verdicts:
            d = next(iter(verdicts.values()))[0].hi
        else:
            d = obs.blank.get(sid)
        if nxt is not None and (d is None or nxt[0] - t0 <= d):
            elapsed = nxt[0] - t0
            target = None
            for lab, tgt in obs.transitions.get(sid, []):
                if lab.kind == "obs" and lab.symbol == nxt[1] and lab.contains(elapsed):
                    target, used = tgt, lab
                    break
            if target is None:
                raise ObservationInconsistent(
                    f"symbol {'.'.join(nxt[1])} at t={float(nxt[0]):g} is inconsistent with "
                    f"observer state s{sid} = {state_text(obs.states[sid])}")
            sid, t0 = target, nxt[0]
            records.append(RunRecord(t0, sid, str(used), tuple(tubes_of(obs.states[sid]))))
            i += 1
            continue
        if d is None:
            break  # terminal
        if t0 + d > horizon:
            break
        if verdicts:
            if verdict is None:
                raise ObserverError("refined observer needs a verdict callback")
            kind = "phi" if verdict(sid, t0 + d) else "notphi"
            if kind not in verdicts:
                raise ObservationInconsistent(f"formula verdict {kind} unexpected in s{sid}")
            lab, tgt = verdicts[kind]
        else:
            tr = obs.eps_transition(sid)
            if tr is None:
                raise ObservationInconsistent(
                    f"no symbol within {float(d):g} time units is inconsistent with "
                    f"observer state s{sid} = {state_text(obs.states[sid])}")
            lab, tgt = tr
        t0 += d
        sid = tgt
        records.append(RunRecord(t0, sid, str(lab), tuple(tubes_of(obs.states[sid]))))
    return records


# ---------------------------------------------------------------------------
# refinement


def refine_observer(T, obs, checkpoint, d, classify, margins_ok=True, formula=None,
                    max_states=100_000):
    """Split a checkpoint state on the verdict of a classifying formula.

    ``classify(atom)`` returns ``+1`` (formula holds), ``-1`` (fails) or
    ``None`` (not classified; kept on both branches). At elapsed time ``d``
    the checkpoint moves to the shifted atoms of the matching class. Observable
    labels of the checkpoint are truncated to ``(0, d]``.
    """
    if not margins_ok:
        raise RefinementError("formula does not classify the checkpoint tubes with positive margins")
    d = Fraction(d)
    s = obs.states[checkpoint]
    b = obs.blank.get(checkpoint)
    if b is None or not (0 < d < b):
        raise RefinementError(f"decision time {_fmt(d)} must lie strictly inside (0, {b})")
    new = ObserverAutomaton(list(obs.states), {i: list(v) for i, v in obs.transitions.items()},
                            dict(obs.blank), obs.initial, dict(obs.checkpoints), formula)
    shifted = _shift(T, s, d)
    branches = {}
    for kind, sign in (("phi", 1), ("notphi", -1)):
        keep = [at for at in shifted if classify(at) in (sign, None)]
        if keep:
            branches[kind] = canonical(keep)
    lookup = {st: i for i, st in enumerate(new.states)}
    queue = deque()
    trans = []
    for lab, tgt in obs.transitions.get(checkpoint, []):
        if lab.kind != "obs":
            continue
        if lab.lo > d or (lab.lo == d and not lab.lo_closed):
            continue
        hi_closed = lab.hi_closed if lab.hi <= d else True
        trans.append((Label("obs", lab.symbol, lab.lo, min(lab.hi, d), lab.lo_closed, hi_closed),
                      tgt))
    for kind, atoms in branches.items():
        if atoms not in lookup:
            lookup[atoms] = len(new.states)
            new.states.append(atoms)
            queue.append(lookup[atoms])
        trans.append((Label(kind, (), d, d), lookup[atoms]))
    new.transitions[checkpoint] = trans
    new.checkpoints[checkpoint] = d
    return _close(T, new, queue, max_states)
