from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from hytl.abstraction import EOS, SegmentTiming, TimedAutomaton, TimedEvent, build_abstraction
from hytl.errors import (CycleError, HorizonEnd, ObservationInconsistent, ObserverError,
                         RefinementError, ResourceError)
from hytl.observer import (Atom, Label, ObserverAutomaton, blank_min, build_observer,
                           canonical, eps0_extension, feasible_events, feasible_labels,
                           observable_labels, refine_observer, run_observer, state_text,
                           step_eps, step_obs, tubes_of)

from fig2 import fig2

F = Fraction


def S(*atoms):
    return canonical(Atom(q, F(a), F(b)) for q, a, b in atoms)


def ta(events, inv):
    evs = [TimedEvent(s, t, F(lo), F(hi), sym, 1) for s, t, lo, hi, sym in events]
    states = sorted(inv)
    return TimedAutomaton(states, [states[0]], evs, {q: F(u) for q, u in inv.items()})


S0 = S(((1, 0), 0, 0))
S1 = S(((1, 0), 17, 17), ((1, 1), -12, 0), ((2, 0), -19, 0), ((3, 0), -19, 0))
S2 = S(((1, 1), 0, 7), ((2, 0), -7, 12), ((3, 0), -7, 12))
S3 = S(((1, 2), 0, 0))

GOLDEN = [
    ("{(1,0)[0,0]}", "17", ["eps[17]"]),
    ("{(1,0)[17,17], (1,1)[-12,0], (2,0)[-19,0], (3,0)[-19,0]}", "12",
     ["eps[12]", "alpha[5,12]"]),
    ("{(1,1)[0,7], (2,0)[-7,12], (3,0)[-7,12]}", "7", ["eps[7]", "alpha(0,7]"]),
    ("{(1,2)[0,0]}", "20", ["eps[20]"]),
    ("{(2,0)[0,19], (3,0)[0,19]}", "17", ["eps[17]"]),
    ("{(2,0)[17,36], (3,0)[17,36], EoS[-19,0]}", "19", ["eps[19]"]),
    ("{EoS[0,19]}", None, []),
]


# ---------------------------------------------------------------------------
# single-step operators on the toy abstraction


def test_feasible_events():
    T = fig2()
    assert feasible_labels(T, (1, 1)) == {("alpha", 5, 7), (None, 0, 7)}
    assert len(feasible_events(T, (1, 1))) == 3
    assert feasible_labels(T, (1, 0)) == {(None, 17, 29)}
    assert feasible_events(T, EOS) == []


def test_eps0_extension_faults():
    got = eps0_extension(fig2(), [Atom((1, 1), F(-12), F(0))])
    assert got == S(((1, 1), -12, 0), ((2, 0), -19, 0), ((3, 0), -19, 0))


def test_eps0_extension_unchanged():
    s = S(((1, 0), 17, 17), ((1, 2), 0, 3))
    assert eps0_extension(fig2(), s) == s


def test_eps0_extension_chained():
    T = ta([("a", "b", 0, 2, None), ("b", "c", 0, 3, None)], {"a": 9, "b": 9, "c": 9})
    got = eps0_extension(T, [Atom("a", F(-1), F(0))])
    assert got == S(("a", -1, 0), ("b", -3, 0), ("c", -6, 0))


def test_eps0_cycle():
    a, b = (1, 0), (2, 0)
    T = ta([(a, b, 0, 0, None), (b, a, 0, 1, None)], {a: 9, b: 9})
    with pytest.raises(CycleError):
        eps0_extension(T, [Atom(a, F(0), F(0))])


def test_blank_min():
    T = fig2()
    assert blank_min(T, S0) == 17
    assert blank_min(T, S1) == 12
    lone = ta([], {"q": 5})
    assert blank_min(lone, S(("q", 0, 0))) == 5


def test_blank_min_horizon_end():
    with pytest.raises(HorizonEnd):
        blank_min(fig2(), S((EOS, 0, 0)))


def test_step_eps():
    T = fig2()
    assert step_eps(T, S0, 17) == S1
    assert step_eps(T, S1, 12) == S2
    assert step_eps(T, S1) == S2


def test_step_eps_drops_expired():
    T = fig2()
    assert step_eps(T, S(((1, 2), 0, 0), ((1, 1), 5, 7)), 3) == S(((1, 2), 3, 3))


def test_step_eps_inconsistent():
    with pytest.raises(ObservationInconsistent):
        step_eps(fig2(), S(((1, 1), 5, 7)), 3)


def test_step_obs():
    T = fig2()
    assert step_obs(T, S1, ("alpha",), 5) == S3
    assert step_obs(T, S1, ("alpha",), 12) == S3
    assert step_obs(T, S2, ("alpha",), 6) == S3
    with pytest.raises(ObservationInconsistent):
        step_obs(T, S1, ("alpha",), 4)
    with pytest.raises(ObservationInconsistent):
        step_obs(T, S0, ("alpha",), 5)


def test_open_window_at_zero():
    labs = {str(lab) for lab, _ in observable_labels(fig2(), S2)}
    assert labs == {"alpha(0,7]"}


# ---------------------------------------------------------------------------
# observer construction


def test_golden_observer():
    obs = build_observer(fig2())
    got = []
    for i, s in enumerate(obs.states):
        b = obs.blank[i]
        got.append((state_text(s), None if b is None else str(b), [str(x) for x in obs.labels(i)]))
    assert got == GOLDEN
    assert obs.transitions[1][1] == (Label("obs", ("alpha",), F(5), F(12)), 3)
    assert all(isinstance(at.a, Fraction) for s in obs.states for at in s)


def test_self_loop_abstraction():
    tm = {1: SegmentTiming(taus=(5,), leads=(), lags=(), symbols=())}
    obs = build_observer(build_abstraction(tm, {1: [1]}))
    # the atom at the invariant bound expires and its reset successor is the start state
    assert len(obs.states) == 1
    assert [(str(lab), tgt) for lab, tgt in obs.transitions[0]] == [("eps[5]", 0)]


def test_state_cap():
    with pytest.raises(ResourceError):
        build_observer(fig2(), max_states=3)


def test_determinism():
    obs = build_observer(fig2())
    for i in range(len(obs.states)):
        obs_labels = [lab for lab in obs.labels(i) if lab.kind == "obs"]
        for x in obs_labels:
            for y in obs_labels:
                if x is y or x.symbol != y.symbol:
                    continue
                probes = {x.lo, x.hi, y.lo, y.hi, (x.lo + x.hi) / 2, (y.lo + y.hi) / 2}
                assert not any(x.contains(t) and y.contains(t) for t in probes)


def test_round_trip(tmp_path):
    obs = build_observer(fig2())
    obs.save(tmp_path / "o.json")
    back = ObserverAutomaton.load(tmp_path / "o.json")
    assert back.states == obs.states
    assert back.transitions == obs.transitions
    assert back.blank == obs.blank


def test_malformed_observer():
    with pytest.raises(ObserverError):
        ObserverAutomaton.from_dict({"states": [{"atoms": [{"state": "(1,0)"}]}]})


def test_dot():
    dot = build_observer(fig2()).to_dot()
    assert "s1 -> s3 [label=\"alpha[5,12]\"]" in dot


# ---------------------------------------------------------------------------
# runtime


def visited(records):
    return [r.state_id for r in records]


def test_run_nominal_stream():
    recs = run_observer(build_observer(fig2()), [(29, "alpha")])
    assert visited(recs) == [0, 1, 3]
    assert [r.time for r in recs] == [0, 17, 29]


def test_run_empty_stream():
    recs = run_observer(build_observer(fig2()), [], until=100)
    assert all(r.label is None or r.label.startswith("eps") for r in recs)
    assert visited(recs) == [0, 1, 2, 4, 5, 6]


def test_run_inconsistent_symbol():
    with pytest.raises(ObservationInconsistent):
        run_observer(build_observer(fig2()), [(20, "alpha")])
    with pytest.raises(ObservationInconsistent):
        run_observer(build_observer(fig2()), [(29, "beta")])


@given(st.lists(st.integers(0, 400), max_size=6, unique=True))
@settings(max_examples=100, deadline=None)
def test_timer_contract(ticks):
    obs = build_observer(fig2())
    stream = [(F(t, 10), "alpha") for t in sorted(ticks)]
    try:
        recs = run_observer(obs, stream, until=200)
    except ObservationInconsistent:
        return
    for prev, cur in zip(recs, recs[1:]):
        b = obs.blank[prev.state_id]
        assert b is not None and cur.time - prev.time <= b


def test_tubes_of():
    (tube,) = tubes_of(S3, 0)
    assert (tube.k, tube.m, tube.lo, tube.hi) == (1, 2, 0, 0)
    (tube,) = tubes_of(S(((2, 0), -7, 0)), 3)
    assert (tube.lo, tube.hi) == (-4, 3)


# ---------------------------------------------------------------------------
# refinement


def test_refine_true_formula():
    obs = build_observer(fig2())
    ref = refine_observer(fig2(), obs, 1, 5, lambda at: 1, formula="true")
    verdicts = ref.verdict_transitions(1)
    assert set(verdicts) == {"phi"}
    _, tgt = verdicts["phi"]
    assert ref.states[tgt] == S(((1, 0), 22, 22), ((1, 1), -7, 5), ((2, 0), -14, 5),
                                ((3, 0), -14, 5))
    assert [str(lab) for lab in ref.labels(1)] == ["alpha[5,5]", "phi[5]"]


def test_refine_prunes_faults():
    T = fig2()
    obs = build_observer(T)
    ref = refine_observer(T, obs, 1, 5, lambda at: 1 if at.q[0] == 1 else -1)
    v = ref.verdict_transitions(1)
    assert {at.q for at in ref.states[v["phi"][1]]} == {(1, 0), (1, 1)}
    assert {at.q for at in ref.states[v["notphi"][1]]} == {(2, 0), (3, 0)}
    healthy = run_observer(ref, [(29, "alpha")], verdict=lambda sid, t: True)
    faulty = run_observer(ref, [], until=40, verdict=lambda sid, t: False)
    assert healthy[2].label == "phi[5]" and faulty[2].label == "!phi[5]"
    assert all(at.q[0] == 1 for at in ref.states[healthy[2].state_id])
    assert healthy[-1].label == "alpha(0,7]"
    # a silent healthy hypothesis is contradicted once alpha is overdue
    with pytest.raises(ObservationInconsistent):
        run_observer(ref, [], until=40, verdict=lambda sid, t: True)


def test_refine_rejections():
    T = fig2()
    obs = build_observer(T)
    with pytest.raises(RefinementError):
        refine_observer(T, obs, 1, 5, lambda at: 1, margins_ok=False)
    with pytest.raises(RefinementError):
        refine_observer(T, obs, 1, 12, lambda at: 1)
    ref = refine_observer(T, obs, 1, 5, lambda at: 1)
    with pytest.raises(ObserverError):
        run_observer(ref, [], until=40)
