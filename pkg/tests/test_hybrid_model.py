import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hytl.errors import DeadlockError, ModelError, SchedulingError
from hytl.hybrid_model import (Event, Guard, Halfspace, HybridAutomaton, Location, flow,
                               project_outputs, simulate)
from hytl.smart_building import (SmartBuildingParams, build_smart_building, dynamics,
                                 empty_room_state)

import oracles
from strategies import random_stable


def decay(invariant=()):
    return Location("l", np.array([[-1.0]]), np.array([0.0]), invariant)


def decay_with_guard(level=0.5, symbol=None):
    locs = {"l": decay(), "m": Location("m", np.zeros((1, 1)), np.zeros(1))}
    ev = Event("half", "l", "m", Guard(eq=(Halfspace((1.0,), level),)), np.eye(1), np.zeros(1),
               symbol)
    return HybridAutomaton(locs, (ev,))


# ---------------------------------------------------------------------------
# flow


def test_zero_dynamics():
    loc = Location("z", np.zeros((2, 2)), np.zeros(2))
    np.testing.assert_array_equal(flow(loc, [1.0, 2.0], 5.0), [1.0, 2.0])


def test_exponential_decay():
    assert flow(decay(), [1.0], math.log(2))[0] == pytest.approx(0.5, abs=1e-9)


def test_converges_to_equilibrium():
    loc = Location("e", np.array([[-1.0]]), np.array([1.0]))
    assert flow(loc, [0.0], 50.0)[0] == pytest.approx(1.0, abs=1e-6)


def test_flow_matches_rk4():
    rng = np.random.default_rng(1)
    A = random_stable(rng, 3)
    b = rng.normal(size=3)
    x0 = rng.normal(size=3)
    loc = Location("r", A, b)
    np.testing.assert_allclose(flow(loc, x0, 2.0), oracles.affine_flow_rk4(A, b, x0, 2.0),
                               rtol=1e-8, atol=1e-10)


@given(st.integers(0, 2**31), st.floats(0, 3), st.floats(0, 3))
@settings(max_examples=100, deadline=None)
def test_semigroup(seed, s, t):
    rng = np.random.default_rng(seed)
    loc = Location("r", random_stable(rng, 3), rng.normal(size=3))
    x0 = rng.normal(size=3)
    one = flow(loc, x0, s + t)
    two = flow(loc, flow(loc, x0, s), t)
    assert np.linalg.norm(one - two) <= 1e-8 * max(1.0, np.linalg.norm(one))


# ---------------------------------------------------------------------------
# simulation


def test_single_location_horizon():
    H = HybridAutomaton({"l": decay()}, ())
    tr = simulate(H, ("l", [1.0]), horizon=3.0)
    assert len(tr.segments) == 1
    assert tr.dwell_times == [3.0]


def test_analytic_crossing():
    tr = simulate(decay_with_guard(), ("l", [1.0]), horizon=5.0)
    assert tr.event_ids == [None, "half"]
    assert tr.dwell_times[0] == pytest.approx(math.log(2), abs=1e-6)
    assert tr.segments[1].x0[0] == pytest.approx(0.5, abs=1e-6)


def test_deadlock():
    H = HybridAutomaton({"l": decay((Halfspace((-1.0,), -0.5),))}, ())
    with pytest.raises(DeadlockError):
        simulate(H, ("l", [1.0]), horizon=5.0)


def test_scheduling_errors():
    locs = {"l": decay(), "m": decay()}
    door = Event("door", "l", "m", Guard(le=(Halfspace((1.0,), 0.8),)), np.eye(1), np.zeros(1),
                 "psi", "nondeterministic")
    H = HybridAutomaton(locs, (door,))
    with pytest.raises(SchedulingError):
        simulate(H, ("l", [1.0]), [(0.1, "door")], horizon=5.0)  # x = 0.9 > 0.8
    with pytest.raises(SchedulingError):
        simulate(H, ("l", [1.0]), [(1.0, "door"), (1.0, "door")], horizon=5.0)
    tr = simulate(H, ("l", [1.0]), [(1.0, "door")], horizon=5.0)
    assert [(s.time, s.symbol) for s in project_outputs(tr, H)] == [(1.0, "psi")]


def test_unknown_location_rejected():
    with pytest.raises(ModelError):
        HybridAutomaton({"l": decay()}, (Event("e", "l", "x", Guard(), np.eye(1), np.zeros(1)),))


def test_outputs_ordering_and_hidden_events():
    tr = simulate(decay_with_guard(), ("l", [1.0]), horizon=5.0)
    assert project_outputs(tr, decay_with_guard()) == []
    locs = {"a": decay(), "b": decay(), "c": decay()}
    evs = (
        Event("e1", "a", "b", Guard(), np.eye(1), np.zeros(1), "p", "nondeterministic"),
        Event("e2", "b", "c", Guard(), np.eye(1), np.zeros(1), "q", "nondeterministic"),
    )
    H = HybridAutomaton(locs, evs)
    tr = simulate(H, ("a", [1.0]), [(1.0, "e1"), (4.0, "e2")], horizon=6.0)
    assert [(s.time, s.symbol) for s in project_outputs(tr, H)] == [(1.0, "p"), (4.0, "q")]


def test_replay_and_guard_consistency():
    H = build_smart_building()
    x0 = empty_room_state()
    tr = simulate(H, ("l0", x0), [(10.0, "e1_2")], horizon=200.0)
    for seg, nxt in zip(tr.segments, tr.segments[1:]):
        loc = H.locations[seg.location]
        end = flow(loc, seg.x0, seg.dwell)
        assert np.linalg.norm(end - seg.end_state) <= 1e-7 * np.linalg.norm(end)
        ev = H.event(nxt.event)
        assert ev.guard.holds(seg.end_state, tol=1e-6)
        np.testing.assert_allclose(ev.reset(seg.end_state), nxt.x0)


# ---------------------------------------------------------------------------
# smart building


def test_smart_building_shape():
    H = build_smart_building()
    assert len(H.locations) == 6
    assert len(H.events) == 5
    assert {e.id for e in H.events} == {"e1_1", "e1_2", "e2_1", "e2_2", "e3_2"}
    door = [e for e in H.events if e.observable]
    assert {e.id for e in door} == {"e1_1", "e1_2"}
    assert all(e.kind == "nondeterministic" for e in door)
    assert H.check_guards() == []


def test_empty_room_decoupled():
    A, _ = dynamics(SmartBuildingParams(), 0.5, occupied=False)
    assert np.all(A[:, 2:] == 0) and np.all(A[2:, :] == 0)


def test_empty_room_equilibrium_below_threshold():
    x = empty_room_state()
    assert x[1] < 290.6
    H = build_smart_building()
    tr = simulate(H, ("l0", x), horizon=100.0)
    assert tr.event_ids == [None]


def test_door_trajectory_shapes():
    H = build_smart_building()
    x0 = empty_room_state()
    one = simulate(H, ("l0", x0), [(10.0, "e1_1")], horizon=300.0)
    two = simulate(H, ("l0", x0), [(10.0, "e1_2")], horizon=300.0)
    assert one.event_ids == [None, "e1_1", "e2_1"]
    assert two.event_ids == [None, "e1_2", "e2_2", "e3_2"]
    assert one.dwell_times[0] == 10.0
    # dwell times within half of 37.6 / 16.1 / 36.6 s
    for got, ref in ((one.dwell_times[1], 37.6), (two.dwell_times[1], 16.1),
                     (two.dwell_times[2], 36.6)):
        assert 0.5 * ref <= got <= 1.5 * ref


# ---------------------------------------------------------------------------
# serialization


def test_json_round_trip(tmp_path):
    H = build_smart_building()
    path = tmp_path / "h.json"
    path.write_text(json.dumps(H.to_dict()))
    H2 = HybridAutomaton.load(path)
    assert H2.to_dict() == H.to_dict()


def test_malformed_document():
    with pytest.raises(ModelError):
        HybridAutomaton.from_dict({"locations": [{"id": "l"}]})


def test_csv_export(tmp_path):
    tr = simulate(decay_with_guard(), ("l", [1.0]), horizon=2.0)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["segment", "clock_time", "x1"]
    assert rows[1][:2] == ["0", "0.0"] and float(rows[1][2]) == 1.0
    assert {r[0] for r in rows[1:]} == {"0", "1"}
