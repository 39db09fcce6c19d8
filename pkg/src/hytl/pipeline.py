"""End-to-end stages: simulate, bisim, abstract, observe, infer, refine.

Every stage reads its inputs from the files written by the previous stages
in the output directory, so any stage can be rerun on its own.
"""
from __future__ import annotations

import json
import logging
import math
import time
from datetime import datetime, timezone
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .abstraction import EOS, SegmentTiming, TimedAutomaton, build_abstraction, \
    check_output_preservation, parse_state, state_name
from .bisim import (check_cover, competing_surfaces, exit_map, gamma_for_segment, gamma_hat,
                    gamma_tilde, image_radius, lead_lag, optimize_M, phi, points_covered,
                    sample_ellipsoid_boundary, verify_bisim)
from .errors import ConfigError, InconsistencyError, InferenceError, ModelError
from .hybrid_model import HybridAutomaton, flow, simulate
from .inference import SearchConfig, TubeData, pso_search, verify_classification
from .mtl import horizon as formula_horizon
from .mtl import parse, robustness
from .mtl.semantics import Signal
from .observer import ObserverAutomaton, build_observer, refine_observer, run_observer
from .smart_building import SmartBuildingParams, build_smart_building

log = logging.getLogger(__name__)

STAGES = ("simulate", "bisim", "abstract", "observe", "infer", "refine")
MEMBERSHIP_TOL = 1e-6


# ---------------------------------------------------------------------------
# configuration


def load_config(ref):
    """Load a scenario by path or by bundled name (``smart_building``, ``fig2_toy``)."""
    path = Path(ref)
    if not path.exists():
        bundled = resources.files("hytl") / "scenarios" / f"{ref}.json"
        if not bundled.is_file():
            raise ConfigError(f"no scenario file or bundled scenario named {ref!r}")
        cfg = json.loads(bundled.read_text())
        cfg.setdefault("_base", None)
        return cfg
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg["_base"] = str(path.parent)
    return cfg


def build_model(cfg):
    spec = cfg.get("model")
    if spec is None:
        raise ConfigError("scenario has no hybrid model")
    kind = spec.get("type")
    if kind == "smart_building":
        try:
            params = SmartBuildingParams.from_dict(spec.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad smart-building parameters: {exc}") from exc
        return build_smart_building(params)
    if kind == "automaton":
        if "file" in spec:
            path = Path(cfg.get("_base") or ".") / spec["file"]
            if not path.is_file():
                raise ConfigError(f"automaton file {path} not found")
            return HybridAutomaton.load(path)
        return HybridAutomaton.from_dict(spec["automaton"])
    raise ConfigError(f"unknown model type {kind!r}")


def _trajectory_specs(cfg):
    specs = cfg.get("trajectories")
    if not specs:
        raise ConfigError("scenario lists no trajectories")
    return {int(s["k"]): s for s in specs}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2))


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing stage input {path.name}; run the earlier stages first")
    return json.loads(path.read_text())


def _initial_state(H, spec):
    if "state" in spec:
        return np.asarray(spec["state"], float)
    for lid, lo, hi in H.initial:
        if lid == spec["location"]:
            return 0.5 * (np.asarray(lo) + np.asarray(hi))
    raise ConfigError(f"no initial set for location {spec['location']}")


# ---------------------------------------------------------------------------
# stage: simulate


def stage_simulate(cfg, out, grid_step=None):
    out = Path(out)
    H = build_model(cfg)
    bad = H.check_guards()
    if bad:
        raise ModelError(f"guards outside their source invariants: {', '.join(bad)}")
    step = grid_step or cfg.get("grid_step", 0.05)
    horizon = cfg.get("horizon", 100.0)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    _write_json(out / "automaton.json", H.to_dict())
    summary = {"grid_step": step, "horizon": horizon, "trajectories": {}}
    for k, spec in sorted(_trajectory_specs(cfg).items()):
        x0 = _initial_state(H, spec)
        tr = simulate(H, (spec["location"], x0), spec.get("schedule", []), horizon, step)
        tr.write_csv(out / "trajectories" / f"traj_{k}.csv")
        events = tr.event_log(H)
        _write_json(out / "trajectories" / f"traj_{k}.events.json", events)
        summary["trajectories"][str(k)] = {"ended_by": tr.ended_by, "segments": events}
        log.info("trajectory %d: %d segments, dwell times %s", k, len(events),
                 [round(e["dwell"], 3) for e in events])
    _write_json(out / "simulation.json", summary)
    return summary


# ---------------------------------------------------------------------------
# stage: bisim


def _box(seg_x0, box):
    x0 = np.asarray(seg_x0, float)
    return x0 + np.asarray(box["offset_lo"], float), x0 + np.asarray(box["offset_hi"], float)


def _exit_images(H, seg, nxt, M, gamma, jitter, rng, samples):
    # reset images of the ball after a scheduled (nondeterministic) exit
    loc = H.locations[seg["location"]]
    ev = H.event(nxt["event"])
    pts = np.asarray(seg["x0"]) + sample_ellipsoid_boundary(M, 0.999 * gamma, samples, rng)
    taus = seg["dwell"] + jitter * (2 * rng.random(samples) - 1)
    return np.array([ev.reset(flow(loc, x, max(t, 0.0))) for x, t in zip(pts, taus)])


def _corners(lo, hi):
    axes = [(a,) if a == b else (a, b) for a, b in zip(lo, hi)]
    return np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(lo), -1).T


def stage_bisim(cfg, out, seed=0):
    """Metrics per location, then radii, lead/lag bounds and cover checks per segment.

    Radii are chosen forward and as small as the entry set allows: the entry
    box (or the initial set) for the first segment, the sampled images of the
    previous ball otherwise, inflated by ``1 / cover_margin``. A radius that
    would reach a competing surface is an error.
    """
    out = Path(out)
    H = HybridAutomaton.from_dict(_read_json(out / "automaton.json"))
    sim = _read_json(out / "simulation.json")
    bc = cfg.get("bisim", {})
    j = int(bc.get("protected", 0))
    floor = bc.get("floor")
    ceilings = {int(i): float(v) for i, v in bc.get("ceilings", {}).items()}
    gamma_max = float(bc.get("gamma_max", 1.0))
    margin = float(bc.get("cover_margin", 0.95))
    samples = int(bc.get("lead_lag_samples", 200))
    jitter = float(cfg.get("schedule_jitter", 0.0))
    step = sim["grid_step"]
    specs = _trajectory_specs(cfg)

    used = sorted({s["location"] for t in sim["trajectories"].values() for s in t["segments"]})
    metrics = {}
    solved = {}  # locations often share dynamics
    for lid in used:
        A = H.locations[lid].A
        key = A.tobytes()
        if key not in solved:
            res = optimize_M(A, j, floor, ceilings, starts=int(bc.get("starts", 3)), seed=seed)
            if not res.feasible:
                raise InconsistencyError(f"no certified metric for {lid}: {res.certificate}")
            rep = verify_bisim(res.M, A, samples=int(bc.get("verify_samples", 100)), seed=seed)
            solved[key] = (res, rep)
        res, rep = solved[key]
        metrics[lid] = {"M": res.M.tolist(), "z": res.z, "certificate": res.certificate,
                        "verification": {"passed": rep.passed, "lmi_max_eig": rep.lmi_max_eig,
                                         "worst_increase": rep.worst_increase}}
        log.info("metric for %s: z=%.4g", lid, res.z)
    Ms = {lid: np.asarray(m["M"]) for lid, m in metrics.items()}

    rng = np.random.default_rng(seed)
    robust = {"protected": j, "locations": metrics, "trajectories": {}}
    for ks, traj in sim["trajectories"].items():
        k = int(ks)
        segs = traj["segments"]
        spec = specs[k]
        box = spec.get("entry_box")
        box_at = int(box["segment"]) if box else None
        N = len(segs) - 1
        info, entry, chain_ok = [], [], []
        ends = None
        for m, seg in enumerate(segs):
            lid = seg["location"]
            loc = H.locations[lid]
            M = Ms[lid]
            x0 = np.asarray(seg["x0"])
            exit_ev = H.event(segs[m + 1]["event"]) if m < N else None
            surfaces = competing_surfaces(H, lid, exit_ev)
            tau_bar = 2 * seg["dwell"] if exit_ev is not None else seg["dwell"]
            limit = gamma_for_segment(loc, x0, surfaces, M, max(tau_bar, step), gamma_max, step)
            if m == box_at:
                lo, hi = _box(x0, box)
                need = max(phi(M, c, x0) for c in _corners(lo, hi))
            elif m == 0:
                box0 = [(lo, hi) for l0, lo, hi in H.initial if l0 == lid]
                need = max(phi(M, c, x0) for lo, hi in box0 for c in _corners(lo, hi)) if box0 else 0.0
            else:
                need = carry
            g = need / margin if need > 0 else limit
            if g > limit:
                raise InconsistencyError(
                    f"trajectory {k} segment {m}: covering radius {g:.4g} exceeds the safe "
                    f"radius {limit:.4g} in {lid}")
            rec = {
                "m": m, "location": lid, "event": seg["event"], "x0": seg["x0"],
                "dwell": seg["dwell"], "start_time": seg["time"],
                "exit_event": exit_ev.id if exit_ev else None,
                "exit_symbol": exit_ev.symbol if exit_ev else None,
                "gamma": g, "gamma_limit": limit, "entry_need": need,
                "gamma_hat": gamma_hat(g, M), "gamma_tilde": gamma_tilde(g, M).tolist(),
                "tau_lead": 0.0, "tau_lag": 0.0,
            }
            if exit_ev is not None:
                nxt = segs[m + 1]
                Mn, cn = Ms[nxt["location"]], np.asarray(nxt["x0"])
                if exit_ev.kind == "nondeterministic":
                    rec["tau_lead"] = rec["tau_lag"] = jitter
                    ends = _exit_images(H, seg, nxt, M, g, jitter, rng, samples)

                    def emap(x, loc=loc, ev=exit_ev, tau=seg["dwell"]):
                        return ev.reset(flow(loc, x, tau))
                    shift = max(phi(Mn, emap(x0) + exit_ev.R @ (flow(loc, x0, seg["dwell"] + s)
                                                                - flow(loc, x0, seg["dwell"])), cn)
                                for s in (-jitter, jitter))
                else:
                    rec["tau_lead"], rec["tau_lag"], raw = lead_lag(
                        loc, x0, seg["dwell"], exit_ev, surfaces, M, g, samples, seed + m,
                        tau_bar=3 * seg["dwell"] + 1, step=step, return_states=True)
                    ends = np.array([exit_ev.reset(e) for e in raw])
                    emap = exit_map(loc, exit_ev, 3 * seg["dwell"] + 1, step)
                    shift = 0.0
                lin = image_radius(emap, x0, M, g, Mn, cn) + shift
                carry = max(lin, max(phi(Mn, e, cn) for e in ends))
                rec["image_radius"] = carry
            info.append(rec)
        # independent re-check of every cover obligation with fresh samples
        for m, rec in enumerate(info):
            ball = [(Ms[rec["location"]], rec["gamma"], np.asarray(rec["x0"]))]
            if m == box_at:
                lo, hi = _box(rec["x0"], box)
                ok, wit = check_cover(lo, hi, ball)
                entry.append({"segment": m, "lo": lo.tolist(), "hi": hi.tolist(), "covered": ok,
                              "witness": None if wit is None else wit.tolist()})
            elif m == 0:
                for l0, lo, hi in H.initial:
                    if l0 == rec["location"]:
                        ok, wit = check_cover(lo, hi, ball)
                        entry.append({"segment": 0, "lo": list(map(float, lo)),
                                      "hi": list(map(float, hi)), "covered": ok,
                                      "witness": None if wit is None else wit.tolist()})
            if m < N and m + 1 != box_at:
                prev = segs[m]
                exit_ev = H.event(segs[m + 1]["event"])
                M = Ms[rec["location"]]
                if exit_ev.kind == "nondeterministic":
                    imgs = _exit_images(H, prev, segs[m + 1], M, rec["gamma"], jitter, rng,
                                        samples)
                else:
                    surfaces = competing_surfaces(H, rec["location"], exit_ev)
                    _, _, imgs = lead_lag(H.locations[rec["location"]], np.asarray(rec["x0"]),
                                          rec["dwell"], exit_ev, surfaces, M, rec["gamma"],
                                          samples, seed + 1000 + m,
                                          tau_bar=3 * rec["dwell"] + 1, step=step,
                                          return_states=True)
                    imgs = np.array([exit_ev.reset(e) for e in imgs])
                nxt = info[m + 1]
                mask = points_covered(imgs, [(Ms[nxt["location"]], nxt["gamma"],
                                              np.asarray(nxt["x0"]))])
                chain_ok.append({"from": m, "to": m + 1, "covered": bool(mask.all())})
        robust["trajectories"][ks] = {"class": spec.get("class"), "segments": info,
                                      "entry_cover": entry, "chain_cover": chain_ok}
        for e in entry + chain_ok:
            if not e["covered"]:
                log.warning("trajectory %d: cover check failed: %s", k, e)
        log.info("trajectory %d radii %s", k, [round(s["gamma"], 4) for s in info])
    _write_json(out / "robust.json", robust)
    return robust


# ---------------------------------------------------------------------------
# stage: abstract


def _timings_from_config(spec):
    tim = {}
    for ks, t in spec["timings"].items():
        tim[int(ks)] = SegmentTiming(tuple(t["taus"]), tuple(t.get("leads", ())),
                                     tuple(t.get("lags", ())), tuple(t.get("symbols", ())),
                                     bool(t.get("normal", True)))
    return tim


def _timings_from_robust(robust):
    tim = {}
    for ks, traj in robust["trajectories"].items():
        segs = traj["segments"]
        tim[int(ks)] = SegmentTiming(
            tuple(s["dwell"] for s in segs),
            tuple(s["tau_lead"] for s in segs[:-1]),
            tuple(s["tau_lag"] for s in segs[:-1]),
            tuple(s["exit_symbol"] for s in segs[:-1]),
        )
    return tim


def _parse_keyed(d, arity):
    out = {}
    for key, v in d.items():
        parts = [p.strip() for p in key.strip("()").split(",")]
        if len(parts) != arity:
            raise ConfigError(f"bad key {key!r}")
        nums = tuple(int(p) for p in parts[:2])
        out[nums + tuple(parts[2:])] = v
    return out


def stage_abstract(cfg, out):
    out = Path(out)
    ac = cfg.get("abstraction", {})
    res = Fraction(ac.get("resolution", "1/10"))
    if "timings" in ac:
        tim = _timings_from_config(ac)
    else:
        tim = _timings_from_robust(_read_json(out / "robust.json"))
    cover = {int(k): [int(x) for x in v] for k, v in ac.get("cover", {}).items()}
    feas = {k: [tuple(f) for f in v] for k, v in _parse_keyed(ac.get("faults", {}), 2).items()}
    ind = {k: [int(x) for x in v] for k, v in _parse_keyed(ac.get("fault_cover", {}), 3).items()}
    T = build_abstraction(tim, cover, feas, ind, res)
    out.mkdir(parents=True, exist_ok=True)
    T.save(out / "abstraction.json")
    (out / "abstraction.dot").write_text(T.to_dot())
    fails = check_output_preservation(T, tim)
    if fails:
        raise InconsistencyError(f"abstraction does not reproduce nominal timing at {fails}")
    log.info("abstraction: %d states, %d events", len(T.states), len(T.events))
    return T


# ---------------------------------------------------------------------------
# stage: observe


def _streams(out):
    path = Path(out) / "simulation.json"
    if not path.exists():
        return {}
    sim = json.loads(path.read_text())
    return {int(k): [(s["time"], s["symbol"]) for s in t["segments"] if s["symbol"]]
            for k, t in sim["trajectories"].items()}


def _run_until(cfg):
    return cfg.get("soundness", {}).get("until")


def _configured_streams(cfg):
    """Extra symbol streams: inline ``[[time, symbol], ...]`` lists or JSON-lines files."""
    out = {}
    for name, src in cfg.get("observer", {}).get("streams", {}).items():
        if isinstance(src, str):
            path = Path(cfg.get("_base") or ".") / src
            try:
                rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read stream {name}: {exc}") from exc
            out[name] = [(r["time"], r["symbol"]) for r in rows]
        else:
            out[name] = [tuple(r) for r in src]
    return out


def stage_observe(cfg, out, max_states=None):
    out = Path(out)
    T = TimedAutomaton.from_dict(_read_json(out / "abstraction.json"))
    limit = max_states or cfg.get("observer", {}).get("max_states", 100_000)
    obs = build_observer(T, limit)
    obs.save(out / "observer.json")
    (out / "observer.dot").write_text(obs.to_dot())
    streams = {f"traj_{k}": v for k, v in sorted(_streams(out).items())}
    streams.update(_configured_streams(cfg))
    until = cfg.get("observer", {}).get("until", _run_until(cfg))
    with open(out / "run.jsonl", "w") as fh:
        for name, stream in streams.items():
            for r in run_observer(obs, stream, until=until):
                fh.write(json.dumps({"stream": name, **r.to_dict()}) + "\n")
    log.info("observer: %d states", len(obs.states))
    return obs


# ---------------------------------------------------------------------------
# stage: infer


def _classes(robust):
    return {int(k): t["class"] for k, t in robust["trajectories"].items()}


def _segment(robust, q):
    k, m = q
    return robust["trajectories"][str(k)]["segments"][m]


def _tube(H, robust, at):
    seg = _segment(robust, at.q)
    loc = H.locations[seg["location"]]
    M = np.asarray(robust["locations"][seg["location"]]["M"])
    label = _classes(robust)[at.q[0]]
    return TubeData(f"{state_name(at.q)}[{float(at.a):g},{float(at.b):g}]", loc,
                    np.asarray(seg["x0"]), seg["gamma"], M, float(at.a), float(at.b), label)


def checkpoint_candidates(obs, robust, resolution, atoms=None):
    """Observer states worth a classifying formula, in breadth-first order.

    A candidate holds atoms of both classes, no latent or end-of-simulation
    atoms, and leaves room for a decision before its blank time. ``atoms``
    optionally pins the exact set of abstraction states. The second item is
    the longest formula horizon that keeps every tube in its segment.
    """
    classes = _classes(robust)
    want = None if atoms is None else {parse_state(a) for a in atoms}
    out = []
    for sid, s in enumerate(obs.states):
        b = obs.blank.get(sid)
        if b is None or any(at.q == EOS or at.a < 0 for at in s):
            continue
        if {classes[at.q[0]] for at in s} != {1, -1}:
            continue
        if want is not None and {at.q for at in s} != want:
            continue
        if len({(_segment(robust, at.q)["location"], tuple(_segment(robust, at.q)["x0"]), at.a, at.b)
                for at in s}) < len(s):
            continue  # two identical tubes with different labels
        room = float(b - resolution)
        for at in s:
            seg = _segment(robust, at.q)
            is_last = seg["exit_event"] is None
            end = seg["dwell"] if is_last else seg["dwell"] - seg["tau_lead"]
            room = min(room, end - float(at.b))
        room = round(math.floor(room / float(resolution) + 1e-9) * float(resolution), 9)
        if room > 0:
            out.append((sid, room))
    return out


def _search_config(ic, seed, max_horizon):
    keys = ("swarm", "iterations", "inertia", "cognitive", "social", "zeta", "threshold_slack",
            "connectives", "step")
    kw = {k: ic[k] for k in keys if k in ic}
    coords = ic.get("coordinates")
    return SearchConfig(seed=seed, max_horizon=max_horizon,
                        coordinates=None if coords is None else tuple(coords), **kw)


def decision_time(phi, resolution):
    h = Fraction(formula_horizon(phi)).limit_denominator(10**9)
    d = math.ceil(h / resolution) * resolution
    return max(d, resolution)


def stage_infer(cfg, out, seed=0):
    out = Path(out)
    H = HybridAutomaton.from_dict(_read_json(out / "automaton.json"))
    robust = _read_json(out / "robust.json")
    T = TimedAutomaton.from_dict(_read_json(out / "abstraction.json"))
    obs = ObserverAutomaton.from_dict(_read_json(out / "observer.json"))
    ic = cfg.get("inference", {})
    pinned = ic.get("checkpoint", {}).get("atoms")
    cands = checkpoint_candidates(obs, robust, T.resolution, pinned)
    if not cands:
        raise InferenceError("no observer state qualifies as a checkpoint")
    tried = []
    chosen = None
    for sid, room in cands[: int(ic.get("max_checkpoints", 5))]:
        tubes = [_tube(H, robust, at) for at in sorted(obs.states[sid])]
        scfg = _search_config(ic, seed, room)
        res = pso_search(tubes, scfg)
        tried.append({"state": sid, "max_horizon": room, "formula": res.text, "cost": res.cost})
        log.info("checkpoint s%d: %s cost %g", sid, res.text, res.cost)
        if chosen is None or res.cost < chosen[2].cost:
            chosen = (sid, tubes, res)
        if res.zero_cost:
            break
    sid, tubes, res = chosen
    d = decision_time(res.formula, T.resolution)
    ver = verify_classification(res.formula, tubes, int(ic.get("verify_samples", 500)), seed,
                                _search_config(ic, seed, 1.0).step)
    dataset = {"checkpoint": sid, "tubes": [
        {"name": tb.name, "location": tb.location.id, "x0": tb.x0.tolist(), "gamma": tb.gamma,
         "M": tb.M.tolist(), "lo": tb.lo, "hi": tb.hi, "label": tb.label} for tb in tubes]}
    _write_json(out / "dataset.json", dataset)
    result = {"checkpoint": sid, "decision_time": str(d), **res.to_dict(),
              "verification": ver.to_dict(), "candidates": tried}
    _write_json(out / "inference.json", result)
    if not res.zero_cost:
        log.warning("no zero-cost formula; best effort %s", res.text)
    return result


# ---------------------------------------------------------------------------
# stage: refine and runtime verdicts


def state_at(H, segments, t):
    """Exact state of a simulated run at absolute time ``t``."""
    seg = segments[0]
    for s in segments:
        if s["time"] <= t + 1e-12:
            seg = s
    return flow(H.locations[seg["location"]], np.asarray(seg["x0"]), t - seg["time"])


def location_at(segments, t):
    seg = segments[0]
    for s in segments:
        if s["time"] <= t + 1e-12:
            seg = s
    return seg["location"], t - seg["time"]


def measured_verdict(H, segments, phi, d, step):
    """Verdict callback evaluating ``phi`` on the measured run from checkpoint entry."""
    def verdict(_sid, t_dec):
        t0 = float(t_dec) - float(d)
        count = int(math.ceil(formula_horizon(phi) / step)) + 1
        vals = np.array([state_at(H, segments, t0 + i * step) for i in range(count + 1)])
        return robustness(Signal(vals, step), phi) > 0
    return verdict


def separation_time(records, classes, start):
    """First update after ``start`` from which every tube belongs to one class."""
    sep = None
    for r in records:
        ks = {classes[tb.k] for tb in r.tubes if tb.k is not None}
        if len(ks) == 1 and r.time >= start:
            if sep is None:
                sep = r.time
        else:
            sep = None
    return sep


def stage_refine(cfg, out, seed=0):
    out = Path(out)
    H = HybridAutomaton.from_dict(_read_json(out / "automaton.json"))
    robust = _read_json(out / "robust.json")
    T = TimedAutomaton.from_dict(_read_json(out / "abstraction.json"))
    obs = ObserverAutomaton.from_dict(_read_json(out / "observer.json"))
    inf = _read_json(out / "inference.json")
    phi_f = parse(inf["formula"])
    d = Fraction(inf["decision_time"])
    classes = _classes(robust)
    margins_ok = inf["zero_cost"]

    def classify(at):
        return None if at.q == EOS else classes[at.q[0]]

    ref = refine_observer(T, obs, inf["checkpoint"], d, classify, margins_ok, inf["formula"],
                          cfg.get("observer", {}).get("max_states", 100_000))
    ref.save(out / "refined_observer.json")
    (out / "refined_observer.dot").write_text(ref.to_dot())
    sim = _read_json(out / "simulation.json")
    step = sim["grid_step"]
    report = {"formula": inf["formula"], "checkpoint": inf["checkpoint"],
              "decision_time": float(d), "separation": {}}
    for ks, traj in sim["trajectories"].items():
        segs = traj["segments"]
        stream = [(s["time"], s["symbol"]) for s in segs if s["symbol"]]
        verdict = measured_verdict(H, segs, phi_f, d, step)
        until = _run_until(cfg)
        basic = run_observer(obs, stream, until=until)
        refined = run_observer(ref, stream, until=until, verdict=verdict)
        start = Fraction(stream[0][0]).limit_denominator(10**9) if stream else Fraction(0)
        tb = separation_time(basic, classes, start)
        tr = separation_time(refined, classes, start)
        report["separation"][ks] = {
            "first_symbol": float(start),
            "basic": None if tb is None else float(tb - start),
            "refined": None if tr is None else float(tr - start),
        }
    _write_json(out / "report.json", report)
    return report


# ---------------------------------------------------------------------------
# randomised soundness runs


def perturbed_run(H, cfg, robust, k, rng):
    """Simulate trajectory ``k`` with jittered schedule and a sampled entry state."""
    spec = _trajectory_specs(cfg)[k]
    jitter = float(cfg.get("schedule_jitter", 0.0))
    horizon = float(cfg.get("soundness", {}).get("until", cfg.get("horizon", 100.0)))
    step = cfg.get("grid_step", 0.05)
    sched = [(t + jitter * (2 * rng.random() - 1), e) for t, e in spec.get("schedule", [])]
    x0 = _initial_state(H, spec)
    box = spec.get("entry_box")
    tr = simulate(H, (spec["location"], x0), sched, horizon, step)
    segs = tr.event_log(H)
    if box:
        m = int(box["segment"])
        nominal = robust["trajectories"][str(k)]["segments"][m]
        lo, hi = _box(nominal["x0"], box)
        entry = lo + rng.random(len(lo)) * (hi - lo)
        # the prefix is deterministic given the schedule; restart at the entry segment
        t_m = segs[m]["time"]
        later = [(t - t_m, e) for t, e in sched if t > t_m + 1e-9]
        tail = simulate(H, (segs[m]["location"], entry), later, horizon - t_m, step,
                        check_initial=False).event_log(H)
        for s in tail:
            s["time"] += t_m
            s["segment"] += m
        tail[0]["event"] = segs[m]["event"]
        tail[0]["symbol"] = segs[m]["symbol"]
        segs = segs[:m] + tail
    stream = [(s["time"], s["symbol"]) for s in segs if s["symbol"]]
    return segs, stream


def tube_membership(H, robust, segs, records, T_res=None):
    """Records whose tube set misses the true (location, clock) pair."""
    bad = []
    for r in records:
        loc, clock = location_at(segs, float(r.time))
        ok = False
        for tb in r.tubes:
            if tb.q == EOS:
                continue
            seg = _segment(robust, tb.q)
            if seg["location"] == loc and float(tb.lo) - MEMBERSHIP_TOL <= clock <= float(tb.hi) + MEMBERSHIP_TOL:
                ok = True
                break
        if not ok:
            bad.append((float(r.time), loc, clock))
    return bad


def soundness_check(cfg, out, runs=200, seed=0, refined=False):
    """Random runs through the (refined) observer; returns a summary dict."""
    out = Path(out)
    H = HybridAutomaton.from_dict(_read_json(out / "automaton.json"))
    robust = _read_json(out / "robust.json")
    T = TimedAutomaton.from_dict(_read_json(out / "abstraction.json"))
    name = "refined_observer.json" if refined else "observer.json"
    obs = ObserverAutomaton.from_dict(_read_json(out / name))
    phi_f = d = None
    if refined:
        inf = _read_json(out / "inference.json")
        phi_f, d = parse(inf["formula"]), Fraction(inf["decision_time"])
    ks = sorted(int(k) for k in robust["trajectories"])
    rng = np.random.default_rng(seed)
    until = _run_until(cfg)
    failures = []
    classes = _classes(robust)
    wrong_verdicts = 0
    for i in range(runs):
        k = ks[int(rng.integers(len(ks)))]
        segs, stream = perturbed_run(H, cfg, robust, k, rng)
        verdict = measured_verdict(H, segs, phi_f, d, cfg.get("grid_step", 0.05)) if refined else None
        try:
            recs = run_observer(obs, stream, until=until, verdict=verdict)
        except Exception as exc:  # an inconsistency is itself a soundness failure
            failures.append({"run": i, "k": k, "error": str(exc)})
            continue
        bad = tube_membership(H, robust, segs, recs)
        if bad:
            failures.append({"run": i, "k": k, "missed": bad[:3]})
        if refined:
            final = {classes[tb.k] for tb in recs[-1].tubes if tb.k is not None}
            if final and final != {classes[k]}:
                wrong_verdicts += 1
    return {"runs": runs, "failures": failures, "wrong_verdicts": wrong_verdicts}


# ---------------------------------------------------------------------------
# driver


def has_model(cfg):
    return cfg.get("model") is not None


def run_stage(name, cfg, out, seed=0, grid_step=None, max_states=None):
    if name == "simulate":
        return stage_simulate(cfg, out, grid_step)
    if name == "bisim":
        return stage_bisim(cfg, out, seed)
    if name == "abstract":
        return stage_abstract(cfg, out)
    if name == "observe":
        return stage_observe(cfg, out, max_states)
    if name == "infer":
        return stage_infer(cfg, out, seed)
    if name == "refine":
        return stage_refine(cfg, out, seed)
    raise ConfigError(f"unknown stage {name!r}")


def run_pipeline(cfg, out, seed=0, grid_step=None, max_states=None, stages=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if stages is None:
        stages = STAGES if has_model(cfg) else ("abstract", "observe")
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {
        "version": __version__, "scenario": cfg.get("name"), "seed": seed, "stages": []}
    for name in stages:
        if name in ("simulate", "bisim", "infer", "refine") and not has_model(cfg):
            raise ModelError(f"stage {name} needs a hybrid model in the scenario")
        t0 = time.perf_counter()
        started = datetime.now(timezone.utc).isoformat()
        run_stage(name, cfg, out, seed, grid_step, max_states)
        manifest["stages"].append({"stage": name, "seed": seed, "started": started,
                                   "wall_seconds": round(time.perf_counter() - t0, 3)})
        _write_json(manifest_path, manifest)
    return manifest


__all__ = ["STAGES", "load_config", "build_model", "run_stage", "run_pipeline",
           "checkpoint_candidates", "soundness_check", "perturbed_run", "tube_membership",
           "separation_time", "state_at", "decision_time"]
