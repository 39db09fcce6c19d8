import json
import subprocess
import sys

import pytest

from hytl.cli import main
from hytl.observer import ObserverAutomaton, state_text
from hytl.pipeline import load_config, run_pipeline, soundness_check

from test_observer import GOLDEN


def outputs(out):
    """Every artifact except the manifest, which holds timestamps."""
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def run_cli(*args):
    return main([str(a) for a in args])


def test_toy_pipeline(tmp_path, capsys):
    assert run_cli("--config", "fig2_toy", "--out", tmp_path) == 0
    assert json.loads(capsys.readouterr().out)["stages"] == ["abstract", "observe"]
    obs = ObserverAutomaton.load(tmp_path / "observer.json")
    assert [state_text(s) for s in obs.states] == [g[0] for g in GOLDEN]
    assert (tmp_path / "observer.dot").read_text().startswith("digraph O")
    rows = [json.loads(line) for line in (tmp_path / "run.jsonl").read_text().splitlines()]
    nominal = [r["state_id"] for r in rows if r["stream"] == "nominal"]
    assert nominal[:3] == [0, 1, 3]
    silent = [r for r in rows if r["stream"] == "silent"]
    assert silent and all(r["label"] is None or r["label"].startswith("eps") for r in silent)
    assert {"external_time", "state_id", "tubes"} <= set(rows[0])


def test_toy_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("--config", "fig2_toy", "--out", a) == 0
    assert run_cli("--config", "fig2_toy", "--out", b) == 0
    assert outputs(a) == outputs(b)


def test_stage_isolation(tmp_path):
    assert run_cli("--config", "fig2_toy", "--out", tmp_path / "x", "--stage", "abstract") == 0
    assert run_cli("--config", "fig2_toy", "--out", tmp_path / "x", "--stage", "observe") == 0
    assert run_cli("--config", "fig2_toy", "--out", tmp_path / "y") == 0
    assert outputs(tmp_path / "x") == outputs(tmp_path / "y")
    manifest = json.loads((tmp_path / "x" / "manifest.json").read_text())
    assert [s["stage"] for s in manifest["stages"]] == ["abstract", "observe"]


def test_exit_codes(tmp_path, capsys):
    assert run_cli("--config", tmp_path / "missing.json", "--out", tmp_path) == 2
    # observe without an abstraction on disk
    assert run_cli("--config", "fig2_toy", "--out", tmp_path / "o", "--stage", "observe") == 2
    # the toy scenario has no hybrid model to simulate
    assert run_cli("--config", "fig2_toy", "--out", tmp_path, "--stage", "simulate") == 2
    assert run_cli("--config", "fig2_toy", "--out", tmp_path, "--seed", "-1") == 2
    assert run_cli("--config", "fig2_toy", "--out", tmp_path, "--grid-step", "0") == 2
    bad = json.loads(json.dumps(load_config("fig2_toy"), default=str))
    bad.pop("_base", None)
    del bad["abstraction"]["cover"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert run_cli("--config", path, "--out", tmp_path / "bad") == 5
    assert run_cli("--config", "fig2_toy", "--out", tmp_path / "cap", "--max-states", "3") == 6
    err = capsys.readouterr().err
    assert "AbstractionError" in err and "ResourceError" in err
    with pytest.raises(SystemExit):
        run_cli("--config", "fig2_toy", "--stage", "nonsense")


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hytl", "--config", "fig2_toy", "--out",
                          str(tmp_path)], capture_output=True, text=True,
                         env={"HYTL_LOG": "info", "PATH": ""})
    assert out.returncode == 0
    assert "INFO" in out.stderr


def test_building_artifacts(building):
    for name in ("automaton.json", "simulation.json", "robust.json", "abstraction.json",
                 "abstraction.dot", "observer.json", "observer.dot", "dataset.json",
                 "inference.json", "refined_observer.json", "refined_observer.dot",
                 "report.json", "manifest.json"):
        assert (building.out / name).exists(), name
    assert (building.out / "trajectories" / "traj_1.csv").exists()
    robust = building.json("robust.json")
    for loc in robust["locations"].values():
        assert loc["verification"]["passed"]
    for tr in robust["trajectories"].values():
        assert tr["entry_cover"] and tr["chain_cover"]
        assert all(seg["gamma"] > 0 for seg in tr["segments"])


def test_building_basic_observer_never_separates(building):
    report = building.json("report.json")
    for sep in report["separation"].values():
        assert sep["basic"] is None


def test_building_determinism(building, tmp_path):
    cfg = load_config("smart_building")
    run_pipeline(cfg, tmp_path, seed=0, stages=("simulate", "bisim", "abstract", "observe"))
    fresh = outputs(tmp_path)
    ref = outputs(building.out)
    assert fresh and all(ref[name] == data for name, data in fresh.items())


def decay_scenario(tmp_path, **extra):
    automaton = {
        "locations": [{"id": "l", "A": [[-1.0]], "b": [0.0]},
                      {"id": "m", "A": [[-1.0]], "b": [0.0]}],
        "events": [{"id": "half", "source": "l", "target": "m",
                    "guard": {"eq": [{"w": [1.0], "c": 0.5}]}, "symbol": "h"}],
        "initial": [{"location": "l", "lo": [1.0], "hi": [1.0]}],
    }
    cfg = {"name": "decay", "horizon": 3.0, "grid_step": 0.05,
           "model": {"type": "automaton", "automaton": automaton},
           "trajectories": [{"k": 1, "class": 1, "location": "l"}], **extra}
    path = tmp_path / "decay.json"
    path.write_text(json.dumps(cfg))
    return path


def test_automaton_scenario_simulates(tmp_path):
    path = decay_scenario(tmp_path)
    assert run_cli("--config", path, "--out", tmp_path / "o", "--stage", "simulate") == 0
    sim = json.loads((tmp_path / "o" / "simulation.json").read_text())
    segs = sim["trajectories"]["1"]["segments"]
    assert [s["event"] for s in segs] == [None, "half"]
    assert segs[0]["dwell"] == pytest.approx(0.6931471805599453, abs=1e-6)


def test_missing_automaton_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"model": {"type": "automaton", "file": "nope.json"},
                                "trajectories": [{"k": 1, "location": "l"}]}))
    assert run_cli("--config", path, "--out", tmp_path / "o", "--stage", "simulate") == 2


def test_refined_observer_soundness(building):
    res = soundness_check(load_config("smart_building"), building.out, runs=50, seed=3,
                          refined=True)
    assert res["failures"] == [] and res["wrong_verdicts"] == 0
