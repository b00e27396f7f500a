import json
import math
from pathlib import Path

import pytest

from drivegen.cli import main
from drivegen.scenario import load_scenario, scenario_to_dict
from drivegen.vocab import load_vocabulary, save_vocabulary


def _dir_bytes(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-corpus", "--count", "5", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def vocab_file(tmp_path_factory, small_vocab):
    path = tmp_path_factory.mktemp("vocab") / "vocab.json"
    save_vocabulary(small_vocab, path)
    return path


def test_gen_corpus_writes_files(corpus_dir):
    files = sorted(corpus_dir.glob("*.json"))
    assert len(files) == 5
    for f in files:
        load_scenario(f)  # validates


def test_gen_corpus_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-corpus", "--count", "4", "--seed", "3", "--out", str(a)]) == 0
    assert main(["gen-corpus", "--count", "4", "--seed", "3", "--out", str(b)]) == 0
    assert _dir_bytes(a) == _dir_bytes(b)


def test_gen_corpus_missing_out_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen-corpus", "--count", "4"])
    assert exc.value.code == 2


def test_build_vocab_cli(tmp_path):
    out = tmp_path / "v.json"
    rc = main([
        "build-vocab", "--k", "16", "--samples", "64", "--seed", "2",
        "--horizon", "40", "--out", str(out),
    ])
    assert rc == 0
    vocab = load_vocabulary(out)
    assert vocab.size == 16
    assert vocab.horizon == 40


def test_generate_smoke_and_stats(tmp_path, corpus_dir, vocab_file, capsys):
    out = tmp_path / "ds"
    rc = main([
        "generate", "--corpus", str(corpus_dir), "--out", str(out),
        "--vocab", str(vocab_file), "--rounds", "2", "--seed", "5",
        "--expert", "recovery",
    ])
    assert rc == 0
    assert (out / "dataset.jsonl").exists()
    stats_lines = (out / "stats.csv").read_text().splitlines()
    assert len(stats_lines) == 3  # header + 2 rounds
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 5
    assert manifest["expert_kind"] == "recovery"
    assert len(manifest["config_hash"]) == 64

    rc = main(["stats", "--dataset", str(out)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "dataset records:" in printed


def test_generate_non_reactive_recorded(tmp_path, corpus_dir, vocab_file):
    out = tmp_path / "ds-nr"
    rc = main([
        "generate", "--corpus", str(corpus_dir), "--out", str(out),
        "--vocab", str(vocab_file), "--rounds", "3", "--seed", "5",
        "--expert", "recovery", "--non-reactive",
    ])
    assert rc == 0
    stats_lines = (out / "stats.csv").read_text().splitlines()
    assert len(stats_lines) == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["reactive"] is False


def test_generate_worker_count_invariance(tmp_path, corpus_dir, vocab_file):
    outs = []
    for label, workers in (("w1", "1"), ("w2", "2")):
        out = tmp_path / label
        rc = main([
            "generate", "--corpus", str(corpus_dir), "--out", str(out),
            "--vocab", str(vocab_file), "--rounds", "2", "--seed", "9",
            "--expert", "recovery", "--workers", workers,
        ])
        assert rc == 0
        outs.append(out)
    assert _dir_bytes(outs[0]) == _dir_bytes(outs[1])


def _write_logged_trajectory(scenario_path: Path, out_path: Path) -> None:
    s = load_scenario(scenario_path)
    d = scenario_to_dict(s)
    anchor = s.t_history - 1
    states = d["ego_log"][anchor : anchor + s.t_horizon + 1]
    out_path.write_text(json.dumps({"dt": d["dt"], "frame": "global", "states": states}))


def test_eval_logged_ego_golden(tmp_path, corpus_dir, capsys):
    scenario_path = sorted(corpus_dir.glob("straight-*.json"))[0]
    traj_path = tmp_path / "logged.json"
    _write_logged_trajectory(scenario_path, traj_path)
    rc = main([
        "eval", "--scenario", str(scenario_path), "--trajectory", str(traj_path),
        "--mode", "nonreactive",
    ])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    # golden: replaying the log scores a perfect 1.0
    assert report["epdms"] == pytest.approx(1.0, abs=1e-12)
    for name in ("nc", "dac", "ddc", "tlc"):
        assert report["submetrics"][name] == 1.0


def _parked_car_scenario_file(path: Path) -> None:
    """Straight road with a parked car; the log brakes and stops before it."""
    from drivegen.scenario import (
        AgentTrack, Lane, MapModel, Pose2D, Scenario, Trajectory, VehicleState,
        write_scenario,
    )

    dt, t_history, t_horizon = 0.1, 20, 40
    n = t_history + 2 * t_horizon
    states = []
    x, v = 0.0, 8.0
    for k in range(n):
        states.append(VehicleState(Pose2D(x, 0.0, 0.0), v, 0.0, 0.0, 0.0))
        x += dt * v
        if k >= t_history:
            v = max(0.0, v - dt * 2.0)
    anchor_x = states[t_history - 1].pose.x
    parked_x = anchor_x + 25.0
    lane = ((-60.0, 0.0), (300.0, 0.0))
    scenario = Scenario(
        id="parked-eval",
        map=MapModel(
            lanes=(Lane(polyline=lane, width=3.5, direction=1),),
            drivable_area=(((-60.0, -2.0), (300.0, -2.0), (300.0, 2.0), (-60.0, 2.0)),),
            route=lane,
            traffic_lights=(),
        ),
        ego_log=Trajectory(dt=dt, states=tuple(states)),
        agents=(
            AgentTrack(
                id="parked", length=4.5, width=1.9, kind="static",
                states=tuple(
                    VehicleState(Pose2D(parked_x, 0.0, 0.0), 0.0, 0.0, 0.0, 0.0)
                    for _ in range(n)
                ),
            ),
        ),
        t_history=t_history,
        t_horizon=t_horizon,
    )
    write_scenario(scenario, path)


def test_eval_collision_trajectory_zero(tmp_path, capsys):
    scenario_path = tmp_path / "parked.json"
    _parked_car_scenario_file(scenario_path)
    s = load_scenario(scenario_path)
    anchor = s.t_history - 1
    st0 = s.ego_log[anchor]
    # constant speed straight into the parked car: executable and fatal
    states = [
        {"x": st0.pose.x + 8.0 * 0.1 * k, "y": 0.0, "theta": 0.0,
         "v_lon": 8.0, "v_lat": 0.0, "accel": 0.0, "steering": 0.0}
        for k in range(s.t_horizon + 1)
    ]
    traj_path = tmp_path / "ram.json"
    traj_path.write_text(json.dumps({"dt": 0.1, "frame": "global", "states": states}))
    rc = main([
        "eval", "--scenario", str(scenario_path), "--trajectory", str(traj_path),
        "--mode", "nonreactive",
    ])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["epdms"] == 0.0
    assert report["submetrics"]["nc"] == 0.0


def test_eval_dt_mismatch_nonzero_exit(tmp_path, corpus_dir, capsys):
    scenario_path = sorted(corpus_dir.glob("*.json"))[0]
    traj_path = tmp_path / "bad_dt.json"
    _write_logged_trajectory(scenario_path, traj_path)
    data = json.loads(traj_path.read_text())
    data["dt"] = 0.2
    traj_path.write_text(json.dumps(data))
    rc = main(["eval", "--scenario", str(scenario_path), "--trajectory", str(traj_path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def _points_csv(path: Path, rows):
    path.write_text("n,s\n" + "\n".join(f"{n},{s}" for n, s in rows) + "\n")


def test_fit_scaling_recovers_coefficients(tmp_path, capsys):
    rows = []
    for k in range(1, 7):
        n = math.e ** k
        rows.append((n, -0.5 * k * k + 3.0 * k + 10.0))
    csv_path = tmp_path / "run.csv"
    _points_csv(csv_path, rows)
    out = tmp_path / "fit"
    rc = main(["fit-scaling", "--points", f"demo={csv_path}", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["demo"]["a"] == pytest.approx(-0.5, abs=1e-9)
    assert report["demo"]["b"] == pytest.approx(3.0, abs=1e-9)
    assert report["demo"]["c"] == pytest.approx(10.0, abs=1e-9)
    curve = (out / "curve_demo.csv").read_text().splitlines()
    assert curve[0] == "n,s_fit,s_lo,s_hi"


def test_fit_scaling_two_labeled_runs(tmp_path):
    c1, c2 = tmp_path / "a.csv", tmp_path / "b.csv"
    _points_csv(c1, [(math.e ** k, -0.5 * k * k + 3 * k + 10) for k in range(1, 7)])
    _points_csv(c2, [(math.e ** k, 2.0 * k + 1) for k in range(1, 7)])
    out = tmp_path / "cmp"
    rc = main([
        "fit-scaling", "--points", f"sat={c1}", "--points", f"lin={c2}", "--out", str(out),
    ])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["sat"]["flag"] == "saturating"
    assert report["lin"]["flag"] == "non-saturating"


def test_fit_scaling_rejects_nonpositive_n(tmp_path, capsys):
    csv_path = tmp_path / "bad.csv"
    _points_csv(csv_path, [(10.0, 1.0), (-5.0, 2.0), (100.0, 3.0)])
    rc = main(["fit-scaling", "--points", str(csv_path), "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "row 3" in err


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
