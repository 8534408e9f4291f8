import hashlib
import json

import numpy as np
import pytest

from madispatch import experiment as ex
from madispatch.cli import main

FAST = {"iterations": 2, "steps_per_episode": 5, "warmup": 2.0, "eval_loads": [0.5], "hidden": [8, 8]}


def write_spec(tmp_path, **kw):
    spec = {"topology": "builtin:desk_sa8.json", "mode": "CWRR", "trainer": FAST, "eval_loads": [0.5],
            "seeds": [0], "output_dir": "out", **kw}
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec))
    return p


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_cwrr_sweep_rows(tmp_path):
    spec = write_spec(tmp_path, eval_loads=[0.3, 0.5, 0.8])
    assert main(["sweep", "--spec", str(spec)]) == 0
    rows = ex.read_csv(tmp_path / "out" / "episodes.csv")
    assert [float(r["load"]) for r in rows] == [0.3, 0.5, 0.8]
    assert all(float(r["mean_rt"]) > 0 for r in rows)


def test_summary_recomputes_from_raw(tmp_path):
    spec = write_spec(tmp_path, mode="RANDOM", seeds=[0, 1, 2], eval_episodes=2)
    assert main(["sweep", "--spec", str(spec)]) == 0
    raw = ex.read_csv(tmp_path / "out" / "episodes.csv")
    summary = ex.read_csv(tmp_path / "out" / "summary.csv")
    per_seed = [np.mean([float(r["mean_rt"]) for r in raw if r["seed"] == str(s)]) for s in range(3)]
    agg = [r for r in summary if r["seed"] == "all"][0]
    assert float(agg["mean_rt"]) == pytest.approx(np.mean(per_seed), rel=1e-12)
    assert float(agg["std_rt"]) == pytest.approx(np.std(per_seed), rel=1e-12)


def test_sweep_byte_identical(tmp_path):
    spec = write_spec(tmp_path, mode="GD", seeds=[0, 1])
    main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "a")])
    main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "b")])
    for name in ("episodes.csv", "summary.csv"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_workers_do_not_change_output(tmp_path, monkeypatch):
    spec = write_spec(tmp_path, mode="CWRR", seeds=[0, 1])
    main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "one")])
    monkeypatch.setenv("MADISPATCH_WORKERS", "2")
    main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "two")])
    assert digest(tmp_path / "one" / "episodes.csv") == digest(tmp_path / "two" / "episodes.csv")


def test_train_then_evaluate_transfer(tmp_path, capsys):
    spec = write_spec(tmp_path, mode="MAPPO")
    assert main(["train", "--spec", str(spec), "--seed", "0", "--out", str(tmp_path / "run")]) == 0
    ck = tmp_path / "run" / "checkpoint"
    for name in ("team.json", "agent_0.npz", "agent_7.npz"):
        assert (ck / name).exists()
    assert (tmp_path / "run" / "checkpoint_ti0" / "team.json").exists()
    metrics = ex.read_csv(tmp_path / "run" / "metrics.csv")
    assert [m["ti"] for m in metrics] == ["1", "2"]
    assert {"value_loss", "clip_fraction", "train_mean_rt@0.5", "util0@0.8"} <= set(metrics[0])
    before = {p.name: digest(p) for p in ck.iterdir()}
    from madispatch.topology import data_path
    out = tmp_path / "eval5.csv"
    assert main(["evaluate", "--checkpoint", str(ck), "--topology", str(data_path("desk_sa8_5ctl.json")),
                 "--loads", "0.5", "--out", str(out), "--trace", str(tmp_path / "trace.csv")]) == 0
    rows = ex.read_csv(out)
    assert len(rows[0]["utilization"].split(";")) == 5
    assert {p.name: digest(p) for p in ck.iterdir()} == before
    assert (tmp_path / "trace.csv").read_text().startswith("time,kind,switch,controller,request_id")


def test_train_byte_identical(tmp_path):
    spec = write_spec(tmp_path, mode="SA_PPO_MA")
    for d in ("x", "y"):
        main(["train", "--spec", str(spec), "--seed", "4", "--out", str(tmp_path / d)])
    for name in ("metrics.csv", "training_eval.csv"):
        assert digest(tmp_path / "x" / name) == digest(tmp_path / "y" / name)


def test_evaluate_baseline(tmp_path):
    from madispatch.topology import data_path
    out = tmp_path / "gd.csv"
    assert main(["evaluate", "--baseline", "GD", "--gd-rates", "exact", "--topology",
                 str(data_path("desk_sa8.json")), "--loads", "0.5", "--out", str(out)]) == 0
    assert len(ex.read_csv(out)) == 1


def test_bad_spec_reports_error(tmp_path, capsys):
    spec = write_spec(tmp_path, mode="DDPG")
    assert main(["sweep", "--spec", str(spec)]) == 2
    assert "unknown mode" in capsys.readouterr().err
    assert main(["sweep", "--spec", str(tmp_path / "missing.json")]) == 2
    bad = write_spec(tmp_path, trainer={"learning_rate": 1})
    assert main(["train", "--spec", str(bad)]) == 2


def test_feature_length_mismatch(tmp_path):
    spec = write_spec(tmp_path, mode="MAPPO")
    main(["train", "--spec", str(spec), "--out", str(tmp_path / "run")])
    from madispatch import policy as pol
    from madispatch.topology import load_topology, data_path
    # claim a history of 5 while the stored network still takes 3 + 5 inputs
    path = tmp_path / "run" / "checkpoint" / "agent_0.npz"
    params, cfg, _ = pol.load_policy(path)
    cfg.history = 5
    pol.save_policy(path, params, cfg, {"agent": 0})
    with pytest.raises(ValueError, match="feature length"):
        ex.team_from_checkpoint(tmp_path / "run" / "checkpoint", load_topology(data_path("desk_sa8.json")))


def test_validate_sim_and_grad_check(capsys):
    assert main(["validate-sim", "--utilizations", "0.5", "--completions", "20000", "--tolerance", "0.1"]) == 0
    assert main(["grad-check", "--instances", "8"]) == 0
    assert "PASS" in capsys.readouterr().out
