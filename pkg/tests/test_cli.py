import json

import pytest

from prefhunter.cli import main
from prefhunter.config import load_config


def run(*argv):
    return main([str(a) for a in argv])


def test_missing_config_is_reported(tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    assert run("--config", missing, "run-all", "--script", "cadets-2") != 0
    assert str(missing) in capsys.readouterr().err


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[mdp]\ngamma = 0.9\n[irl]\nbeta = 2.5\nprior = gaussian\n[templates]\n"
                 "allowlist = 10.0.0.0/8, 203.0.113.0/24\n[pipeline]\nwindow_start = 2018-04-06T11:00:00Z\n")
    cfg = load_config(p, seed=9)
    assert cfg.gamma == 0.9 and cfg.irl.beta == 2.5 and cfg.irl.prior == "gaussian"
    assert cfg.allowlist == ("10.0.0.0/8", "203.0.113.0/24")
    assert cfg.window_start == 1523012400 * 10**9 and cfg.seed == 9
    p.write_text("[irl]\ntemperature = 3\n")
    with pytest.raises(ValueError):
        load_config(p)


def test_stage_by_stage(tmp_path):
    d = tmp_path
    assert run("simulate", "--script", "cadets-2", "--noise", "2", "--out", d / "log.jsonl", "--truth",
               d / "truth.json") == 0
    truth = json.loads((d / "truth.json").read_text())
    assert run("ingest", "--log", d / "log.jsonl", "--out", d / "clean.jsonl") == 0
    assert run("build-graph", "--log", d / "clean.jsonl", "--out", d / "graph.json") == 0
    assert run("scenario", "--graph", d / "graph.json", "--detect", truth["detection"], "--detect-ts",
               truth["detection_ts"], "--out", d / "scenario.json") == 0
    assert run("match", "--scenario", d / "scenario.json", "--out", d / "matches.json") == 0
    assert run("trajectory", "--matches", d / "matches.json", "--label", "CADETS-2", "--out", d / "traj.json") == 0
    traj = json.loads((d / "traj.json").read_text())
    assert traj["steps"] == truth["trajectory"]["steps"]
    for method in ("map-birl", "mle-irl"):
        assert run("learn", "--method", method, "--trajectory", d / "traj.json", "--out", d / f"{method}.json") == 0
    res = json.loads((d / "map-birl.json").read_text())
    assert {"w", "normalized_w", "trace", "ile"} <= set(res)
    assert run("analyze", "--results", d / "map-birl.json", d / "mle-irl.json", "--trajectories", d / "traj.json",
               "--out", d / "report.json", "--csv", d / "w.csv") == 0
    report = json.loads((d / "report.json").read_text())
    assert report["datasets"][0]["top_tier"]["MAP_BIRL"] == ["Att", "Dis"]
    assert (d / "w.csv").read_text().count("\n") == 3


def test_stage_failure_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"rec": "event", "seq": 1, "ts": 1, "kind": "READ", "subject": "a", "object": "b"}\n')
    assert run("ingest", "--log", bad) == 1
    err = capsys.readouterr().err
    assert "ingest" in err and "unknown node" in err


def test_run_all_is_deterministic(tmp_path):
    for k in (1, 2):
        assert run("run-all", "--script", "cadets-2", "--noise", "3", "--out-dir", tmp_path / f"r{k}", "--seed",
                   "42") == 0
    a = (tmp_path / "r1" / "report.json").read_bytes()
    assert a == (tmp_path / "r2" / "report.json").read_bytes()
    for name in ("logs.jsonl", "graph.json", "scenario.json", "matches.json", "trajectory.json", "map_birl.json",
                 "mle_irl.json"):
        assert (tmp_path / "r1" / "CADETS-2" / name).is_file()
    assert (tmp_path / "r1" / "weights.csv").is_file()


def test_global_flags_after_the_subcommand(tmp_path):
    assert run("run-all", "--script", "cadets-2", "--noise", "0", "--out-dir", tmp_path / "o", "--seed", "5") == 0
    res = json.loads((tmp_path / "o" / "CADETS-2" / "map_birl.json").read_text())
    assert res["config"]["seed"] == 5
