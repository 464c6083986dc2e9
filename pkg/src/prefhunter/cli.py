"""Command-line entry point: ``prefhunter <stage> ...``.

Every stage reads and writes plain files so any step can be rerun from disk.
Logs go to stderr as one JSON object per line.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import action_mapper, analysis, ingest, irl, provenance, synth
from .config import PipelineConfig, load_config
from .errors import PrefHunterError
from .mdp import AttackerMdp
from .trajectory import Trajectory

log = logging.getLogger("prefhunter")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        out = {"level": record.levelname.lower(), "msg": record.getMessage()}
        out.update(getattr(record, "fields", {}))
        return json.dumps(out, sort_keys=True)


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def _info(msg, **fields):
    log.info(msg, extra={"fields": fields})


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@contextmanager
def _stage(name, **fields):
    t = time.perf_counter()
    try:
        yield
    except (PrefHunterError, ValueError, KeyError, OSError) as exc:
        raise StageError(name, exc) from exc
    _info("stage done", stage=name, seconds=round(time.perf_counter() - t, 4), **fields)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _config(args) -> PipelineConfig:
    overrides = {"seed": args.seed, "out_dir": args.out_dir}
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None:
        cfg.irl = dataclasses.replace(cfg.irl, seed=args.seed)
    return cfg


# stage functions: pure-ish wrappers that the subcommands and run-all share

def stage_graph(corpus):
    return provenance.build_versioned_graph(corpus)


def stage_scenario(g, detect, detect_ts, t0):
    sources = provenance.backward_search(g, detect, detect_ts)
    sg = provenance.forward_scenario(g, sources, t0, detect)
    return provenance.propagate_tags(sg)


def stage_learn(traj: Trajectory, method: str, cfg: PipelineConfig):
    mdp = AttackerMdp(gamma=cfg.gamma, p_esc=cfg.p_esc)
    if method in ("map-birl", irl.MAP_BIRL):
        res = irl.map_birl(traj, mdp, cfg.irl)
    elif method in ("mle-irl", irl.MLE_IRL):
        res = irl.mle_irl(traj, mdp.simulator(), cfg.irl)
    else:
        raise ValueError(f"unknown method {method!r}")
    res.label = traj.label
    res.ile = irl.inverse_learning_error(traj, res, mdp, n_samples=cfg.ile_samples, seed=cfg.seed)
    return res


# subcommands

def cmd_simulate(args, cfg):
    with _stage("simulate"):
        script = synth.load_script(args.script_file) if args.script_file else synth.script_by_name(args.script)
        noise = cfg.noise_ratio if args.noise is None else args.noise
        corpus, truth = synth.generate(script.with_noise(noise, cfg.seed))
        _write(Path(args.out), ingest.dumps_corpus(corpus))
        if args.truth:
            _write(Path(args.truth), json.dumps(truth.to_json(), indent=2, sort_keys=True))
    _info("simulated", script=script.name, events=len(corpus.events), nodes=len(corpus.nodes))


def _window(args, cfg):
    start = args.window_start if args.window_start is not None else cfg.window_start
    end = args.window_end if args.window_end is not None else cfg.window_end
    if start is None and end is None:
        return None
    return (start, end)


def cmd_ingest(args, cfg):
    with _stage("ingest"):
        corpus = ingest.load_corpus(args.log, _window(args, cfg))
        if args.out:
            _write(Path(args.out), ingest.dumps_corpus(corpus))
    _info("ingested", nodes=len(corpus.nodes), events=len(corpus.events), dropped=corpus.dropped)


def cmd_build_graph(args, cfg):
    with _stage("build-graph"):
        corpus = ingest.load_corpus(args.log, _window(args, cfg))
        g = stage_graph(corpus)
        _write(Path(args.out), g.dumps())
    _info("graph built", nodes=len(g.nodes), edges=len(g.edges))


def cmd_scenario(args, cfg):
    with _stage("scenario"):
        g = provenance.ProvGraph.from_json(_read_json(args.graph))
        detect = args.detect or list(cfg.detect)
        if not detect:
            raise ValueError("no detection point given (--detect or [pipeline] detect)")
        detect_ts = ingest.parse_time(args.detect_ts) if args.detect_ts is not None else cfg.detect_ts
        if detect_ts is None:
            detect_ts = g.window[1]
        t0 = ingest.parse_time(args.t0) if args.t0 is not None else g.window[0]
        sg = stage_scenario(g, detect, detect_ts, t0)
        _write(Path(args.out), sg.dumps())
    _info("scenario extracted", nodes=len(sg.nodes), edges=len(sg.edges), sources=len(sg.sources))


def cmd_match(args, cfg):
    with _stage("match"):
        sg = provenance.ScenarioGraph.from_json(_read_json(args.scenario))
        matches = action_mapper.match_templates(sg, burst_gap_ns=cfg.burst_gap_ns, allowlist=cfg.allowlist)
        _write(Path(args.out), action_mapper.dumps_matches(matches))
    _info("templates matched", matches=len(matches))


def cmd_trajectory(args, cfg):
    with _stage("trajectory"):
        matches = action_mapper.loads_matches(Path(args.matches).read_text(encoding="utf-8"))
        traj = action_mapper.extract_trajectory(matches, label=args.label or Path(args.matches).stem)
        _write(Path(args.out), traj.dumps())
    _info("trajectory extracted", steps=len(traj))


def cmd_learn(args, cfg):
    with _stage("learn", method=args.method):
        traj = Trajectory.from_json(_read_json(args.trajectory))
        res = stage_learn(traj, args.method, cfg)
        _write(Path(args.out), res.dumps())
    _info("weights learned", method=res.method, converged=res.converged, ile=res.ile[0])


def cmd_analyze(args, cfg):
    with _stage("analyze"):
        by_label = {}
        for path in args.results:
            res = irl.IrlResult.from_json(_read_json(path))
            by_label.setdefault(res.label, []).append(res)
        trajs = [Trajectory.from_json(_read_json(p)) for p in (args.trajectories or [])]
        profiles = [analysis.build_profile(label, rs, cfg.bandwidth) for label, rs in by_label.items()]
        report, table = analysis.build_report(profiles, trajs, cfg.bandwidth)
        _write(Path(args.out), analysis.dumps_report(report))
        if args.csv:
            _write(Path(args.csv), table)
    _info("report written", datasets=len(profiles))


def run_pipeline(script: synth.AttackScript, cfg: PipelineConfig, out_dir: Path):
    """All stages for one script; returns (trajectory, [map result, mle result])."""
    d = out_dir / script.name
    with _stage("simulate", dataset=script.name):
        corpus, truth = synth.generate(script.with_noise(cfg.noise_ratio, cfg.seed))
        _write(d / "logs.jsonl", ingest.dumps_corpus(corpus))
        _write(d / "truth.json", json.dumps(truth.to_json(), indent=2, sort_keys=True))
    with _stage("ingest", dataset=script.name):
        corpus = ingest.load_corpus(d / "logs.jsonl")
    with _stage("build-graph", dataset=script.name):
        g = stage_graph(corpus)
        _write(d / "graph.json", g.dumps())
    with _stage("scenario", dataset=script.name):
        sg = stage_scenario(g, [truth.detection], truth.detection_ts, corpus.window[0])
        _write(d / "scenario.json", sg.dumps())
    with _stage("match", dataset=script.name):
        matches = action_mapper.match_templates(sg, burst_gap_ns=cfg.burst_gap_ns, allowlist=cfg.allowlist)
        _write(d / "matches.json", action_mapper.dumps_matches(matches))
    with _stage("trajectory", dataset=script.name):
        traj = action_mapper.extract_trajectory(matches, label=script.name)
        _write(d / "trajectory.json", traj.dumps())
    results = []
    for method in ("map-birl", "mle-irl"):
        with _stage("learn", dataset=script.name, method=method):
            res = stage_learn(traj, method, cfg)
            _write(d / f"{method.replace('-', '_')}.json", res.dumps())
            results.append(res)
    return traj, results


def cmd_run_all(args, cfg):
    out_dir = Path(cfg.out_dir)
    if args.script_file:
        scripts = [synth.load_script(p) for p in args.script_file]
    elif args.script:
        scripts = [synth.script_by_name(n) for n in args.script]
    else:
        scripts = synth.builtin_scripts()
    if args.noise is not None:
        cfg.noise_ratio = args.noise
    trajs, profiles = [], []
    for script in scripts:
        traj, results = run_pipeline(script, cfg, out_dir)
        trajs.append(traj)
        profiles.append(analysis.build_profile(script.name, results, cfg.bandwidth))
    with _stage("analyze"):
        report, table = analysis.build_report(profiles, trajs, cfg.bandwidth)
        _write(out_dir / "report.json", analysis.dumps_report(report))
        _write(out_dir / "weights.csv", table)
    for p in profiles:
        _info("preferences", dataset=p.label, ordering=p.ordering(irl.MAP_BIRL), rho=p.spearman_rho)
    return report


def build_parser() -> argparse.ArgumentParser:
    def flags(default):
        parser = argparse.ArgumentParser(add_help=False, argument_default=default)
        parser.add_argument("--seed", type=int, help="random seed (default 42)")
        parser.add_argument("--config", help="INI configuration file")
        parser.add_argument("--out-dir", help="artifact directory for run-all")
        parser.add_argument("-v", "--verbose", action="store_true", default=default if default else False)
        return parser

    # global flags may come before or after the subcommand
    common = flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="prefhunter", parents=[flags(None)],
                                description="Infer attacker preferences from audit logs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic attack log")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--script", help="builtin script name, e.g. cadets-1")
    g.add_argument("--script-file", help="JSON attack script")
    s.add_argument("--noise", type=float, default=None, help="benign events per attack event")
    s.add_argument("--out", required=True)
    s.add_argument("--truth", default=None)
    s.set_defaults(func=cmd_simulate)

    for name, func, help_ in (("ingest", cmd_ingest, "validate and normalise a log"),
                              ("build-graph", cmd_build_graph, "build the versioned provenance graph")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--log", required=True)
        s.add_argument("--window-start", default=None, help="RFC 3339 or integer ns")
        s.add_argument("--window-end", default=None, help="RFC 3339 or integer ns")
        s.add_argument("--out", required=(name == "build-graph"))
        s.set_defaults(func=func)

    s = sub.add_parser("scenario", parents=[common], help="extract and tag the attack scenario")
    s.add_argument("--graph", required=True)
    s.add_argument("--detect", action="append", help="detection point uuid (repeatable)")
    s.add_argument("--detect-ts", default=None)
    s.add_argument("--t0", default=None, help="forward search start time (default: window start)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("match", parents=[common], help="match action templates")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("trajectory", parents=[common], help="turn matches into a trajectory")
    s.add_argument("--matches", required=True)
    s.add_argument("--label", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("learn", parents=[common], help="learn preference weights")
    s.add_argument("--method", choices=("map-birl", "mle-irl"), required=True)
    s.add_argument("--trajectory", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("analyze", parents=[common], help="tiers, rank agreement and report")
    s.add_argument("--results", nargs="+", required=True)
    s.add_argument("--trajectories", nargs="*", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("run-all", parents=[common], help="full pipeline over replica scripts")
    s.add_argument("--script", nargs="*", default=None, help="builtin script names (default: all six)")
    s.add_argument("--script-file", nargs="*", default=None)
    s.add_argument("--noise", type=float, default=None)
    s.set_defaults(func=cmd_run_all)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = _config(args)
    except (FileNotFoundError, ValueError) as exc:
        log.error(str(exc), extra={"fields": {"stage": "config"}})
        return 2
    try:
        args.func(args, cfg)
    except StageError as exc:
        log.error(str(exc.__cause__), extra={"fields": {"stage": exc.stage}})
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
