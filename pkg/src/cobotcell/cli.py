"""Command line entry point: simulate, experiment, calibrate, serve, replay."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import AppConfig, load_config
from .engine import Engine, POLICY_IDS
from .experiment import (
    INDEPENDENT_TRACES, SHARED_TRACE, CalibrationError, CalibrationTarget,
    ExperimentPlan, calibrate, fit_initial_weights, run_experiment,
)
from .human import HumanTrace, generate_trace, sample_subject
from .model import ConfigError


def _load(args) -> AppConfig:
    return load_config(getattr(args, "config", None))


def _subject_seeds(seed: int, i: int) -> tuple[int, int]:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
    a, b = ss.generate_state(2)
    return int(a), int(b)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    engine_cfg = cfg.engine_config(args.policy)
    runs = []
    for i in range(args.subjects):
        s_profile, s_trace = _subject_seeds(args.seed, i)
        profile = sample_subject(cfg.population, s_profile,
                                 subject_id=f"s{i:03d}")
        trace = generate_trace(profile, cfg.task, s_trace)
        run_cfg = replace(engine_cfg, fetch_reaction=profile.fetch_reaction)
        rec = Engine(run_cfg, trace, seed=args.seed).run()
        runs.append(rec.to_dict())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"policy": args.policy, "seed": args.seed,
                               "runs": runs},
                              sort_keys=True, separators=(",", ":")))
    totals = [r["total_time_ms"] for r in runs]
    print(f"simulate: {args.subjects} run(s) under {args.policy}; "
          f"mean total {np.mean(totals) / 1000:.1f} s -> {out}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    plan = ExperimentPlan(
        n_subjects=args.subjects,
        crn_mode=SHARED_TRACE if args.crn == "on" else INDEPENDENT_TRACES,
        seed=args.seed)
    report = run_experiment(plan, cfg.engine_config("sensor"), cfg.population)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "runs.csv").write_text(report.runs_csv())
    (out / "comparisons.csv").write_text(report.comparisons_csv())
    for c in report.comparisons:
        mark = "*" if c.significant else " "
        print(f"{c.measure:11s} {c.policy_a:8s} vs {c.policy_b:8s} "
              f"reduction {c.pct_diff:6.1%}  p(holm)={c.p_holm:.4f}{mark}")
    print(f"experiment: report written to {out}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    target = CalibrationTarget(target_total_time=args.target_total,
                               tolerance=args.tolerance)
    try:
        result = calibrate(target, cfg.engine_config("sensor"),
                           cfg.population, n_subjects=args.subjects,
                           seed=args.seed)
    except CalibrationError as err:
        if args.out:
            Path(args.out).write_text(json.dumps(
                {"fitted": err.best.to_dict(), "met_tolerance": False},
                sort_keys=True, indent=2))
        print(f"calibrate: {err}", file=sys.stderr)
        return 1
    if args.fit_weights:
        fitted_cfg = replace(cfg.engine_config("adaptive"),
                             population_mean_place_b=result.pop_mean_place_b)
        triple, err = fit_initial_weights(
            fitted_cfg, cfg.population,
            n_subjects=min(args.subjects, 40), seed=args.seed)
        result.weights = triple
        result.mean_prediction_error = err
        print(f"calibrate: outer weights {tuple(round(w, 3) for w in triple)} "
              f"give mean |forecast error| {err:.2f} s")
    doc = {"fitted": result.to_dict(), "met_tolerance": True,
           "target_total_time": target.target_total_time,
           "tolerance": target.tolerance}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(doc, sort_keys=True, indent=2))
    print(f"calibrate: pop_mean_place_b={result.pop_mean_place_b:.3f} "
          f"achieves {result.achieved_mean_total:.1f} s "
          f"(rel error {result.rel_error:.3f})")
    return 0


def cmd_replay(args) -> int:
    cfg = _load(args)
    trace = HumanTrace.from_json(Path(args.trace).read_text())
    rec = Engine(cfg.engine_config(args.policy), trace).run()
    print(f"replay: {args.policy} on {trace.subject_id}: "
          f"total {rec.total_time:.3f} s, human idle {rec.human_idle:.3f} s, "
          f"robot idle {rec.robot_idle:.3f} s")
    if args.out:
        Path(args.out).write_text(rec.to_json())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load(args)
    app = create_app(cfg, out_dir=args.out)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cobotcell",
        description="Human-robot collaborative assembly cell: simulation, "
                    "experiments and live sessions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="batch runs under one policy")
    p.add_argument("--policy", required=True, choices=POLICY_IDS)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="blocked subjects x policies run")
    p.add_argument("--subjects", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crn", choices=("on", "off"), default="on")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("calibrate", help="fit the population pace to a "
                                         "target mean total time")
    p.add_argument("--target-total", type=float, default=317.0)
    p.add_argument("--tolerance", type=float, default=0.10)
    p.add_argument("--subjects", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fit-weights", action="store_true",
                   help="also search initial outer weights minimizing the "
                        "adaptive policy's mean cycle-forecast error")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve", help="run the live session server")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="sessions")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="replay a recorded trace under a policy")
    p.add_argument("--trace", required=True)
    p.add_argument("--policy", required=True, choices=POLICY_IDS)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"cobotcell: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
