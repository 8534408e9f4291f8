"""Command line entry point: ``madispatch <command> ...``.

Commands
    train         train one seed of a learned mode (or evaluate one baseline seed)
    evaluate      evaluate a checkpoint or a baseline on a topology
    sweep         run a full experiment spec over all its seeds
    validate-sim  M/M/1 sanity table for the simulator
    grad-check    analytic versus finite-difference gradients
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checks, experiment as ex
from .kernels import BACKEND
from .topology import TopologyError, load_topology
from .trainer import TrainerConfig, evaluate_baseline, evaluate_team

log = logging.getLogger("madispatch")


def _loads(text: str) -> list:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad load list {text!r}") from None
    if not vals or any(not 0 < v < 1 for v in vals):
        raise argparse.ArgumentTypeError("loads must lie in (0, 1)")
    return vals


def cmd_train(args) -> int:
    spec = ex.load_spec(args.spec)
    seed = args.seed if args.seed is not None else int(spec.seeds[0])
    out = Path(args.out) if args.out else spec.out / f"seed{seed}"
    if spec.mode in ex.BASELINES:
        top = load_topology(spec.resolve(spec.topology))
        rows = []
        for load in spec.eval_loads:
            for r in evaluate_baseline(spec.mode, top, spec.trainer_config(), float(load), spec.eval_episodes,
                                       seed, spec.gd_rates):
                rows.append({"seed": seed, "topology": top.name, **r})
        ex.write_csv(out / "episodes.csv", rows, ex.EPISODE_COLUMNS)
        print(f"{spec.mode}: wrote {out / 'episodes.csv'}")
        return 0
    info = ex.train_seed(spec, seed, out)
    res = info["result"]
    for e in res.evaluations:
        print(f"TI {e['ti']:4d} load {e['load']:.2f} mean response time {1000 * e['mean_rt']:.3f} ms")
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    top = load_topology(args.topology)
    rows = []
    if args.checkpoint:
        team, config, meta = ex.team_from_checkpoint(args.checkpoint, top)
        for load in args.loads:
            for r in evaluate_team(team, top, config, load, args.episodes, args.seed, meta["weight_factor"]):
                rows.append({"seed": args.seed, "topology": top.name, **r})
        label = f"checkpoint {args.checkpoint}"
    else:
        config = TrainerConfig()
        for load in args.loads:
            for r in evaluate_baseline(args.baseline, top, config, load, args.episodes, args.seed, args.gd_rates):
                rows.append({"seed": args.seed, "topology": top.name, **r})
        label = args.baseline
    if args.trace:
        _trace(args, top)
    for r in rows:
        print(f"{label} load {r['load']:.2f} episode {r['episode']} mean {1000 * r['mean_rt']:.3f} ms "
              f"p95 {1000 * r['p95_rt']:.3f} ms")
    if args.out:
        ex.write_csv(args.out, rows, ex.EPISODE_COLUMNS)
    return 0


def _trace(args, top) -> None:
    """Dump the event trace of the first load's first episode."""
    from .trainer import baseline_dispatcher, episode_seed, run_episode, team_dispatcher

    load = args.loads[0]
    if args.checkpoint:
        team, config, meta = ex.team_from_checkpoint(args.checkpoint, top)
        run_episode(top, config, load, episode_seed(args.seed, 7, 0), team_dispatcher(team, load),
                    meta["weight_factor"], team.path_latency, trace_path=args.trace)
    else:
        run_episode(top, TrainerConfig(), load, episode_seed(args.seed, 7, 0),
                    baseline_dispatcher(args.baseline, top, load, args.gd_rates), trace_path=args.trace)


def cmd_sweep(args) -> int:
    spec = ex.load_spec(args.spec)
    if args.out:
        spec.output_dir = str(Path(args.out).resolve())
    if args.seeds:
        spec.seeds = [int(s) for s in args.seeds.split(",")]
    res = ex.run_experiment(spec)
    for r in res["summary"]:
        if r["seed"] == "all":
            print(f"{spec.mode} {r['topology']} load {r['load']:.2f}: "
                  f"{1000 * r['mean_rt']:.3f} +- {1000 * r['std_rt']:.3f} ms")
    print(f"wrote {res['dir']}")
    return 0


def cmd_validate_sim(args) -> int:
    ok = True
    print(f"{'rho':>5} {'completions':>12} {'simulated':>12} {'1/(a-l)':>12} {'rel err':>9}")
    for rho in args.utilizations:
        r = checks.mm1_sojourn(rho, args.completions, seed=args.seed)
        ok &= r["rel_error"] < args.tolerance
        print(f"{rho:5.2f} {r['completions']:12d} {r['mean']:12.6e} {r['theory']:12.6e} {r['rel_error']:9.4f}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_grad_check(args) -> int:
    g = checks.gradient_check(args.instances, args.seed)
    s = checks.surrogate_check(max(1, args.instances // 10), args.seed)
    print(json.dumps({"policy": g, "surrogate": s}, indent=1))
    ok = g["logpi_rel_error"] < 1e-4 and g["mu_rel_error"] < 1e-4 and s["rel_error"] < 1e-3
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="madispatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one seed from an experiment spec")
    t.add_argument("--spec", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default: <output_dir>/seed<N>)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint or a baseline")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--baseline", choices=ex.BASELINES)
    e.add_argument("--topology", required=True)
    e.add_argument("--loads", type=_loads, default=[0.5, 0.8])
    e.add_argument("--episodes", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--gd-rates", choices=("exact", "measured"), default="measured")
    e.add_argument("--out", help="episode CSV path")
    e.add_argument("--trace", help="write the event trace of the first episode to this CSV")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run every seed of an experiment spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out")
    s.add_argument("--seeds", help="comma-separated seeds overriding the spec")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate-sim", help="M/M/1 check of the simulator")
    v.add_argument("--utilizations", type=_loads, default=[0.3, 0.5, 0.8])
    v.add_argument("--completions", type=int, default=100_000)
    v.add_argument("--tolerance", type=float, default=0.03)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate_sim)

    g = sub.add_parser("grad-check", help="finite-difference gradient checks")
    g.add_argument("--instances", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    log.info("kernel backend: %s", BACKEND)
    try:
        return args.func(args)
    except (ex.SpecError, TopologyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
