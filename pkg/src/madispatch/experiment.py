"""Experiment specs, checkpoints, evaluation sweeps and CSV output.

An experiment spec is a JSON object::

    {
      "topology": "builtin:desk_sa8.json",      # or a path relative to the spec
      "mode": "MAPPO",                           # MAPPO SA_PPO_MA CENTRAL CWRR GD RANDOM
      "trainer": {"iterations": 100},            # TrainerConfig overrides
      "eval_loads": [0.3, 0.5, 0.8],
      "eval_episodes": 1,
      "transfer_topology": "builtin:desk_sa8_5ctl.json",   # optional
      "seeds": [0, 1, 2, 3, 4],
      "output_dir": "runs/mappo",
      "gd_rates": "measured"                     # GD only: "measured" or "exact"
    }

Output layout of ``run_experiment`` (per seed ``s``)::

    seed{s}/metrics.csv          per-TI training metrics (learned modes)
    seed{s}/training_eval.csv    noise-free evaluations during training
    seed{s}/checkpoint_ti0/      initial policies
    seed{s}/checkpoint/          final policies
    episodes.csv                 one row per evaluation episode
    summary.csv                  per (topology, load, seed) means, plus seed=all mean/std
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import policy as pol
from .topology import Topology, data_path, load_topology, obs_dim
from .trainer import MODES, Team, TrainerConfig, evaluate_baseline, evaluate_team, train

BASELINES = ("CWRR", "GD", "RANDOM")
ALL_MODES = MODES + BASELINES
WORKERS_ENV = "MADISPATCH_WORKERS"


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    topology: str
    mode: str = "MAPPO"
    trainer: dict = field(default_factory=dict)
    eval_loads: list = field(default_factory=lambda: [0.5, 0.8])
    eval_episodes: int = 1
    transfer_topology: str | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "runs/experiment"
    gd_rates: str = "measured"
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in ALL_MODES:
            raise SpecError(f"unknown mode {self.mode!r}; expected one of {', '.join(ALL_MODES)}")
        if not self.seeds:
            raise SpecError("at least one seed is required")
        for x in self.eval_loads:
            if not 0.0 < float(x) < 1.0:
                raise SpecError(f"load fraction {x} outside (0, 1)")
        if self.gd_rates not in ("measured", "exact"):
            raise SpecError("gd_rates must be 'measured' or 'exact'")
        known = {f.name for f in fields(TrainerConfig)}
        bad = set(self.trainer) - known
        if bad:
            raise SpecError(f"unknown trainer options: {', '.join(sorted(bad))}")

    def resolve(self, ref: str) -> Path:
        if ref.startswith("builtin:"):
            return data_path(ref[len("builtin:"):])
        p = Path(ref)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(**self.trainer)

    @property
    def out(self) -> Path:
        p = Path(self.output_dir)
        return p if p.is_absolute() else Path(self.base_dir) / p


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from None
    if not isinstance(d, dict) or "topology" not in d:
        raise SpecError("spec must be an object with a 'topology' field")
    unknown = set(d) - {f.name for f in fields(ExperimentSpec)}
    if unknown:
        raise SpecError(f"unknown spec fields: {', '.join(sorted(unknown))}")
    d.setdefault("base_dir", str(path.parent))
    return ExperimentSpec(**d)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, team: Team, config: TrainerConfig, weight_factor: float, ti: int) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"mode": team.mode, "num_agents": team.n_agents, "ti": ti, "weight_factor": weight_factor,
            "topology": team.topology.name, "trainer": config.to_dict()}
    (d / "team.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    for k, p in enumerate(team.policies):
        pol.save_policy(d / f"agent_{k}.npz", p, team.pconfig, {"agent": k})


def load_checkpoint(directory) -> tuple:
    """(mode, policies, PolicyConfig, TrainerConfig, meta)."""
    d = Path(directory)
    meta = json.loads((d / "team.json").read_text())
    policies, pconf = [], None
    for k in range(meta["num_agents"]):
        params, cfg, _ = pol.load_policy(d / f"agent_{k}.npz")
        f = params.sizes[0]
        if f != obs_dim(cfg.history):
            raise ValueError(f"agent {k}: checkpoint feature length {f} does not match history {cfg.history}")
        if pconf is not None and cfg != pconf:
            raise ValueError(f"agent {k}: policy settings differ from agent 0")
        pconf = cfg
        policies.append(params)
    return meta["mode"], policies, pconf, TrainerConfig(**meta["trainer"]), meta


def team_from_checkpoint(directory, topology: Topology) -> tuple:
    mode, policies, pconf, config, meta = load_checkpoint(directory)
    team = Team(mode, topology, policies, pconf, config.chi, config.queue_threshold,
                config.queue_ref, config.step_duration)
    return team, config, meta


def evaluate_policy(checkpoint, topology: Topology, load: float, episodes: int, seed: int) -> dict:
    """Noise-free evaluation of a saved team; the checkpoint is only read."""
    team, config, meta = team_from_checkpoint(checkpoint, topology)
    rows = evaluate_team(team, topology, config, load, episodes, seed, meta["weight_factor"])
    return {"rows": rows, **aggregate(rows)}


def aggregate(rows: list) -> dict:
    rts = np.array([r["mean_rt"] for r in rows])
    util = np.mean([r["utilization"] for r in rows], axis=0)
    return {"mean_rt": float(rts.mean()), "median_rt": float(np.mean([r["median_rt"] for r in rows])),
            "p95_rt": float(np.mean([r["p95_rt"] for r in rows])), "utilization": [float(u) for u in util]}


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows: list, columns: list | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


EPISODE_COLUMNS = ["seed", "topology", "load", "episode", "responses", "mean_rt", "median_rt", "p95_rt",
                   "utilization", "unstable"]


def train_seed(spec: ExperimentSpec, seed: int, out_dir=None) -> dict:
    """Train one seed of a learned mode and write its training artefacts."""
    topology = load_topology(spec.resolve(spec.topology))
    config = spec.trainer_config()
    out = Path(out_dir) if out_dir is not None else spec.out / f"seed{seed}"

    result = train(config, topology, spec.mode, seed)
    team = result.team
    final = [p.copy() for p in team.policies]
    team.policies[:] = result.initial_policies
    save_checkpoint(out / "checkpoint_ti0", team, config, result.weight_factor, 0)
    team.policies[:] = final
    save_checkpoint(out / "checkpoint", team, config, result.weight_factor, config.iterations)
    write_csv(out / "metrics.csv", result.metrics)
    write_csv(out / "training_eval.csv", result.evaluations,
              ["ti", "load", "episode", "responses", "mean_rt", "median_rt", "p95_rt", "utilization", "unstable"])
    return {"result": result, "dir": out}


def _run_seed(spec: ExperimentSpec, seed: int) -> list:
    topology = load_topology(spec.resolve(spec.topology))
    config = spec.trainer_config()
    targets = [topology]
    if spec.transfer_topology:
        targets.append(load_topology(spec.resolve(spec.transfer_topology)))
    rows = []
    if spec.mode in MODES:
        info = train_seed(spec, seed)
        for top in targets:
            team, cfg, meta = team_from_checkpoint(info["dir"] / "checkpoint", top)
            for load in spec.eval_loads:
                for r in evaluate_team(team, top, cfg, float(load), spec.eval_episodes, seed, meta["weight_factor"]):
                    rows.append({"seed": seed, "topology": top.name, **r})
    else:
        for top in targets:
            for load in spec.eval_loads:
                for r in evaluate_baseline(spec.mode, top, config, float(load), spec.eval_episodes, seed,
                                           spec.gd_rates):
                    rows.append({"seed": seed, "topology": top.name, **r})
    return rows


def summarize(rows: list) -> list:
    """Per-(topology, load, seed) means over episodes, then seed=all mean and std over seeds."""
    out = []
    keys = sorted({(r["topology"], float(r["load"])) for r in rows})
    for top, load in keys:
        cell = [r for r in rows if r["topology"] == top and float(r["load"]) == load]
        seeds = sorted({int(r["seed"]) for r in cell})
        per_seed = []
        for s in seeds:
            rt = float(np.mean([float(r["mean_rt"]) for r in cell if int(r["seed"]) == s]))
            per_seed.append(rt)
            out.append({"topology": top, "load": load, "seed": s, "mean_rt": rt, "std_rt": 0.0})
        out.append({"topology": top, "load": load, "seed": "all", "mean_rt": float(np.mean(per_seed)),
                    "std_rt": float(np.std(per_seed))})
    return out


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_experiment(spec: ExperimentSpec) -> dict:
    seeds = [int(s) for s in spec.seeds]
    n = min(workers(), len(seeds))
    if n > 1:
        with ProcessPoolExecutor(n) as pool:
            per_seed = list(pool.map(_run_seed, [spec] * len(seeds), seeds))
    else:
        per_seed = [_run_seed(spec, s) for s in seeds]
    rows = [r for chunk in per_seed for r in chunk]
    summary = summarize(rows)
    out = spec.out
    write_csv(out / "episodes.csv", rows, EPISODE_COLUMNS)
    write_csv(out / "summary.csv", summary, ["topology", "load", "seed", "mean_rt", "std_rt"])
    return {"episodes": rows, "summary": summary, "dir": out}
