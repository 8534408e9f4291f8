"""Multi-agent PPO with a centralized critic, plus the SA-PPO-MA and Central variants.

MAPPO
    one policy per switch, one critic V(s_t) on the global state trained on
    the joint reward sum_n r_n; every agent uses the same advantage.
SA_PPO_MA
    one policy and one critic per switch; each critic sees only its agent's
    concatenated observations and regresses on that agent's own reward.
CENTRAL
    a single agent placed at the switch with least mean latency to the
    controllers dispatches for the whole plane; requests detour through it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels, nn
from . import policy as pol
from .baselines import cwrr_probabilities, gd_dispatch, random_probabilities
from .dispatcher import build_candidates, default_queue_threshold, map_to_probabilities
from .sim import SimConfig, Simulator
from .topology import (FeatureScales, Topology, WorkloadSpec, central_observation_matrix,
                       obs_dim, observation_matrix, state_dim)

log = logging.getLogger(__name__)

MODES = ("MAPPO", "SA_PPO_MA", "CENTRAL")
ADVANTAGE_NORMS = ("iteration", "episode", "none")


@dataclass
class TrainerConfig:
    gamma: float = 0.9
    gae_lambda: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    value_lr: float = 3e-4
    minibatch: int = 40
    epochs: int = 8
    iterations: int = 100
    loads: tuple = (0.5, 0.8)
    steps_per_episode: int = 60
    step_duration: float = 1.0
    warmup: float = 30.0
    sigma: float = 0.01
    history: int = 3
    hidden: tuple = (64, 64)
    advantage_norm: str = "episode"  # "episode", "iteration" or "none"
    reward_scale: float | None = None  # None: 1 / (weight_factor * mean requests per step)
    weight_factor: float | None = None  # None: CWRR mean response time at 50% load
    chi: int | None = None  # None: all controllers
    queue_threshold: float | None = None  # None: default_queue_threshold
    queue_ref: float = 1000.0
    beacon_interval: int = 1
    service: str = "exponential"
    eval_loads: tuple = (0.5, 0.8)
    eval_episodes: int = 1
    eval_every: int = 0  # 0: evaluate only before training and at the end

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.advantage_norm not in ADVANTAGE_NORMS:
            raise ValueError(f"advantage_norm must be one of {', '.join(ADVANTAGE_NORMS)}")
        self.loads = tuple(self.loads)
        self.eval_loads = tuple(self.eval_loads)
        self.hidden = tuple(self.hidden)

    def sim_config(self, trace=False) -> SimConfig:
        return SimConfig(step_duration=self.step_duration, history=self.history,
                         service=self.service, beacon_interval=self.beacon_interval, trace=trace)

    def to_dict(self) -> dict:
        return asdict(self)


def episode_seed(seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *map(int, key)])


# ---------------------------------------------------------------------------
# the acting side: who observes what and how actions become dispatch matrices


def central_site(topology: Topology) -> int:
    """Switch with the least mean latency to all controllers."""
    return int(np.argmin(topology.latency.mean(axis=0)))


def central_path_latency(topology: Topology, site: int) -> np.ndarray:
    if topology.switch_latency is None:
        raise ValueError("CENTRAL mode needs switch_latency or switch_coords in the topology")
    return topology.switch_latency[:, site][None, :] + topology.latency[:, site][:, None]


class Team:
    """Policies of one training mode bound to a topology."""

    def __init__(self, mode: str, topology: Topology, policies: list, pconfig: pol.PolicyConfig,
                 chi=None, queue_threshold=None, queue_ref=1000.0, step_duration=1.0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.policies = policies
        self.pconfig = pconfig
        self.chi = chi
        self.queue_threshold = queue_threshold
        self.queue_ref = queue_ref
        self.step_duration = step_duration
        self.bind(topology)

    def bind(self, topology: Topology) -> None:
        n_agents = 1 if self.mode == "CENTRAL" else topology.num_switches
        if len(self.policies) != n_agents:
            raise ValueError(f"{self.mode} needs {n_agents} policies, have {len(self.policies)}")
        self.topology = topology
        self.scales = FeatureScales.for_topology(topology, self.step_duration, self.queue_ref)
        if self.mode == "CENTRAL":
            self.site = central_site(topology)
            self.path_latency = central_path_latency(topology, self.site)
            self.agent_latency = topology.latency[:, [self.site]]
        else:
            self.site = None
            self.path_latency = topology.latency
            self.agent_latency = topology.latency

    @property
    def n_agents(self) -> int:
        return len(self.policies)

    def observations(self, tel) -> np.ndarray:
        if self.mode == "CENTRAL":
            z = central_observation_matrix(self.topology, tel, self.scales, self.agent_latency[:, 0])
            return z[None]
        return np.stack([observation_matrix(self.topology, n, tel, self.scales)
                         for n in range(self.topology.num_switches)])

    def act(self, obs, rng, explore: bool):
        cfg = replace(self.pconfig, explore=explore)
        acts = [pol.act(p, z, cfg, rng) for p, z in zip(self.policies, obs)]
        a = np.stack([x.priorities for x in acts])
        mu = np.stack([x.means for x in acts])
        return a, mu

    def dispatch(self, actions, tel, total_rate: float) -> np.ndarray:
        top = self.topology
        chi = self.chi or top.num_controllers
        thr = self.queue_threshold
        if thr is None:
            thr = default_queue_threshold(top, total_rate, self.step_duration)
        rows = [map_to_probabilities(a, build_candidates(self.agent_latency[:, k], tel.queue_lengths, chi, thr))
                for k, a in enumerate(actions)]
        if self.mode == "CENTRAL":
            return np.tile(rows[0], (top.num_switches, 1))
        return np.stack(rows)


def global_state_vector(topology: Topology, tel, scales: FeatureScales) -> np.ndarray:
    return np.concatenate([
        tel.arrival_history.sum(axis=1) / scales.rate,
        topology.capacities / scales.rate,
        tel.queue_lengths / scales.queue,
        topology.latency.ravel() / scales.latency,
    ])


# ---------------------------------------------------------------------------
# weight factor


def calibrate_weight_factor(topology: Topology, config: TrainerConfig, load: float = 0.5, seed: int = 0) -> float:
    """Long-run CWRR mean response time at ``load``."""
    sim = Simulator(topology, config.sim_config())
    sim.reset_episode(WorkloadSpec.from_load(topology, load), episode_seed(seed, 99991))
    sim.warm_up(config.warmup)
    p = cwrr_probabilities(topology)
    total, count = 0.0, 0
    for _ in range(config.steps_per_episode):
        out = sim.run_step(p)
        total += out.tau_sum.sum()
        count += out.responses.sum()
    return total / count if count else 0.0


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, A, M, F)
    actions: np.ndarray  # (T, A, M)
    logp: np.ndarray  # (T, A) behaviour log-probs
    rewards: np.ndarray  # (T, N) raw per-switch rewards
    agent_rewards: np.ndarray  # (T, A) scaled rewards each agent's critic regresses on
    states: np.ndarray  # (T, S)
    next_states: np.ndarray  # (T, S)
    next_obs: np.ndarray  # (T, A, M, F)
    episode_end: np.ndarray  # (T,) bool
    loads: np.ndarray  # (T,)
    advantages: np.ndarray | None = None  # (T, A)
    targets: np.ndarray | None = None  # (T, C) one column per critic
    episodes: list = field(default_factory=list)  # per-episode summaries

    def __len__(self):
        return len(self.obs)


def _summary(taus, load, utilization, unstable=False) -> dict:
    tau = np.concatenate(taus) if taus else np.empty(0)
    has = len(tau) > 0
    return {
        "load": load,
        "responses": int(len(tau)),
        "mean_rt": float(tau.mean()) if has else float("nan"),
        "median_rt": float(np.median(tau)) if has else float("nan"),
        "p95_rt": float(np.percentile(tau, 95)) if has else float("nan"),
        "utilization": [float(u) for u in utilization],
        "unstable": bool(unstable),
    }


def run_episode(topology: Topology, config: TrainerConfig, load: float, seed, dispatcher,
                weight_factor: float = 0.0, path_latency=None, trace_path=None) -> tuple:
    """Reset, CWRR warm-up, then ``steps_per_episode`` steps driven by ``dispatcher``.

    ``dispatcher(sim, tel, step)`` returns the (N, M) dispatch matrix and may
    record whatever it needs.  Returns (summary, per-step outcomes, final telemetry).
    """
    sim = Simulator(topology, config.sim_config(trace=trace_path is not None), weight_factor, path_latency)
    workload = WorkloadSpec.from_load(topology, load)
    sim.reset_episode(workload, seed)
    sim.warm_up(config.warmup)
    busy0 = sim.busy_time.copy()
    outcomes = []
    unstable = False
    limit = 10.0 * topology.capacities  # ten seconds of backlog
    for t in range(config.steps_per_episode):
        probs = dispatcher(sim, sim.telemetry(), t)
        out = sim.run_step(probs)
        outcomes.append(out)
        unstable |= bool(np.any(out.queue_lengths > limit))
    span = config.steps_per_episode * config.step_duration
    util = (sim.busy_time - busy0) / span
    if trace_path is not None:
        sim.dump_trace(trace_path)
    return _summary([o.tau for o in outcomes], load, util, unstable), outcomes, sim.telemetry()


def collect_rollout(team: Team, topology: Topology, config: TrainerConfig, weight_factor: float,
                    reward_scale: float, seed: int, iteration: int) -> RolloutBuffer:
    rec = {k: [] for k in ("obs", "actions", "logp", "states", "next_states", "next_obs", "loads")}
    rewards, ends, episodes = [], [], []
    sigma = team.pconfig.sigma
    for j, load in enumerate(config.loads):
        rng = np.random.default_rng(episode_seed(seed, iteration, j, 1))
        total_rate = load * topology.total_capacity
        steps = []

        def dispatcher(sim, tel, t):
            z = team.observations(tel)
            a, mu = team.act(z, rng, explore=True)
            logp = np.array([pol._gauss_logpdf(a[k], mu[k], sigma) for k in range(team.n_agents)])
            steps.append((z, a, logp, global_state_vector(topology, tel, team.scales)))
            return team.dispatch(a, tel, total_rate)

        summary, outcomes, last_tel = run_episode(topology, config, load, episode_seed(seed, iteration, j),
                                                  dispatcher, weight_factor, team.path_latency)
        # the state after step t is the state before step t+1
        last_z = team.observations(last_tel)
        last_s = global_state_vector(topology, last_tel, team.scales)
        for t, (z, a, logp, s) in enumerate(steps):
            rec["obs"].append(z)
            rec["actions"].append(a)
            rec["logp"].append(logp)
            rec["states"].append(s)
            rec["loads"].append(load)
            if t + 1 < len(steps):
                rec["next_states"].append(steps[t + 1][3])
                rec["next_obs"].append(steps[t + 1][0])
            else:
                rec["next_states"].append(last_s)
                rec["next_obs"].append(last_z)
            rewards.append(outcomes[t].rewards)
            ends.append(t + 1 == len(steps))
        summary["reward_sum"] = float(sum(o.rewards.sum() for o in outcomes))
        episodes.append(summary)
    rewards = np.array(rewards)
    if team.mode == "SA_PPO_MA":
        agent_rewards = rewards * reward_scale
    else:
        agent_rewards = np.tile(rewards.sum(axis=1, keepdims=True) * reward_scale, (1, team.n_agents))
    return RolloutBuffer(
        obs=np.array(rec["obs"]), actions=np.array(rec["actions"]), logp=np.array(rec["logp"]),
        rewards=rewards, agent_rewards=agent_rewards, states=np.array(rec["states"]),
        next_states=np.array(rec["next_states"]), next_obs=np.array(rec["next_obs"]),
        episode_end=np.array(ends), loads=np.array(rec["loads"]), episodes=episodes)


# ---------------------------------------------------------------------------
# advantages and critic


def compute_gae(rewards, values, next_values, episode_end, gamma: float, lam: float):
    """(advantages, value targets) for one reward stream; see kernels.gae."""
    adv = kernels.gae(rewards, values, next_values, episode_end, gamma, lam)
    return adv, adv + np.asarray(values, dtype=float)


def normalize(x):
    x = np.asarray(x, dtype=float)
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 1e-12 else 1.0)


def normalize_advantages(adv, episode_end, scope: str) -> np.ndarray:
    """Standardize over the whole batch ("iteration"), within each episode, or not at all."""
    adv = np.asarray(adv, dtype=float)
    if scope == "none":
        return adv.copy()
    if scope == "iteration":
        return normalize(adv)
    out = np.empty_like(adv)
    start = 0
    for i in np.flatnonzero(np.asarray(episode_end, dtype=bool)):
        out[start:i + 1] = normalize(adv[start:i + 1])
        start = i + 1
    if start < len(adv):
        out[start:] = normalize(adv[start:])
    return out


def bellman_loss(values, rewards, next_values, gamma: float) -> float:
    """Mean squared one-step Bellman residual V(s) - r - gamma V(s')."""
    r = np.asarray(values) - np.asarray(rewards) - gamma * np.asarray(next_values)
    return float(np.mean(r * r))


def update_value(critic: nn.MlpParams, inputs, targets, config: TrainerConfig, rng) -> float:
    """Minibatch Adam regression of critic(inputs) onto targets; returns final full-batch MSE."""
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    n = len(x)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for i in range(0, n, config.minibatch):
            idx = perm[i:i + config.minibatch]
            err = nn.forward(critic, x[idx]) - y[idx]
            loss = float(np.mean(err * err))
            if not math.isfinite(loss):
                raise FloatingPointError("non-finite value loss")
            g = nn.backward_params(critic, x[idx], 2.0 * err / len(idx))
            nn.adam_update(critic, g, config.value_lr)
    err = nn.forward(critic, x) - y
    return float(np.mean(err * err))


# ---------------------------------------------------------------------------
# policy


def clip_mask(ratio, adv, clip: float) -> np.ndarray:
    """Samples whose surrogate gradient is not clipped away."""
    return ((adv > 0) & (ratio < 1.0 + clip)) | ((adv < 0) & (ratio > 1.0 - clip))


def surrogate_objective(params, obs, actions, logp_old, adv, clip: float, sigma: float) -> float:
    """Clipped surrogate mean(min(rho A, clip(rho, 1-eps, 1+eps) A))."""
    ratio = np.exp(pol.batch_log_prob(params, obs, actions, sigma) - logp_old)
    return float(np.mean(np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)))


def surrogate_gradient(params, obs, actions, logp_old, adv, clip: float, sigma: float):
    """Gradient of ``surrogate_objective``: (A / pi_old) grad pi where unclipped, else 0.

    Returns (gradient, mask, number of skipped non-finite samples).
    """
    obs = np.asarray(obs, dtype=float)
    adv = np.asarray(adv, dtype=float)
    mu = pol.batch_means(params, obs)
    logp = pol._gauss_logpdf(np.asarray(actions, dtype=float), mu, sigma)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(logp - logp_old)
    finite = np.isfinite(ratio)
    mask = clip_mask(np.where(finite, ratio, 1.0), adv, clip) & finite
    w = np.where(mask, adv * np.where(finite, ratio, 0.0), 0.0) / len(obs)
    g = pol.weighted_logpi_gradient(params, obs, actions, w, sigma, mu=mu)
    return g, mask, int((~finite).sum())


def update_policy(params: nn.MlpParams, obs, actions, logp_old, adv, config: TrainerConfig, rng) -> dict:
    """PPO epochs of clipped-surrogate ascent for one agent.  Returns diagnostics."""
    n = len(obs)
    clipped = total = skipped = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for i in range(0, n, config.minibatch):
            idx = perm[i:i + config.minibatch]
            g, mask, bad = surrogate_gradient(params, obs[idx], actions[idx], logp_old[idx], adv[idx],
                                              config.clip, config.sigma)
            skipped += bad
            total += len(idx)
            clipped += int(np.count_nonzero(~mask & (adv[idx] != 0)))
            if not mask.any():
                continue
            nn.adam_update(params, g.scaled(-1.0), config.lr)
    if skipped:
        log.warning("skipped %d samples with non-finite importance ratios", skipped)
    return {"clip_fraction": clipped / max(total, 1), "skipped": skipped}


# ---------------------------------------------------------------------------
# training driver


@dataclass
class TrainResult:
    mode: str
    team: Team
    critics: list
    metrics: list  # one dict per TI
    evaluations: list  # rows: ti, load, mean_rt, ...
    weight_factor: float
    reward_scale: float
    config: TrainerConfig
    initial_policies: list = field(default_factory=list)


def make_team(mode: str, topology: Topology, config: TrainerConfig, rng) -> Team:
    n_agents = 1 if mode == "CENTRAL" else topology.num_switches
    f = obs_dim(config.history)
    policies = [pol.init_policy(f, rng, config.hidden) for _ in range(n_agents)]
    return Team(mode, topology, policies, pol.PolicyConfig(config.sigma, True, config.history),
                config.chi, config.queue_threshold, config.queue_ref, config.step_duration)


def make_critics(mode: str, topology: Topology, config: TrainerConfig, rng) -> list:
    if mode == "SA_PPO_MA":
        d = topology.num_controllers * obs_dim(config.history)
        return [nn.init_mlp([d, *config.hidden, 1], rng, out_gain=1.0) for _ in range(topology.num_switches)]
    return [nn.init_mlp([state_dim(topology, config.history), *config.hidden, 1], rng, out_gain=1.0)]


def team_dispatcher(team: Team, load: float, explore: bool = False, rng=None):
    total_rate = load * team.topology.total_capacity

    def dispatcher(sim, tel, t):
        a, _ = team.act(team.observations(tel), rng, explore=explore)
        return team.dispatch(a, tel, total_rate)
    return dispatcher


def evaluate_team(team: Team, topology: Topology, config: TrainerConfig, load: float, episodes: int,
                  seed: int, weight_factor: float = 0.0) -> list:
    """Noise-free episodes; one summary dict per episode."""
    if team.topology is not topology:
        team.bind(topology)
    out = []
    for e in range(episodes):
        s, _, _ = run_episode(topology, config, load, episode_seed(seed, 7, e), team_dispatcher(team, load),
                           weight_factor, team.path_latency)
        s["episode"] = e
        out.append(s)
    return out


def _critic_io(mode, buf: RolloutBuffer):
    """(inputs, next_inputs) per critic."""
    if mode == "SA_PPO_MA":
        t, a = buf.obs.shape[:2]
        return [(buf.obs[:, k].reshape(t, -1), buf.next_obs[:, k].reshape(t, -1)) for k in range(a)]
    return [(buf.states, buf.next_states)]


def train(config: TrainerConfig, topology: Topology, mode: str = "MAPPO", seed: int = 0,
          on_iteration=None) -> TrainResult:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    init_rng = np.random.default_rng(episode_seed(seed, 0))
    team = make_team(mode, topology, config, init_rng)
    critics = make_critics(mode, topology, config, init_rng)
    wf = config.weight_factor
    if wf is None:
        wf = calibrate_weight_factor(topology, config)
    scale = config.reward_scale
    if scale is None:
        per_step = np.mean(config.loads) * topology.total_capacity * config.step_duration
        scale = 1.0 / (wf * per_step) if wf > 0 and per_step > 0 else 1.0
    result = TrainResult(mode, team, critics, [], [], wf, scale, config,
                         [p.copy() for p in team.policies])

    def evaluate(ti):
        for load in config.eval_loads:
            for row in evaluate_team(team, topology, config, load, config.eval_episodes, seed, wf):
                result.evaluations.append({"ti": ti, **row})

    evaluate(0)
    for ti in range(1, config.iterations + 1):
        upd_rng = np.random.default_rng(episode_seed(seed, ti, 2))
        buf = collect_rollout(team, topology, config, wf, scale, seed, ti)
        io = _critic_io(mode, buf)
        adv_cols, tgt_cols = [], []
        for k, (x, x_next) in enumerate(io):
            r = buf.agent_rewards[:, k]
            v = nn.forward(critics[k], x)
            v_next = nn.forward(critics[k], x_next)
            adv, tgt = compute_gae(r, v, v_next, buf.episode_end, config.gamma, config.gae_lambda)
            adv_cols.append(normalize_advantages(adv, buf.episode_end, config.advantage_norm))
            tgt_cols.append(tgt)
        buf.targets = np.column_stack(tgt_cols)
        if mode == "SA_PPO_MA":
            buf.advantages = np.column_stack(adv_cols)
        else:
            buf.advantages = np.tile(adv_cols[0][:, None], (1, team.n_agents))
        vloss = [update_value(critics[k], io[k][0], buf.targets[:, k], config, upd_rng) for k in range(len(io))]
        stats = [update_policy(team.policies[k], buf.obs[:, k], buf.actions[:, k], buf.logp[:, k],
                               buf.advantages[:, k], config, upd_rng) for k in range(team.n_agents)]
        row = {"ti": ti, "value_loss": float(np.mean(vloss)),
               "clip_fraction": float(np.mean([s["clip_fraction"] for s in stats]))}
        for ep in buf.episodes:
            tag = f"{ep['load']:g}"
            row[f"train_mean_rt@{tag}"] = ep["mean_rt"]
            row[f"train_p95_rt@{tag}"] = ep["p95_rt"]
            row[f"reward_sum@{tag}"] = ep["reward_sum"]
            for c, u in enumerate(ep["utilization"]):
                row[f"util{c}@{tag}"] = u
        result.metrics.append(row)
        if config.eval_every and ti % config.eval_every == 0 and ti != config.iterations:
            evaluate(ti)
        if on_iteration is not None:
            on_iteration(ti, row)
    if config.iterations > 0:
        evaluate(config.iterations)
    return result


# ---------------------------------------------------------------------------
# baseline dispatchers for evaluation


def baseline_dispatcher(kind: str, topology: Topology, load: float, gd_rates: str = "exact"):
    if kind == "CWRR":
        p = cwrr_probabilities(topology)
        return lambda sim, tel, t: p
    if kind == "RANDOM":
        p = random_probabilities(topology)
        return lambda sim, tel, t: p
    if kind == "GD":
        exact = WorkloadSpec.from_load(topology, load).arrival_rates
        if gd_rates == "exact":
            p = gd_dispatch(topology, exact).probs
            return lambda sim, tel, t: p

        def measured(sim, tel, t):
            est = tel.arrival_history[-1]
            if est.sum() <= 0 or est.sum() >= topology.total_capacity:
                return cwrr_probabilities(topology)
            return gd_dispatch(topology, est).probs
        return measured
    raise ValueError(f"unknown baseline {kind!r}")


def evaluate_baseline(kind: str, topology: Topology, config: TrainerConfig, load: float, episodes: int,
                      seed: int, gd_rates: str = "exact") -> list:
    out = []
    for e in range(episodes):
        s, _, _ = run_episode(topology, config, load, episode_seed(seed, 7, e),
                           baseline_dispatcher(kind, topology, load, gd_rates))
        s["episode"] = e
        out.append(s)
    return out
