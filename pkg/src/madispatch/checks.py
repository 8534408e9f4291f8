"""Self-checks exposed through the CLI: queueing validation and gradient checks."""
from __future__ import annotations

import numpy as np

from . import nn
from . import policy as pol
from .sim import SimConfig, Simulator
from .topology import Topology, WorkloadSpec


def mm1_topology(capacity: float = 10000.0) -> Topology:
    return Topology(1, 1, np.array([capacity]), np.zeros((1, 1)), name="mm1")


def mm1_sojourn(utilization: float, completions: int = 100_000, capacity: float = 10000.0,
                seed: int = 0, warmup: float = 1.0) -> dict:
    """Simulated mean sojourn of a single M/M/1 controller against 1/(alpha - lambda)."""
    top = mm1_topology(capacity)
    lam = utilization * capacity
    sim = Simulator(top, SimConfig(step_duration=1.0))
    sim.reset_episode(WorkloadSpec(np.array([lam]), utilization), np.random.SeedSequence([seed, 5]))
    sim.warm_up(warmup)
    probs = np.ones((1, 1))
    total, count = 0.0, 0
    while count < completions:
        out = sim.run_step(probs)
        total += float(out.tau_sum.sum())
        count += int(out.responses.sum())
    mean = total / count
    theory = 1.0 / (capacity - lam)
    return {"utilization": utilization, "completions": count, "mean": mean, "theory": theory,
            "rel_error": abs(mean - theory) / theory}


def rel_error(a, b, floor: float = 1e-6) -> float:
    """Worst entrywise relative error.

    Denominators are floored at ``floor`` times the largest magnitude, so
    entries that are exactly zero (e.g. the output bias under a softmax)
    are compared against finite-difference roundoff rather than divided by it.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    if a.size == 0:
        return 0.0
    scale = floor * max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), scale)))


def relu_pattern(params: nn.MlpParams, x) -> np.ndarray:
    """Signs of every hidden pre-activation for inputs ``x``."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    signs = []
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w + b
        signs.append(z > 0)
        h = np.maximum(z, 0.0)
    return np.concatenate([s.ravel() for s in signs]) if signs else np.empty(0, bool)


def finite_difference(fun, params: nn.MlpParams, h: float = 1e-4, x=None) -> np.ndarray:
    """Central differences of scalar ``fun(params)`` with respect to every parameter.

    With inputs ``x`` given, entries whose +-h probes change the ReLU pattern
    straddle a kink and come back as NaN.
    """
    theta = params.flat()
    g = np.empty_like(theta)
    work = params.copy()
    base = None if x is None else relu_pattern(params, x)
    for i in range(len(theta)):
        t = theta.copy()
        t[i] += h
        work.set_flat(t)
        up = fun(work)
        kink = base is not None and not np.array_equal(relu_pattern(work, x), base)
        t[i] -= 2 * h
        work.set_flat(t)
        g[i] = (up - fun(work)) / (2 * h)
        if kink or (base is not None and not np.array_equal(relu_pattern(work, x), base)):
            g[i] = np.nan
    return g


def gradient_check(instances: int = 100, seed: int = 0, hidden=(8, 8), history: int = 3,
                   sigma: float = 0.1) -> dict:
    """Analytic d log pi and d mu against central differences on random small instances.

    Returns the worst relative errors.  ``sigma`` only changes the scale of
    the log-likelihood gradient, not its structure.
    """
    rng = np.random.default_rng(seed)
    f = history + 5
    worst_logpi = worst_mu = 0.0
    kinks = 0
    for k in range(instances):
        m = (1, 2, 3, 5)[k % 4]
        params = pol.init_policy(f, rng, hidden)
        # larger output weights so the softmax is far from flat
        params.weights[-1] *= 100.0
        z = rng.uniform(0.0, 1.0, (m, f))
        a = pol.means(params, z) + sigma * rng.standard_normal(m)
        g = pol.policy_gradient_logpi(params, z, a, sigma).flat()
        fd = finite_difference(lambda p: pol.log_prob(p, z, a, sigma), params, x=z)
        kinks += int(np.isnan(fd).sum())
        worst_logpi = max(worst_logpi, rel_error(g, fd))
        for j, gm in enumerate(nn.softmax_mean_gradient(params, z)):
            fd = finite_difference(lambda p: pol.means(p, z)[j], params, x=z)
            worst_mu = max(worst_mu, rel_error(gm.flat(), fd))
    return {"instances": instances, "logpi_rel_error": worst_logpi, "mu_rel_error": worst_mu,
            "kink_entries": kinks}


def surrogate_check(instances: int = 10, seed: int = 0, batch: int = 40, hidden=(8, 8), history: int = 3,
                    sigma: float = 0.01, clip: float = 0.2) -> dict:
    """Minibatch clipped-surrogate gradient against central differences.

    The current parameters are a perturbed copy of the behaviour parameters,
    so ratios spread across both sides of the clip range.  Entries whose
    probes move a sample across a clip boundary or a ReLU kink are skipped.
    """
    from .trainer import clip_mask, surrogate_gradient, surrogate_objective

    rng = np.random.default_rng(seed)
    f = history + 5
    worst = 0.0
    skipped = 0
    clipped = 0
    for k in range(instances):
        m = (2, 3, 5)[k % 3]
        old = pol.init_policy(f, rng, hidden)
        old.weights[-1] *= 100.0
        obs = rng.uniform(0.0, 1.0, (batch, m, f))
        mu = pol.batch_means(old, obs)
        actions = mu + sigma * rng.standard_normal(mu.shape)
        logp_old = pol.batch_log_prob(old, obs, actions, sigma)
        adv = rng.standard_normal(batch)
        cur = old.copy()
        cur.set_flat(old.flat() + 2e-3 * rng.standard_normal(old.flat().size))
        g, mask, _ = surrogate_gradient(cur, obs, actions, logp_old, adv, clip, sigma)
        clipped += int((~mask).sum())

        def state(p):
            ratio = np.exp(pol.batch_log_prob(p, obs, actions, sigma) - logp_old)
            return clip_mask(ratio, adv, clip)

        base = state(cur)
        fd = finite_difference(lambda p: surrogate_objective(p, obs, actions, logp_old, adv, clip, sigma),
                               cur, x=obs.reshape(-1, f))
        theta = cur.flat()
        work = cur.copy()
        h = 1e-4
        for i in range(len(theta)):
            for s in (h, -h):
                t = theta.copy()
                t[i] += s
                work.set_flat(t)
                if not np.array_equal(state(work), base):
                    fd[i] = np.nan
        skipped += int(np.isnan(fd).sum())
        worst = max(worst, rel_error(g.flat(), fd))
    return {"instances": instances, "rel_error": worst, "skipped_entries": skipped, "clipped_samples": clipped}
