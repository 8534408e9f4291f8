"""Non-learned dispatching policies: CWRR, the model-based GD dispatcher, uniform random."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import Topology


def cwrr_probabilities(topology: Topology) -> np.ndarray:
    """Capacity-weighted dispatch, identical for every switch: p_m = alpha_m / sum(alpha)."""
    p = topology.capacities / topology.capacities.sum()
    return np.tile(p, (topology.num_switches, 1))


def random_probabilities(topology: Topology) -> np.ndarray:
    m = topology.num_controllers
    return np.full((topology.num_switches, m), 1.0 / m)


class DeficitRoundRobin:
    """Literal capacity-weighted rotation; used when i.i.d. sampling is not wanted.

    Each pick credits every controller with its weight and serves the one with the
    largest accumulated credit, so over ``k`` picks controller ``m`` is chosen
    ``k * w_m`` times up to a bounded error.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        self.weights = w / w.sum()
        self.credit = np.zeros_like(self.weights)

    def next(self) -> int:
        self.credit += self.weights
        i = int(np.argmax(self.credit))
        self.credit[i] -= 1.0
        return i

    def take(self, k: int) -> np.ndarray:
        return np.array([self.next() for _ in range(k)], dtype=np.int64)


# ---------------------------------------------------------------------------
# GD: projected gradient descent on an M/M/1 response-time model


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(v)
    m = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ks = np.arange(1, m + 1)
    cond = u - css / ks > 0
    rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def model_cost(topology: Topology, rates, probs) -> float:
    """Modelled mean response time (seconds) of dispatch matrix ``probs`` (N x M).

    Each controller is an M/M/1 queue with arrival rate Lambda_m = sum_n rate_n p_nm;
    a request from switch n served at m takes 2 D[m, n] + 1 / (alpha_m - Lambda_m).
    Unstable matrices cost +inf.
    """
    rates = np.asarray(rates, dtype=float)
    probs = np.asarray(probs, dtype=float)
    load = rates @ probs
    slack = topology.capacities - load
    if np.any(slack <= 0):
        return np.inf
    flow = rates[:, None] * probs
    total = float(np.sum(flow * 2.0 * topology.latency.T) + np.sum(load / slack))
    return total / rates.sum()


def model_gradient(topology: Topology, rates, probs) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    load = rates @ probs
    slack = topology.capacities - load
    per_ctl = topology.capacities / slack ** 2
    return rates[:, None] * (2.0 * topology.latency.T + per_ctl[None, :]) / rates.sum()


@dataclass
class GDResult:
    probs: np.ndarray
    cost: float
    iterations: int
    history: list = field(default_factory=list)


def gd_dispatch(topology: Topology, rates, step_size: float = 1.0, iterations: int = 500,
                tol: float = 1e-10, backtrack: float = 0.5, armijo: float = 1e-4) -> GDResult:
    """Minimize ``model_cost`` over per-switch simplices by projected gradient descent.

    Starts from CWRR (feasible whenever total rate < total capacity).  Each
    iteration backtracks from ``step_size`` until the projected step is stable
    and satisfies the Armijo condition, so costs never increase.  Stops when
    the projected-gradient step is shorter than ``tol`` or after ``iterations``.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (topology.num_switches,) or np.any(rates < 0):
        raise ValueError("rates must be N non-negative numbers")
    if rates.sum() >= topology.total_capacity:
        raise ValueError("infeasible workload: total rate reaches total capacity")
    p = cwrr_probabilities(topology)
    if rates.sum() == 0:
        return GDResult(p, 0.0, 0, [0.0])
    cost = model_cost(topology, rates, p)
    history = [cost]
    it = 0
    for it in range(1, iterations + 1):
        g = model_gradient(topology, rates, p)
        # scale-free step: normalize by the largest gradient entry
        scale = step_size / max(np.abs(g).max(), 1e-300)
        eta = scale
        moved = False
        while eta > 1e-16 * scale:
            q = project_simplex(p - eta * g)
            c = model_cost(topology, rates, q)
            if np.isfinite(c) and c <= cost - armijo * np.sum(g * (p - q)):
                moved = True
                break
            eta *= backtrack
        if not moved:
            break
        step = np.abs(q - p).max()
        p, cost = q, c
        history.append(cost)
        if step < tol:
            break
    return GDResult(p, cost, it, history)
