"""Discrete-event simulation of the SDN control plane.

Requests are generated at switches as Poisson streams, dispatched i.i.d.
according to per-switch probability vectors, travel ``D[m, n]`` to their
controller, wait in a FIFO single-server queue, are served, and the response
travels ``D[m, n]`` back.  All four request events (switch arrival, controller
arrival, service completion, response arrival) have exactly determined times:
each controller is a FIFO single server, so departures follow the Lindley
recursion once controller arrivals are ordered.  The simulator therefore
advances step by step, settling every controller arrival that happens at or
before the step boundary (no later-generated request can precede it) and
carrying the rest over.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .topology import TelemetrySnapshot, Topology, WorkloadSpec

SERVICE_KINDS = ("exponential", "deterministic")

# event kinds, in tie-break priority order (boundary last)
SWITCH_ARRIVAL, CONTROLLER_ARRIVAL, SERVICE_COMPLETION, RESPONSE_ARRIVAL, STEP_BOUNDARY = range(5)
EVENT_NAMES = ("RequestArrivalAtSwitch", "RequestArrivalAtController", "ServiceCompletion",
               "ResponseArrivalAtSwitch", "StepBoundary")


@dataclass
class SimConfig:
    step_duration: float = 1.0
    history: int = 3
    service: str = "exponential"
    beacon_interval: int = 1  # steps between controller status beacons
    trace: bool = False

    def __post_init__(self):
        if self.service not in SERVICE_KINDS:
            raise ValueError(f"unknown service distribution {self.service!r}")
        if self.step_duration <= 0:
            raise ValueError("step_duration must be positive")
        if self.beacon_interval < 1:
            raise ValueError("beacon_interval must be >= 1")


@dataclass
class StepOutcome:
    responses: np.ndarray  # (N,) X_t^n
    tau_sum: np.ndarray  # (N,) seconds
    rewards: np.ndarray  # (N,)
    tau: np.ndarray  # flat response times of counted responses
    tau_switch: np.ndarray  # switch index of each entry of ``tau``
    arrivals: np.ndarray  # (N,) requests generated this step
    sent: np.ndarray  # (N, M)
    received: np.ndarray  # (M,) requests reaching each controller this step
    queue_lengths: np.ndarray  # (M,) at the step boundary
    utilization: np.ndarray  # (M,) busy fraction within the step
    duration: float

    @property
    def response_times(self) -> list:
        n = len(self.responses)
        order = np.argsort(self.tau_switch, kind="stable")
        return np.split(self.tau[order], np.cumsum(np.bincount(self.tau_switch, minlength=n))[:-1])


def compute_rewards(weight_factor: float, responses, tau_sum) -> np.ndarray:
    """r = weight_factor * X - sum(tau), per agent."""
    return weight_factor * np.asarray(responses, dtype=float) - np.asarray(tau_sum, dtype=float)


@dataclass
class _Batch:
    """Column store of requests; all arrays share the same length."""
    arr: np.ndarray = field(default_factory=lambda: np.empty(0))
    svc: np.ndarray = field(default_factory=lambda: np.empty(0))
    gen: np.ndarray = field(default_factory=lambda: np.empty(0))
    sw: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rid: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    warm: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    def __len__(self):
        return len(self.arr)

    def take(self, idx) -> "_Batch":
        return _Batch(self.arr[idx], self.svc[idx], self.gen[idx], self.sw[idx], self.rid[idx], self.warm[idx])

    @staticmethod
    def cat(a: "_Batch", b: "_Batch") -> "_Batch":
        if not len(a):
            return b
        if not len(b):
            return a
        return _Batch(*(np.concatenate([x, y]) for x, y in
                        zip((a.arr, a.svc, a.gen, a.sw, a.rid, a.warm),
                            (b.arr, b.svc, b.gen, b.sw, b.rid, b.warm))))


class Simulator:
    """One independent episode simulator; owns its RNG, single-threaded."""

    def __init__(self, topology: Topology, config: SimConfig | None = None,
                 weight_factor: float = 0.0, path_latency=None):
        self.topology = topology
        self.config = config or SimConfig()
        self.weight_factor = float(weight_factor)
        lat = topology.latency if path_latency is None else np.asarray(path_latency, dtype=float)
        if lat.shape != topology.latency.shape:
            raise ValueError("path_latency must be M x N")
        self.latency = lat
        self.workload = WorkloadSpec(np.zeros(topology.num_switches), 0.0)
        self.reset_episode(self.workload, 0)

    # -- episode control ----------------------------------------------------

    def reset_episode(self, workload: WorkloadSpec, seed) -> None:
        top = self.topology
        n, m = top.num_switches, top.num_controllers
        rates = np.asarray(workload.arrival_rates, dtype=float)
        if rates.shape != (n,) or np.any(rates < 0):
            raise ValueError("arrival_rates must be N non-negative numbers")
        self.workload = workload
        self.rng = np.random.default_rng(seed)
        self.t = 0.0
        self.steps = 0
        self._next_id = 0
        self._pending = [_Batch() for _ in range(m)]
        self._busy_until = np.zeros(m)
        self._inflight_start = [np.empty(0) for _ in range(m)]
        self._inflight_dep = [np.empty(0) for _ in range(m)]
        self._out = _Batch()  # processed, response not yet delivered; ``arr`` holds receive time
        self.delivered = 0
        self.generated = 0
        h = self.config.history
        self._hist = np.zeros((h, n))
        self._hist_steps = 0
        self._beacon = np.zeros(m)
        self._sent_prev = np.zeros((n, m))
        self._recv_prev = np.zeros(m)
        self._trace: list = []
        self.busy_time = np.zeros(m)

    def warm_up(self, duration: float, probs=None) -> None:
        """Run ``duration`` seconds under ``probs`` (CWRR when None); nothing is rewarded.

        Responses to warm-up requests are never counted, even if they arrive later.
        """
        if duration < 0:
            raise ValueError("negative duration")
        if probs is None:
            from .baselines import cwrr_probabilities
            probs = cwrr_probabilities(self.topology)
        left = float(duration)
        while left > 1e-12:
            dt = min(self.config.step_duration, left)
            self.run_step(probs, dt, warm=True)
            left -= dt

    # -- core ---------------------------------------------------------------

    def run_step(self, dispatch_probs, step_duration: float | None = None, warm: bool = False) -> StepOutcome:
        top = self.topology
        n, m = top.num_switches, top.num_controllers
        dt = self.config.step_duration if step_duration is None else float(step_duration)
        if dt < 0:
            raise ValueError("negative duration")
        probs = np.asarray(dispatch_probs, dtype=float)
        if probs.shape != (n, m):
            raise ValueError(f"dispatch_probs must have shape ({n}, {m})")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("dispatch probabilities are not normalized")
        t0, t1 = self.t, self.t + dt
        rng = self.rng

        # generation at switches
        counts = rng.poisson(self.workload.arrival_rates * dt)
        k = int(counts.sum())
        sw = np.repeat(np.arange(n), counts)
        gen = t0 + rng.random(k) * dt
        u = rng.random(k)
        cdf = np.cumsum(probs, axis=1)
        last = m - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
        cdf[np.arange(m)[None, :] >= last[:, None]] = 1.0
        ctl = (u[:, None] >= cdf[sw]).sum(axis=1)
        if self.config.service == "exponential":
            svc = rng.standard_exponential(k) / top.capacities[ctl]
        else:
            svc = 1.0 / top.capacities[ctl]
        rid = np.arange(self._next_id, self._next_id + k)
        self._next_id += k
        self.generated += k
        arr = gen + self.latency[ctl, sw]
        new = _Batch(arr, svc, gen, sw, rid, np.full(k, warm))
        if self.config.trace:
            self._trace.extend(zip(gen.tolist(), [SWITCH_ARRIVAL] * k, sw.tolist(), ctl.tolist(), rid.tolist()))

        by_ctl = np.argsort(ctl, kind="stable")
        splits = np.cumsum(np.bincount(ctl, minlength=m))[:-1]
        received = np.zeros(m)
        queue = np.zeros(m)
        util = np.zeros(m)
        settled = []
        for c, idx in enumerate(np.split(by_ctl, splits)):
            pool = _Batch.cat(self._pending[c], new.take(idx))
            # arrivals at the boundary are settled before it (boundary sorts last)
            due = pool.arr <= t1
            batch = pool.take(np.flatnonzero(due))
            self._pending[c] = pool.take(np.flatnonzero(~due))
            order = np.lexsort((batch.rid, batch.arr))
            batch = batch.take(order)
            dep = kernels.fifo_departures(batch.arr, batch.svc, self._busy_until[c])
            if len(dep):
                self._busy_until[c] = dep[-1]
            received[c] = len(batch)
            start = np.concatenate([self._inflight_start[c], dep - batch.svc])
            end = np.concatenate([self._inflight_dep[c], dep])
            busy = np.clip(np.minimum(end, t1) - np.maximum(start, t0), 0.0, None).sum()
            util[c] = busy / dt if dt > 0 else 0.0
            self.busy_time[c] += busy
            keep = end > t1
            self._inflight_start[c], self._inflight_dep[c] = start[keep], end[keep]
            queue[c] = keep.sum()
            recv = dep + self.latency[c, batch.sw]
            settled.append(_Batch(recv, batch.svc, batch.gen, batch.sw, batch.rid, batch.warm))
            if self.config.trace and len(batch):
                cc = [c] * len(batch)
                sws, rids = batch.sw.tolist(), batch.rid.tolist()
                self._trace.extend(zip(batch.arr.tolist(), [CONTROLLER_ARRIVAL] * len(batch), sws, cc, rids))
                self._trace.extend(zip(dep.tolist(), [SERVICE_COMPLETION] * len(batch), sws, cc, rids))
                self._trace.extend(zip(recv.tolist(), [RESPONSE_ARRIVAL] * len(batch), sws, cc, rids))
        for b in settled:
            self._out = _Batch.cat(self._out, b)

        # responses received by the boundary
        done = self._out.arr <= t1
        got = self._out.take(np.flatnonzero(done))
        self._out = self._out.take(np.flatnonzero(~done))
        self.delivered += len(got)
        count = ~got.warm
        tau = (got.arr - got.gen)[count]
        tau_sw = got.sw[count]
        responses = np.bincount(tau_sw, minlength=n).astype(float)
        tau_sum = np.bincount(tau_sw, weights=tau, minlength=n)
        rewards = compute_rewards(self.weight_factor, responses, tau_sum)

        sent = np.zeros((n, m))
        np.add.at(sent, (sw, ctl), 1.0)
        self.t = t1
        self.steps += 1
        if self.config.trace:
            self._trace.append((t1, STEP_BOUNDARY, -1, -1, -1))
        self._hist = np.vstack([self._hist[1:], counts / dt if dt > 0 else np.zeros(n)])
        self._hist_steps += 1
        self._sent_prev = sent
        self._recv_prev = received
        if self.steps % self.config.beacon_interval == 0:
            self._beacon = queue.copy()
        return StepOutcome(responses, tau_sum, rewards, tau, tau_sw, counts.astype(float), sent,
                           received, queue, util, dt)

    # -- inspection ---------------------------------------------------------

    def telemetry(self) -> TelemetrySnapshot:
        return TelemetrySnapshot(
            arrival_history=self._hist.copy(),
            queue_lengths=self._beacon.copy(),
            sent_prev=self._sent_prev.copy(),
            recv_prev=self._recv_prev.copy(),
            steps_recorded=self._hist_steps,
        )

    def queue_lengths(self) -> np.ndarray:
        """Requests queued or in service at each controller right now (not stale)."""
        return np.array([np.count_nonzero(d > self.t) for d in self._inflight_dep], dtype=float)

    def census(self) -> dict:
        pending = sum(len(p) for p in self._pending)
        in_system = int(self.queue_lengths().sum())
        return {
            "generated": self.generated,
            "to_controller": pending,
            "at_controller": in_system,
            "to_switch": len(self._out) - in_system,
            "delivered": self.delivered,
        }

    def trace_rows(self) -> list:
        """Recorded events sorted by (time, kind priority, request id)."""
        return sorted(self._trace, key=lambda r: (r[0], r[1], r[4]))

    def dump_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "switch", "controller", "request_id"])
            for t, kind, s, c, rid in self.trace_rows():
                w.writerow([repr(float(t)), EVENT_NAMES[kind], s, c, rid])
