"""Static network description, workloads and observation/state construction.

Topology files are JSON objects::

    {
      "name": "desk-sa8",
      "num_switches": 8,
      "num_controllers": 3,
      "capacities": [6000, 7500, 9000],          # pkt/s, one per controller
      "latency": [[...N floats...], ...],        # M rows, one-way seconds
      "switch_ids": [...], "controller_ids": [...],          # optional
      "switch_latency": [[...N...], ...],                    # optional, N x N
      "switch_coords": [[lat, lon], ...],                    # optional
      "traffic_weights": [...N...]                           # optional
    }

``latency[m][n]`` is the one-way propagation delay between controller ``m``
and switch ``n``.  ``switch_latency`` is only needed by the centralized-agent
mode; when absent it is derived from ``switch_coords`` if those are given.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIBER_SPEED = 2.0e8  # m/s
EARTH_RADIUS = 6371.0e3


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    num_switches: int
    num_controllers: int
    capacities: np.ndarray  # (M,)
    latency: np.ndarray  # (M, N)
    switch_ids: tuple = ()
    controller_ids: tuple = ()
    switch_latency: np.ndarray | None = None  # (N, N)
    traffic_weights: np.ndarray | None = None  # (N,), sums to 1
    name: str = ""

    def __post_init__(self):
        n, m = self.num_switches, self.num_controllers
        if n < 1 or m < 1:
            raise TopologyError("need at least one switch and one controller")
        cap = np.asarray(self.capacities, dtype=float)
        lat = np.asarray(self.latency, dtype=float)
        if cap.shape != (m,):
            raise TopologyError(f"dimension mismatch: capacities has shape {cap.shape}, expected ({m},)")
        if lat.shape != (m, n):
            raise TopologyError(f"dimension mismatch: latency has shape {lat.shape}, expected ({m}, {n})")
        if not np.all(np.isfinite(cap)) or np.any(cap <= 0):
            raise TopologyError("non-positive capacity")
        if not np.all(np.isfinite(lat)) or np.any(lat < 0):
            raise TopologyError("negative or non-finite latency")
        object.__setattr__(self, "capacities", cap)
        object.__setattr__(self, "latency", lat)
        if not self.switch_ids:
            object.__setattr__(self, "switch_ids", tuple(f"sw{i}" for i in range(n)))
        if not self.controller_ids:
            object.__setattr__(self, "controller_ids", tuple(f"c{i}" for i in range(m)))
        if len(self.switch_ids) != n or len(self.controller_ids) != m:
            raise TopologyError("dimension mismatch: identifier lists")
        if self.switch_latency is not None:
            sl = np.asarray(self.switch_latency, dtype=float)
            if sl.shape != (n, n) or np.any(sl < 0):
                raise TopologyError("switch_latency must be a non-negative N x N matrix")
            object.__setattr__(self, "switch_latency", sl)
        w = self.traffic_weights
        w = np.full(n, 1.0 / n) if w is None else np.asarray(w, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise TopologyError("traffic_weights must be N non-negative numbers")
        object.__setattr__(self, "traffic_weights", w / w.sum())

    @property
    def total_capacity(self) -> float:
        return float(self.capacities.sum())

    @property
    def max_latency(self) -> float:
        return float(self.latency.max())

    def nearest_controllers(self, switch: int) -> np.ndarray:
        """Controller indices sorted by latency to ``switch`` (stable on ties)."""
        return np.argsort(self.latency[:, switch], kind="stable")

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "num_switches": self.num_switches,
            "num_controllers": self.num_controllers,
            "capacities": self.capacities.tolist(),
            "latency": self.latency.tolist(),
            "switch_ids": list(self.switch_ids),
            "controller_ids": list(self.controller_ids),
            "traffic_weights": self.traffic_weights.tolist(),
        }
        if self.switch_latency is not None:
            d["switch_latency"] = self.switch_latency.tolist()
        return d


def great_circle(a, b) -> float:
    """Haversine distance in metres between two (lat, lon) pairs in degrees."""
    la1, lo1, la2, lo2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((la2 - la1) / 2) ** 2 + math.cos(la1) * math.cos(la2) * math.sin((lo2 - lo1) / 2) ** 2
    return 2 * EARTH_RADIUS * math.asin(math.sqrt(h))


def latency_from_coords(src, dst, speed=FIBER_SPEED) -> np.ndarray:
    return np.array([[great_circle(a, b) / speed for b in dst] for a in src])


def topology_from_dict(d: dict) -> Topology:
    try:
        n = int(d["num_switches"])
        m = int(d["num_controllers"])
        caps = d["capacities"]
        lat = d["latency"]
    except KeyError as exc:
        raise TopologyError(f"missing field {exc.args[0]!r}") from None
    sw_lat = d.get("switch_latency")
    if sw_lat is None and d.get("switch_coords") is not None:
        coords = d["switch_coords"]
        sw_lat = latency_from_coords(coords, coords, d.get("propagation_speed", FIBER_SPEED))
    return Topology(
        num_switches=n,
        num_controllers=m,
        capacities=np.asarray(caps, dtype=float),
        latency=np.asarray(lat, dtype=float),
        switch_ids=tuple(d.get("switch_ids", ())),
        controller_ids=tuple(d.get("controller_ids", ())),
        switch_latency=None if sw_lat is None else np.asarray(sw_lat, dtype=float),
        traffic_weights=d.get("traffic_weights"),
        name=d.get("name", ""),
    )


def load_topology(path) -> Topology:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TopologyError(f"parse error in {path}: {exc}") from None
    if not isinstance(d, dict):
        raise TopologyError(f"parse error in {path}: top level must be an object")
    return topology_from_dict(d)


def data_path(name: str) -> Path:
    """Path of a topology bundled with the package (e.g. ``desk_sa8.json``)."""
    return Path(__file__).parent / "data" / name


@dataclass(frozen=True)
class WorkloadSpec:
    arrival_rates: np.ndarray  # (N,) pkt/s
    load_fraction: float

    @classmethod
    def from_load(cls, topology: Topology, load_fraction: float) -> "WorkloadSpec":
        if not 0.0 <= load_fraction < 1.0:
            raise ValueError("load_fraction must lie in [0, 1)")
        rates = load_fraction * topology.total_capacity * topology.traffic_weights
        return cls(arrival_rates=rates, load_fraction=float(load_fraction))

    @property
    def total_rate(self) -> float:
        return float(np.sum(self.arrival_rates))


# --------------------------------------------------------------------------
# telemetry, observations, global state

@dataclass
class TelemetrySnapshot:
    """What agents can see at a step boundary.

    ``arrival_history`` is (H, N) of measured arrival rates, most recent last;
    ``queue_lengths`` is the (possibly stale) beacon value per controller.
    """
    arrival_history: np.ndarray  # (H, N) pkt/s
    queue_lengths: np.ndarray  # (M,) requests
    sent_prev: np.ndarray  # (N, M) counts
    recv_prev: np.ndarray  # (M,) counts
    steps_recorded: int = 0

    @classmethod
    def empty(cls, topology: Topology, history: int = 3) -> "TelemetrySnapshot":
        n, m = topology.num_switches, topology.num_controllers
        return cls(np.zeros((history, n)), np.zeros(m), np.zeros((n, m)), np.zeros(m), 0)

    @property
    def history(self) -> int:
        return self.arrival_history.shape[0]

    @property
    def padded(self) -> bool:
        """True while fewer than H steps have been recorded (history zero-padded)."""
        return self.steps_recorded < self.history


@dataclass(frozen=True)
class FeatureScales:
    rate: float  # divides capacities and arrival rates
    latency: float
    queue: float
    count: float  # divides per-step request counts

    @classmethod
    def for_topology(cls, topology: Topology, step_duration: float = 1.0, queue_ref: float = 1000.0):
        lat = topology.max_latency
        return cls(
            rate=topology.total_capacity,
            latency=lat if lat > 0 else 1.0,
            queue=queue_ref,
            count=topology.total_capacity * step_duration,
        )


OBS_EXTRA = 5  # capacity, latency, queue, sent_prev, recv_prev


@dataclass(frozen=True)
class Observation:
    arrival_history: np.ndarray
    capacity: float
    latency: float
    queue_length: float
    sent_prev: float
    recv_prev: float
    padded: bool = False

    def vector(self, scales: FeatureScales) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.arrival_history, dtype=float) / scales.rate,
            [self.capacity / scales.rate,
             self.latency / scales.latency,
             self.queue_length / scales.queue,
             self.sent_prev / scales.count,
             self.recv_prev / scales.count],
        ])


def build_observation(topology: Topology, agent: int, controller: int,
                      telemetry: TelemetrySnapshot) -> Observation:
    return Observation(
        arrival_history=telemetry.arrival_history[:, agent].copy(),
        capacity=float(topology.capacities[controller]),
        latency=float(topology.latency[controller, agent]),
        queue_length=float(telemetry.queue_lengths[controller]),
        sent_prev=float(telemetry.sent_prev[agent, controller]),
        recv_prev=float(telemetry.recv_prev[controller]),
        padded=telemetry.padded,
    )


def observation_matrix(topology: Topology, agent: int, telemetry: TelemetrySnapshot,
                       scales: FeatureScales) -> np.ndarray:
    """Normalized (M, H+5) feature matrix for one agent, row m = controller m.

    Vectorized equivalent of stacking ``build_observation(...).vector(scales)``.
    """
    m = topology.num_controllers
    hist = np.broadcast_to(telemetry.arrival_history[:, agent] / scales.rate, (m, telemetry.history))
    extra = np.column_stack([
        topology.capacities / scales.rate,
        topology.latency[:, agent] / scales.latency,
        telemetry.queue_lengths / scales.queue,
        telemetry.sent_prev[agent] / scales.count,
        telemetry.recv_prev / scales.count,
    ])
    return np.hstack([hist, extra])


def central_observation_matrix(topology: Topology, telemetry: TelemetrySnapshot,
                               scales: FeatureScales, agent_latency: np.ndarray) -> np.ndarray:
    """Observations of a single plane-wide agent located ``agent_latency`` away from each controller."""
    m = topology.num_controllers
    plane = telemetry.arrival_history.sum(axis=1) / scales.rate
    hist = np.broadcast_to(plane, (m, telemetry.history))
    extra = np.column_stack([
        topology.capacities / scales.rate,
        agent_latency / scales.latency,
        telemetry.queue_lengths / scales.queue,
        telemetry.sent_prev.sum(axis=0) / scales.count,
        telemetry.recv_prev / scales.count,
    ])
    return np.hstack([hist, extra])


@dataclass(frozen=True)
class GlobalState:
    plane_arrival_history: np.ndarray  # (H,)
    capacities: np.ndarray  # (M,)
    queue_lengths: np.ndarray  # (M,)
    latency_flat: np.ndarray  # (M*N,)

    def vector(self, scales: FeatureScales) -> np.ndarray:
        return np.concatenate([
            self.plane_arrival_history / scales.rate,
            self.capacities / scales.rate,
            self.queue_lengths / scales.queue,
            self.latency_flat / scales.latency,
        ])


def build_global_state(topology: Topology, telemetry: TelemetrySnapshot) -> GlobalState:
    return GlobalState(
        plane_arrival_history=telemetry.arrival_history.sum(axis=1),
        capacities=topology.capacities.copy(),
        queue_lengths=telemetry.queue_lengths.copy(),
        latency_flat=topology.latency.ravel().copy(),
    )


def state_dim(topology: Topology, history: int) -> int:
    m, n = topology.num_controllers, topology.num_switches
    return history + 2 * m + m * n


def obs_dim(history: int) -> int:
    return history + OBS_EXTRA
