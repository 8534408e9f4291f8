"""Controller filtering and the priority-to-probability mapping."""
from __future__ import annotations

import numpy as np

from .topology import Topology


def default_queue_threshold(topology: Topology, total_rate: float, step_duration: float) -> float:
    """Ten times the mean per-controller offered load in one step (requests)."""
    return 10.0 * total_rate * step_duration / topology.num_controllers


def build_candidates(latency_to_agent, queue_lengths, chi: int, threshold: float) -> np.ndarray:
    """Binary candidate list for one agent.

    Controllers whose reported queue length is at or above ``threshold`` are
    dropped; of the rest the ``chi`` nearest (by ``latency_to_agent``) are kept.
    If every controller is overloaded, the single nearest one is used.
    """
    lat = np.asarray(latency_to_agent, dtype=float)
    q = np.asarray(queue_lengths, dtype=float)
    if chi < 1:
        raise ValueError("chi must be >= 1")
    order = np.argsort(lat, kind="stable")
    ok = order[q[order] < threshold][:chi]
    mask = np.zeros(len(lat))
    mask[ok if len(ok) else order[:1]] = 1.0
    return mask


def agent_candidates(topology: Topology, agent: int, queue_lengths, chi: int, threshold: float) -> np.ndarray:
    return build_candidates(topology.latency[:, agent], queue_lengths, chi, threshold)


def map_to_probabilities(action, candidates) -> np.ndarray:
    """T: clamp priorities at zero, mask filtered controllers, renormalize.

    Falls back to uniform over candidates when nothing positive survives.
    """
    a = np.asarray(action, dtype=float)
    mask = np.asarray(candidates, dtype=float)
    if a.shape != mask.shape:
        raise ValueError("action and candidate list differ in length")
    if not mask.any():
        raise ValueError("empty candidate set")
    filtered = np.maximum(a, 0.0) * mask
    total = filtered.sum()
    if total > 0 and np.isfinite(total):
        return filtered / total
    return mask / mask.sum()
