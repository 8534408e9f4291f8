"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def fifo_departures(arrivals, services, busy_until):
    """Departure times of a single FIFO server fed ``arrivals`` in order.

    Lindley recursion: each request starts service at max(arrival, previous
    departure).  ``busy_until`` is the departure time of the last request
    already served.
    """
    out = np.empty(len(arrivals), dtype=np.float64)
    t = float(busy_until)
    for i, (a, s) in enumerate(zip(arrivals.tolist(), services.tolist())):
        if a > t:
            t = a
        t = t + s
        out[i] = t
    return out


def gae(rewards, values, next_values, episode_end, gamma, lam):
    """Generalized advantage estimates, scanning backwards.

    ``episode_end[i]`` marks the last sample of an episode; the accumulation
    restarts there while ``next_values[i]`` still bootstraps the TD residual.
    """
    n = len(rewards)
    out = np.empty(n, dtype=np.float64)
    r, v, nv, ends = rewards.tolist(), values.tolist(), next_values.tolist(), episode_end.tolist()
    running = 0.0
    for i in range(n - 1, -1, -1):
        if ends[i]:
            running = 0.0
        delta = r[i] + gamma * nv[i] - v[i]
        running = delta + gamma * lam * running
        out[i] = running
    return out
