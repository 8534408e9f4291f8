# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled hot loops.  Must stay operation-for-operation identical to _kernels_py."""
import numpy as np


def fifo_departures(const double[::1] arrivals, const double[::1] services, double busy_until):
    cdef Py_ssize_t i, n = arrivals.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] dep = out
    cdef double t = busy_until
    for i in range(n):
        if arrivals[i] > t:
            t = arrivals[i]
        t = t + services[i]
        dep[i] = t
    return out


def gae(const double[::1] rewards, const double[::1] values, const double[::1] next_values,
        const unsigned char[::1] episode_end, double gamma, double lam):
    cdef Py_ssize_t i, n = rewards.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] adv = out
    cdef double running = 0.0
    cdef double delta
    for i in range(n - 1, -1, -1):
        if episode_end[i]:
            running = 0.0
        delta = rewards[i] + gamma * next_values[i] - values[i]
        running = delta + gamma * lam * running
        adv[i] = running
    return out
