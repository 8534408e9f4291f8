"""Adaptive dispatching policy.

One shared priority network scores each controller from that controller's
observation row; a softmax over the scores gives the mean action and, while
training, independent Gaussian noise is added to every coordinate.  Nothing
depends on the number of controllers, so the same parameters serve any M.

Observations are passed as (M, F) feature matrices (see
``topology.observation_matrix``); batches as (B, M, F).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import nn

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class PolicyConfig:
    sigma: float = 0.01
    explore: bool = True
    history: int = 3

    def __post_init__(self):
        if self.explore and not self.sigma > 0:
            raise ValueError("sigma must be positive when exploring")


@dataclass
class Action:
    priorities: np.ndarray  # a = mu + noise
    means: np.ndarray  # mu, on the simplex


def init_policy(n_features: int, rng, hidden=(64, 64)) -> nn.MlpParams:
    return nn.init_mlp([n_features, *hidden, 1], rng, out_gain=0.01)


def means(params: nn.MlpParams, observations) -> np.ndarray:
    z = np.asarray(observations, dtype=float)
    return nn.softmax(nn.forward(params, z))


def act(params: nn.MlpParams, observations, config: PolicyConfig, rng=None) -> Action:
    mu = means(params, observations)
    if config.explore:
        a = mu + config.sigma * rng.standard_normal(mu.shape)
    else:
        a = mu.copy()
    return Action(a, mu)


def _gauss_logpdf(a, mu, sigma):
    r = (a - mu) / sigma
    return np.sum(-math.log(sigma) - LOG_SQRT_2PI - 0.5 * r * r, axis=-1)


def log_prob(params: nn.MlpParams, observations, action, sigma: float) -> float:
    a = action.priorities if isinstance(action, Action) else np.asarray(action, dtype=float)
    return float(_gauss_logpdf(a, means(params, observations), sigma))


def policy_gradient_logpi(params: nn.MlpParams, observations, action, sigma: float) -> nn.Gradient:
    """grad_theta log pi(a | z) = sigma^-2 sum_m (a_m - mu_m) grad_theta mu_m."""
    a = action.priorities if isinstance(action, Action) else np.asarray(action, dtype=float)
    z = np.asarray(observations, dtype=float)
    mu = means(params, z)
    resid = (a - mu) / sigma ** 2
    # contract the softmax Jacobian with the residual before backprop
    up = mu * (resid - np.dot(mu, resid))
    g = nn.backward_params(params, z, up)
    if not all(np.all(np.isfinite(x)) for x in g.arrays()):
        raise FloatingPointError("non-finite policy gradient")
    return g


def policy_gradient_pi(params: nn.MlpParams, observations, action, sigma: float) -> nn.Gradient:
    """grad_theta pi(a | z), i.e. pi times the log-gradient."""
    pi = math.exp(log_prob(params, observations, action, sigma))
    return policy_gradient_logpi(params, observations, action, sigma).scaled(pi)


# -- batched forms used by the trainer -------------------------------------

def batch_means(params: nn.MlpParams, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    b, m, f = obs.shape
    return nn.softmax(nn.forward(params, obs.reshape(b * m, f)).reshape(b, m))


def batch_log_prob(params: nn.MlpParams, obs, actions, sigma: float) -> np.ndarray:
    return _gauss_logpdf(np.asarray(actions, dtype=float), batch_means(params, obs), sigma)


def weighted_logpi_gradient(params: nn.MlpParams, obs, actions, weights, sigma: float,
                            mu=None) -> nn.Gradient:
    """sum_b weights_b * grad_theta log pi(actions_b | obs_b) in one backward pass."""
    obs = np.asarray(obs, dtype=float)
    b, m, f = obs.shape
    if mu is None:
        mu = batch_means(params, obs)
    resid = (np.asarray(actions, dtype=float) - mu) / sigma ** 2
    up = mu * (resid - np.sum(mu * resid, axis=1, keepdims=True))
    up *= np.asarray(weights, dtype=float)[:, None]
    return nn.backward_params(params, obs.reshape(b * m, f), up.reshape(-1))


# -- checkpoints --------------------------------------------------------------

def save_policy(path, params: nn.MlpParams, config: PolicyConfig, extra: dict | None = None) -> None:
    header = {"policy": asdict(config), **(extra or {})}
    nn.save_params(path, params, header)


def load_policy(path) -> tuple:
    params, header = nn.load_params(path)
    return params, PolicyConfig(**header["policy"]), header
