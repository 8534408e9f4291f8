"""Small dense networks in float64: forward, parameter gradients, Adam.

Only what the trainer needs: an MLP with ReLU hidden layers and a linear
output, gradients of (weighted sums of) its outputs with respect to every
parameter, the softmax-across-options Jacobian used by the adaptive policy,
and Adam with bias correction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass
class Gradient:
    weights: list
    biases: list

    def arrays(self):
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def scaled(self, c: float) -> "Gradient":
        return Gradient([c * w for w in self.weights], [c * b for b in self.biases])

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient([a + b for a, b in zip(self.weights, other.weights)],
                        [a + b for a, b in zip(self.biases, other.biases)])

    def __sub__(self, other: "Gradient") -> "Gradient":
        return self + other.scaled(-1.0)


@dataclass
class MlpParams:
    weights: list  # W_k has shape (fan_in, fan_out)
    biases: list
    adam_m: list = field(default_factory=list)
    adam_v: list = field(default_factory=list)
    adam_t: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must pair up")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: bad shapes {w.shape}, {b.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input size does not chain")
        if not self.adam_m:
            self.adam_m = [np.zeros_like(a) for a in self.arrays()]
            self.adam_v = [np.zeros_like(a) for a in self.arrays()]

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self):
        return [*self.weights, *self.biases]

    def shapes(self):
        return [a.shape for a in self.arrays()]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec) -> None:
        i = 0
        for a in self.arrays():
            a[...] = np.reshape(vec[i:i + a.size], a.shape)
            i += a.size

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         [x.copy() for x in self.adam_m], [x.copy() for x in self.adam_v], self.adam_t)


def orthogonal(rng, shape, gain: float) -> np.ndarray:
    a = rng.standard_normal(shape)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == shape else vt
    return gain * q


def init_mlp(sizes, rng, hidden_gain=np.sqrt(2.0), out_gain=0.01) -> MlpParams:
    """Orthogonal init (hidden gain sqrt 2, output ``out_gain``), zero biases."""
    ws, bs = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if k == len(sizes) - 2 else hidden_gain
        ws.append(orthogonal(rng, (fan_in, fan_out), gain))
        bs.append(np.zeros(fan_out))
    return MlpParams(ws, bs)


def _check_input(params: MlpParams, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input shape {x.shape} does not match first layer {params.weights[0].shape[0]}")
    return x2, single


def _activations(params: MlpParams, x2):
    acts = [x2]
    pre = []
    h = x2
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(params: MlpParams, x):
    """Network output; scalar-output nets return a float (1-D input) or (B,) array."""
    x2, single = _check_input(params, x)
    out = _activations(params, x2)[0][-1]
    if out.shape[1] == 1:
        out = out[:, 0]
        return float(out[0]) if single else out
    return out[0] if single else out


def backward_params(params: MlpParams, x, upstream=None) -> Gradient:
    """Gradient of sum_b <upstream_b, f(x_b)> with respect to all parameters.

    With a single input and no ``upstream`` this is simply df/dtheta for a
    scalar-output network.
    """
    x2, _ = _check_input(params, x)
    acts, pre = _activations(params, x2)
    n_out = params.weights[-1].shape[1]
    if upstream is None:
        g = np.ones((x2.shape[0], n_out))
    else:
        g = np.asarray(upstream, dtype=float).reshape(x2.shape[0], n_out)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        if k != len(params.weights) - 1:
            g = g * (pre[k] > 0)
        gw[k] = acts[k].T @ g
        gb[k] = g.sum(axis=0)
        if k:
            g = g @ params.weights[k].T
    return Gradient(gw, gb)


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_mean_gradient(params: MlpParams, observations) -> list:
    """d/dtheta of softmax_m(f(z_1), ..., f(z_M)) for every option m.

    Uses mu_m * (grad f(z_m) - sum_i mu_i grad f(z_i)), which equals the
    pairwise-difference form sum_i e^{f_m} e^{f_i} (grad f_m - grad f_i) / (sum e^f)^2.
    """
    z = np.asarray(observations, dtype=float)
    if z.ndim != 2 or len(z) == 0:
        raise ValueError("need a non-empty (M, F) observation matrix")
    mu = softmax(forward(params, z))
    out = []
    for m in range(len(z)):
        up = -mu[m] * mu
        up[m] += mu[m]
        out.append(backward_params(params, z, up))
    return out


def adam_update(params: MlpParams, grad: Gradient, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam descent step (in place) along ``grad``; pass a negated gradient to ascend."""
    arrays = grad.arrays()
    if len(arrays) != len(params.arrays()) or any(a.shape != p.shape for a, p in zip(arrays, params.arrays())):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise FloatingPointError("non-finite gradient")
    params.adam_t += 1
    t = params.adam_t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params.arrays(), arrays, params.adam_m, params.adam_v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# checkpoints: flat float64 array plus a JSON header with shapes


def save_params(path, params: MlpParams, header: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "shapes": [list(s) for s in params.shapes()],
            "header": header or {}}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                 flat=params.flat())


def load_params(path) -> tuple:
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        flat = data["flat"].copy()
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    shapes = [tuple(s) for s in meta["shapes"]]
    n_layers = len(shapes) // 2
    arrays, i = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[i:i + size].reshape(s))
        i += size
    if i != flat.size:
        raise ValueError("checkpoint size does not match its shape header")
    return MlpParams(arrays[:n_layers], arrays[n_layers:]), meta["header"]
