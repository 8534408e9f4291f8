import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from madispatch import nn
from madispatch.checks import finite_difference, rel_error


def linear(w, b):
    """A 1 -> 1 network with no hidden layer."""
    return nn.MlpParams([np.array([[float(w)]])], [np.array([float(b)])])


def test_zero_weights_output_zero():
    p = nn.init_mlp([4, 8, 8, 1], np.random.default_rng(0))
    for a in p.arrays():
        a[...] = 0.0
    assert nn.forward(p, np.ones(4)) == 0.0


def test_single_unit_by_hand():
    assert nn.forward(linear(2.0, 1.0), np.array([3.0])) == 7.0


def test_forward_is_pure():
    p = nn.init_mlp([3, 5, 1], np.random.default_rng(1))
    x = np.array([0.1, 0.2, 0.3])
    before = p.flat().copy()
    assert nn.forward(p, x) == nn.forward(p, x)
    assert np.array_equal(before, p.flat())


def test_input_shape_checked():
    p = nn.init_mlp([3, 5, 1], np.random.default_rng(1))
    with pytest.raises(ValueError):
        nn.forward(p, np.ones(4))


def test_linear_gradient_by_hand():
    g = nn.backward_params(linear(2.0, 1.0), np.array([3.0]))
    assert g.weights[0][0, 0] == 3.0 and g.biases[0][0] == 1.0


def test_dead_relu_unit_has_zero_incoming_gradient():
    p = nn.init_mlp([2, 3, 1], np.random.default_rng(2), out_gain=1.0)
    p.biases[0][1] = -100.0  # unit 1 never fires on small inputs
    g = nn.backward_params(p, np.array([0.3, 0.4]))
    assert np.all(g.weights[0][:, 1] == 0.0) and g.biases[0][1] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = nn.init_mlp([4, 6, 5, 1], rng, out_gain=1.0)
    x = rng.uniform(-1, 1, (3, 4))
    up = rng.standard_normal(3)
    g = nn.backward_params(p, x, up).flat()
    fd = finite_difference(lambda q: float(up @ nn.forward(q, x)), p, x=x)
    assert rel_error(g, fd) < 1e-6


def test_softmax_cases():
    assert np.allclose(nn.softmax([0.0, 0.0]), [0.5, 0.5])
    big = nn.softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0)
    assert nn.softmax([5.0]).tolist() == [1.0]
    with pytest.raises(ValueError):
        nn.softmax([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_properties(v, c):
    p = nn.softmax(v)
    assert abs(p.sum() - 1.0) < 1e-12 and np.all(p >= 0)
    assert np.allclose(nn.softmax(np.array(v) + c), p, rtol=0, atol=1e-12)


def _pairwise_mean_gradient(params, z):
    """Literal double-sum form of d mu_m / d theta."""
    f = nn.forward(params, z)
    e = np.exp(f - f.max())
    s = e.sum()
    grads = [nn.backward_params(params, z[i]).flat() for i in range(len(z))]
    out = []
    for m in range(len(z)):
        acc = np.zeros_like(grads[0])
        for i in range(len(z)):
            acc += e[m] * e[i] * (grads[m] - grads[i])
        out.append(acc / s ** 2)
    return out


def test_single_option_mean_gradient_is_zero():
    p = nn.init_mlp([3, 4, 1], np.random.default_rng(0), out_gain=1.0)
    (g,) = nn.softmax_mean_gradient(p, np.array([[0.1, 0.2, 0.3]]))
    assert np.all(g.flat() == 0.0)


def test_identical_options_gradients_cancel():
    p = nn.init_mlp([3, 4, 1], np.random.default_rng(0), out_gain=1.0)
    z = np.tile([0.1, 0.2, 0.3], (2, 1))
    g1, g2 = nn.softmax_mean_gradient(p, z)
    assert np.allclose(g1.flat(), -g2.flat(), atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_mean_gradient_matches_pairwise_form_and_fd(seed):
    rng = np.random.default_rng(seed)
    p = nn.init_mlp([4, 6, 1], rng, out_gain=1.0)
    z = rng.uniform(0, 1, (3, 4))
    grads = nn.softmax_mean_gradient(p, z)
    for m, (g, ref) in enumerate(zip(grads, _pairwise_mean_gradient(p, z))):
        assert np.allclose(g.flat(), ref, rtol=1e-10, atol=1e-14)
        fd = finite_difference(lambda q: nn.softmax(nn.forward(q, z))[m], p, x=z)
        assert rel_error(g.flat(), fd) < 1e-4


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_mean_gradients_sum_to_zero(m, seed):
    rng = np.random.default_rng(seed)
    p = nn.init_mlp([3, 5, 1], rng, out_gain=1.0)
    total = sum(g.flat() for g in nn.softmax_mean_gradient(p, rng.uniform(0, 1, (m, 3))))
    assert np.max(np.abs(total)) < 1e-12


def test_adam_zero_gradient_fresh_params_unchanged():
    p = nn.init_mlp([2, 3, 1], np.random.default_rng(0))
    before = p.flat().copy()
    zero = nn.Gradient([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    nn.adam_update(p, zero, 1e-3)
    assert np.array_equal(before, p.flat())


def test_adam_moments_decay_on_zero_gradient():
    p = linear(1.0, 0.0)
    p.adam_m = [np.array([[0.5]]), np.array([0.5])]
    p.adam_v = [np.array([[0.25]]), np.array([0.25])]
    nn.adam_update(p, nn.Gradient([np.zeros((1, 1))], [np.zeros(1)]), 1e-3)
    assert p.adam_m[0][0, 0] == pytest.approx(0.45)
    assert p.adam_v[0][0, 0] == pytest.approx(0.25 * 0.999)


def test_adam_first_step_by_hand():
    # bias-corrected first step: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    p = linear(1.0, -2.0)
    lr, eps = 0.1, 1e-8
    nn.adam_update(p, nn.Gradient([np.array([[0.5]])], [np.array([-4.0])]), lr, eps=eps)
    assert p.weights[0][0, 0] == pytest.approx(1.0 - lr * 0.5 / (0.5 + eps), rel=1e-14)
    assert p.biases[0][0] == pytest.approx(-2.0 + lr * 4.0 / (4.0 + eps), rel=1e-14)


def test_adam_second_step_by_hand():
    b1, b2, lr, eps = 0.9, 0.999, 0.01, 1e-8
    p = linear(0.0, 0.0)
    g1, g2 = 1.0, 3.0
    for g in (g1, g2):
        nn.adam_update(p, nn.Gradient([np.array([[g]])], [np.array([0.0])]), lr)
    m1, v1 = (1 - b1) * g1, (1 - b2) * g1 ** 2
    m2, v2 = b1 * m1 + (1 - b1) * g2, b2 * v1 + (1 - b2) * g2 ** 2
    step1 = lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
    step2 = lr * (m2 / (1 - b1 ** 2)) / (math.sqrt(v2 / (1 - b2 ** 2)) + eps)
    assert p.weights[0][0, 0] == pytest.approx(-(step1 + step2), rel=1e-12)


def test_adam_deterministic():
    def run():
        p = nn.init_mlp([2, 3, 1], np.random.default_rng(5))
        g = nn.backward_params(p, np.array([0.2, 0.7]))
        for _ in range(3):
            nn.adam_update(p, g, 1e-2)
        return p.flat()
    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite():
    p = linear(1.0, 0.0)
    with pytest.raises(FloatingPointError):
        nn.adam_update(p, nn.Gradient([np.array([[np.nan]])], [np.zeros(1)]), 1e-3)


def test_checkpoint_round_trip(tmp_path):
    p = nn.init_mlp([8, 64, 64, 1], np.random.default_rng(3))
    nn.save_params(tmp_path / "p.npz", p, {"note": "x"})
    q, header = nn.load_params(tmp_path / "p.npz")
    assert header == {"note": "x"}
    assert q.sizes == p.sizes
    assert np.array_equal(q.flat(), p.flat())
    x = np.random.default_rng(4).uniform(size=(5, 8))
    assert np.array_equal(nn.forward(q, x), nn.forward(p, x))
