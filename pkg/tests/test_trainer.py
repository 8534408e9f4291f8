import numpy as np
import pytest

from madispatch import nn
from madispatch import policy as pol
from madispatch.topology import state_dim
from madispatch import trainer as T

FAST = dict(iterations=2, steps_per_episode=5, warmup=2.0, eval_loads=(0.5,), hidden=(8, 8))


def test_gae_lambda_zero_is_td_error():
    r = np.array([1.0, 2.0, 3.0])
    v = np.array([0.3, 0.1, 0.2])
    nv = np.array([0.1, 0.2, 0.0])
    adv, tgt = T.compute_gae(r, v, nv, [0, 0, 1], 0.9, 0.0)
    assert np.allclose(adv, r + 0.9 * nv - v, rtol=0, atol=1e-15)
    assert np.allclose(tgt, adv + v)


def test_gae_single_step_zero_values():
    adv, _ = T.compute_gae([2.5], [0.0], [0.0], [1], 0.9, 0.95)
    assert adv.tolist() == [2.5]


def test_gae_three_step_hand_example():
    adv, _ = T.compute_gae([1.0, 0.0, 1.0], [0.5, 0.5, 0.5], [0.5, 0.5, 0.0], [0, 0, 1], 0.9, 0.95)
    delta = [1 + 0.9 * 0.5 - 0.5, 0 + 0.9 * 0.5 - 0.5, 1 + 0.0 - 0.5]
    c = 0.9 * 0.95
    expect = [delta[0] + c * delta[1] + c * c * delta[2], delta[1] + c * delta[2], delta[2]]
    assert np.allclose(adv, expect, rtol=0, atol=1e-15)


def test_gae_does_not_leak_across_episodes():
    adv, _ = T.compute_gae([0.0, 5.0], [0.0, 0.0], [0.0, 0.0], [1, 1], 0.9, 0.95)
    assert adv.tolist() == [0.0, 5.0]


def test_bellman_loss_examples():
    assert T.bellman_loss([1.0], [0.5], [1.0], 0.9) == pytest.approx(0.16)
    assert T.bellman_loss([1.4], [0.5], [1.0], 0.9) == pytest.approx(0.0)


def test_advantage_normalization_scopes():
    adv = np.array([1.0, 2.0, 3.0, 10.0, 30.0])
    ends = np.array([0, 0, 1, 0, 1], bool)
    it = T.normalize_advantages(adv, ends, "iteration")
    assert abs(it.mean()) < 1e-12 and it.std() == pytest.approx(1.0)
    ep = T.normalize_advantages(adv, ends, "episode")
    for sl in (slice(0, 3), slice(3, 5)):
        assert abs(ep[sl].mean()) < 1e-12 and ep[sl].std() == pytest.approx(1.0)
    assert np.array_equal(T.normalize_advantages(adv, ends, "none"), adv)
    with pytest.raises(ValueError):
        T.TrainerConfig(advantage_norm="batch")


def test_update_value_reduces_loss():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(80, 4))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.3
    critic = nn.init_mlp([4, 16, 16, 1], rng, out_gain=1.0)
    cfg = T.TrainerConfig(value_lr=1e-2)
    before = float(np.mean((nn.forward(critic, x) - y) ** 2))
    losses = [T.update_value(critic, x, y, cfg, rng) for _ in range(5)]
    assert losses[-1] < losses[0] < before


def test_update_value_perfect_fit_is_zero():
    rng = np.random.default_rng(0)
    critic = nn.init_mlp([3, 4, 1], rng)
    x = rng.uniform(size=(10, 3))
    assert T.update_value(critic, x, nn.forward(critic, x), T.TrainerConfig(epochs=1), rng) == pytest.approx(0.0, abs=1e-20)


def test_clip_mask_cases():
    assert not T.clip_mask(np.array([1.5]), np.array([1.0]), 0.2)[0]
    assert T.clip_mask(np.array([1.1]), np.array([1.0]), 0.2)[0]
    assert not T.clip_mask(np.array([0.7]), np.array([-1.0]), 0.2)[0]
    assert T.clip_mask(np.array([1.5]), np.array([-1.0]), 0.2)[0]


def toy(w=0.8, b=0.1):
    """Two-parameter policy: priority f(z) = w z + b."""
    return nn.MlpParams([np.array([[w]])], [np.array([b])])


def toy_batch(seed=0, batch=40, m=3, sigma=0.05):
    rng = np.random.default_rng(seed)
    old = toy()
    obs = rng.uniform(0, 3, (batch, m, 1))
    mu = pol.batch_means(old, obs)
    actions = mu + sigma * rng.standard_normal(mu.shape)
    return old, obs, actions, pol.batch_log_prob(old, obs, actions, sigma), rng.standard_normal(batch)


def test_first_epoch_gradient_is_advantage_weighted_score():
    s = 0.05
    old, obs, actions, logp, adv = toy_batch(sigma=s)
    g, mask, _ = T.surrogate_gradient(old, obs, actions, logp, adv, 0.2, s)
    assert mask.all()
    ref = sum(adv[b] * pol.policy_gradient_logpi(old, obs[b], actions[b], s).flat() for b in range(len(adv)))
    assert np.allclose(g.flat(), ref / len(adv), rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("w", [0.8, 0.83, 0.9])
def test_surrogate_gradient_matches_fd_on_toy_policy(w):
    s, clip = 0.05, 0.2
    _, obs, actions, logp, adv = toy_batch(sigma=s)
    cur = toy(w, 0.1)
    g, mask, _ = T.surrogate_gradient(cur, obs, actions, logp, adv, clip, s)
    h = 1e-7
    fd = []
    for i in range(2):
        up, dn = cur.copy(), cur.copy()
        up.set_flat(cur.flat() + h * np.eye(2)[i])
        dn.set_flat(cur.flat() - h * np.eye(2)[i])
        fd.append((T.surrogate_objective(up, obs, actions, logp, adv, clip, s)
                   - T.surrogate_objective(dn, obs, actions, logp, adv, clip, s)) / (2 * h))
    # the bias gradient is exactly zero under the softmax; compare the weight entry relatively
    assert g.flat()[0] == pytest.approx(fd[0], rel=1e-3)
    assert abs(g.flat()[1] - fd[1]) < 1e-6
    if w == 0.9:
        assert not mask.all()


def test_zero_advantages_leave_params_unchanged():
    old, obs, actions, logp, _ = toy_batch()
    p = old.copy()
    T.update_policy(p, obs, actions, logp, np.zeros(len(obs)), T.TrainerConfig(sigma=0.05), np.random.default_rng(0))
    assert np.array_equal(p.flat(), old.flat()) and p.adam_t == 0


def test_update_policy_increases_surrogate():
    s = 0.05
    old, obs, actions, logp, adv = toy_batch(sigma=s)
    p = old.copy()
    before = T.surrogate_objective(p, obs, actions, logp, adv, 0.2, s)
    T.update_policy(p, obs, actions, logp, adv, T.TrainerConfig(sigma=s, lr=1e-2), np.random.default_rng(0))
    assert T.surrogate_objective(p, obs, actions, logp, adv, 0.2, s) > before


@pytest.fixture(scope="module")
def rollout_setup(desk):
    cfg = T.TrainerConfig(warmup=5.0, hidden=(8, 8))
    team = T.make_team("MAPPO", desk, cfg, np.random.default_rng(0))
    return cfg, team


def test_rollout_size_and_logp(desk, rollout_setup):
    cfg, team = rollout_setup
    buf = T.collect_rollout(team, desk, cfg, 0.028, 0.002, seed=0, iteration=1)
    assert len(buf) == 120
    assert buf.episode_end.sum() == 2 and buf.episode_end[59] and buf.episode_end[119]
    assert buf.obs.shape == (120, 8, 3, 8) and buf.states.shape == (120, state_dim(desk, 3))
    for t in (0, 77):
        for k in (0, 5):
            assert buf.logp[t, k] == pytest.approx(
                pol.log_prob(team.policies[k], buf.obs[t, k], buf.actions[t, k], cfg.sigma), rel=1e-12)
    # joint reward shared by every agent
    assert np.allclose(buf.agent_rewards, buf.rewards.sum(axis=1, keepdims=True) * 0.002)
    # next state of step t is the state of step t+1 inside an episode
    assert np.array_equal(buf.next_states[10], buf.states[11])


def test_rollout_deterministic(desk, rollout_setup):
    cfg, team = rollout_setup
    a = T.collect_rollout(team, desk, cfg, 0.028, 0.002, seed=3, iteration=2)
    b = T.collect_rollout(team, desk, cfg, 0.028, 0.002, seed=3, iteration=2)
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.rewards, b.rewards)


def test_zero_iterations_returns_initial_policies(small):
    res = T.train(T.TrainerConfig(**{**FAST, "iterations": 0}), small, "MAPPO", seed=0)
    again = T.make_team("MAPPO", small, res.config, np.random.default_rng(T.episode_seed(0, 0)))
    for p, q in zip(res.team.policies, again.policies):
        assert np.array_equal(p.flat(), q.flat())
    assert res.metrics == []


@pytest.mark.parametrize("mode", T.MODES)
def test_train_deterministic_per_mode(small, mode):
    cfg = T.TrainerConfig(**FAST)
    a = T.train(cfg, small, mode, seed=1)
    b = T.train(cfg, small, mode, seed=1)
    assert a.metrics == b.metrics and a.evaluations == b.evaluations
    assert len(a.metrics) == 2
    assert len(a.team.policies) == (1 if mode == "CENTRAL" else small.num_switches)
    moved = any(not np.array_equal(p.flat(), q.flat()) for p, q in zip(a.team.policies, a.initial_policies))
    assert moved


def test_critic_shapes(small):
    cfg = T.TrainerConfig(**FAST)
    rng = np.random.default_rng(0)
    (c,) = T.make_critics("MAPPO", small, cfg, rng)
    assert c.sizes[0] == state_dim(small, cfg.history)  # no joint action in the input
    sa = T.make_critics("SA_PPO_MA", small, cfg, rng)
    assert len(sa) == 3 and sa[0].sizes[0] == small.num_controllers * 8


def test_central_path_latency(small):
    site = T.central_site(small)
    assert site == int(np.argmin(small.latency.mean(axis=0)))
    pl = T.central_path_latency(small, site)
    for m in range(2):
        for n in range(3):
            assert pl[m, n] == pytest.approx(small.switch_latency[n, site] + small.latency[m, site])


def test_team_transfers_to_more_controllers(desk, desk5):
    cfg = T.TrainerConfig(hidden=(8, 8))
    team = T.make_team("MAPPO", desk, cfg, np.random.default_rng(0))
    rows = T.evaluate_team(team, desk5, T.TrainerConfig(steps_per_episode=3, warmup=1.0), 0.5, 1, 0)
    assert len(rows[0]["utilization"]) == 5


def test_weight_factor_is_cwrr_mean(small):
    cfg = T.TrainerConfig(steps_per_episode=10, warmup=2.0)
    wf = T.calibrate_weight_factor(small, cfg)
    lo = 2 * small.latency.min()
    assert lo < wf < 2 * small.latency.max() + 0.01
