import numpy as np
import pytest

from activeloc import autodiff as ad
from activeloc.checkpoint import load_checkpoint, read_curve, save_checkpoint, write_curve
from activeloc.env import scenario_config
from activeloc.nets import LOG_STD_BOUNDS, ActorCritic, ArchSpec, forward, prepare_features
from activeloc.ppo import (
    PPOConfig,
    RolloutBuffer,
    gae,
    ppo_update,
    sample_action,
    surrogate_loss,
    train,
    value_loss,
)


def literal_advantages(rewards, values, last_value, gamma, lam):
    """Direct evaluation of sum_i (gamma lam)^i delta_{k+i} for one episode segment."""
    T = len(rewards)
    v_next = list(values[1:]) + [last_value]
    delta = [rewards[t] + gamma * v_next[t] - values[t] for t in range(T)]
    return np.array([sum((gamma * lam) ** i * delta[k + i] for i in range(T - k))
                     for k in range(T)])


def test_sample_action_deterministic_limit():
    u, _ = sample_action(np.array([1.0, -2.0]), np.array([-50.0, -50.0]), np.random.default_rng(0))
    np.testing.assert_allclose(u, [1.0, -2.0], atol=1e-20)


def test_sample_action_reproducible():
    a = sample_action(np.zeros(2), np.zeros(2), np.random.default_rng(3))
    b = sample_action(np.zeros(2), np.zeros(2), np.random.default_rng(3))
    assert a[0].tolist() == b[0].tolist() and a[1] == b[1]


def test_log_prob_at_mean():
    from activeloc.autodiff import gaussian_log_prob
    lp = gaussian_log_prob(np.zeros((1, 2)), np.zeros(2), np.zeros((1, 2))).data[0]
    assert lp == pytest.approx(-np.log(2 * np.pi), abs=1e-12)


def test_gae_examples():
    r = np.array([1.0, 1.0, 1.0])
    v = np.zeros(3)
    d = np.array([0.0, 0.0, 1.0])
    adv, ret = gae(r, v, d, 0.0, 0.9, 1.0)
    assert adv[0] == pytest.approx(2.71, abs=1e-12)
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=6), rng.normal(size=6)
    d = np.zeros(6)
    adv0, _ = gae(r, v, d, 0.3, 0.9, 0.0)
    delta = r + 0.9 * np.append(v[1:], 0.3) - v
    np.testing.assert_allclose(adv0, delta, atol=1e-14)
    adv_g0, ret_g0 = gae(r, v, d, 0.3, 0.0, 0.95)
    np.testing.assert_allclose(adv_g0, r - v, atol=1e-14)
    np.testing.assert_allclose(ret_g0, r, atol=1e-14)


def test_gae_matches_literal_definition():
    rng = np.random.default_rng(1)
    for _ in range(200):
        T = int(rng.integers(1, 11))
        r, v = rng.normal(size=T), rng.normal(size=T)
        last = rng.normal()
        gamma, lam = rng.uniform(0, 1), rng.uniform(0, 1)
        adv, ret = gae(r, v, np.zeros(T), last, gamma, lam)
        np.testing.assert_allclose(adv, literal_advantages(r, v, last, gamma, lam), atol=1e-10)
        np.testing.assert_allclose(ret, adv + v, atol=1e-12)


def test_gae_terminal_ignores_bootstrap():
    a1, _ = gae([1.0, 2.0], [0.5, 0.5], [0, 1], 100.0, 0.9, 0.9)
    a2, _ = gae([1.0, 2.0], [0.5, 0.5], [0, 1], -7.0, 0.9, 0.9)
    np.testing.assert_array_equal(a1, a2)


def test_gae_empty_buffer():
    with pytest.raises(ValueError):
        gae([], [], [], 0.0, 0.9, 0.9)


def test_buffer_alignment_checked():
    with pytest.raises(ValueError):
        RolloutBuffer(obs=np.zeros((3, 1, 4)), actions=np.zeros((2, 1, 2)), logp=np.zeros((3, 1)),
                      rewards=np.zeros((3, 1)), values=np.zeros((3, 1)), dones=np.zeros((3, 1)),
                      last_values=np.zeros(1))


def _batch(spec, policy, rng, n=16):
    obs = np.concatenate([rng.uniform(-3, 3, (n, 2)), rng.uniform(4, 20, (n, 2 * spec.n_landmarks)),
                          rng.uniform(-8, 8, (n, 2 * spec.n_landmarks))], axis=1)
    mean = policy.action_mean(obs)
    actions, logp = sample_action(mean, policy.log_std, rng)
    return obs, actions, logp


def test_surrogate_at_old_policy_equals_vanilla_policy_gradient():
    spec = ArchSpec("att", 3)
    rng = np.random.default_rng(2)
    policy = ActorCritic.create(spec, rng)
    obs, actions, logp_old = _batch(spec, policy, rng)
    adv = rng.normal(size=len(obs))
    feats = prepare_features(spec, obs)

    leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in policy.actor.items()}
    ls = ad.Tensor(policy.log_std, requires_grad=True)
    loss, ratio, _ = surrogate_loss(spec, leaves, ls, feats, actions, logp_old, adv, 0.2)
    np.testing.assert_allclose(ratio.data, 1.0, atol=1e-12)
    assert loss.item() == pytest.approx(-np.mean(adv), abs=1e-12)
    ad.backward(loss)

    leaves2 = {k: ad.Tensor(v, requires_grad=True) for k, v in policy.actor.items()}
    ls2 = ad.Tensor(policy.log_std, requires_grad=True)
    lp = ad.gaussian_log_prob(forward(spec, leaves2, feats), ls2, actions)
    ad.backward(ad.neg(ad.reduce_mean(ad.mul(lp, adv))))
    for k in leaves:
        np.testing.assert_allclose(leaves[k].grad, leaves2[k].grad, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(ls.grad, ls2.grad, rtol=1e-10)


def test_clipped_branch_blocks_gradient():
    spec = ArchSpec("att", 2)
    rng = np.random.default_rng(3)
    policy = ActorCritic.create(spec, rng)
    obs, actions, logp = _batch(spec, policy, rng, 8)
    eps = 0.2
    logp_old = logp - np.log(1 + 2 * eps)
    adv = np.abs(rng.normal(size=8)) + 0.1
    leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in policy.actor.items()}
    ls = ad.Tensor(policy.log_std, requires_grad=True)
    loss, ratio, _ = surrogate_loss(spec, leaves, ls, prepare_features(spec, obs), actions,
                                    logp_old, adv, eps)
    np.testing.assert_allclose(ratio.data, 1 + 2 * eps)
    ad.backward(loss)
    assert all(t.grad is None or np.all(t.grad == 0) for t in leaves.values())
    assert ls.grad is None or np.all(ls.grad == 0)


def test_value_loss_zero_at_targets():
    spec = ArchSpec("att", 2)
    rng = np.random.default_rng(4)
    policy = ActorCritic.create(spec, rng)
    obs, _, _ = _batch(spec, policy, rng, 5)
    feats = prepare_features(spec, obs)
    targets = policy.value(obs)
    assert value_loss(spec, policy.critic, feats, targets).item() == 0.0


def _flat_batch(spec, policy, rng, n=64):
    obs, actions, logp = _batch(spec, policy, rng, n)
    return {"obs": obs, "actions": actions, "logp": logp, "advantages": rng.normal(size=n),
            "returns": rng.normal(size=n), "values": np.zeros(n)}


def test_ppo_update_keeps_log_std_bounded_and_reports():
    spec = ArchSpec("att", 3)
    rng = np.random.default_rng(5)
    policy = ActorCritic.create(spec, rng)
    policy.log_std[:] = LOG_STD_BOUNDS[1] - 1e-3
    batch = _flat_batch(spec, policy, rng)
    batch["advantages"] = np.abs(batch["advantages"])
    hyper = PPOConfig(lr=0.5)
    policy, diag = ppo_update(policy, batch, hyper, rng)
    assert np.all(policy.log_std >= LOG_STD_BOUNDS[0]) and np.all(policy.log_std <= LOG_STD_BOUNDS[1])
    assert set(diag) >= {"clip_frac", "approx_kl", "policy_loss", "value_loss"}


def test_ppo_update_aborts_on_nonfinite_loss():
    spec = ArchSpec("att", 2)
    rng = np.random.default_rng(6)
    policy = ActorCritic.create(spec, rng)
    before = policy.copy()
    batch = _flat_batch(spec, policy, rng)
    batch["returns"][3] = np.nan
    with pytest.raises(FloatingPointError):
        ppo_update(policy, batch, PPOConfig(normalize_adv=False), rng)
    for k in before.actor:
        np.testing.assert_array_equal(policy.actor[k], before.actor[k])


def test_ppo_update_improves_surrogate():
    spec = ArchSpec("att", 2)
    rng = np.random.default_rng(8)
    policy = ActorCritic.create(spec, rng)
    batch = _flat_batch(spec, policy, rng)
    feats = prepare_features(spec, batch["obs"])
    adv = (batch["advantages"] - batch["advantages"].mean()) / batch["advantages"].std()

    def surrogate(p):
        with ad.no_grad():
            return surrogate_loss(spec, p.actor, p.log_std, feats, batch["actions"],
                                  batch["logp"], adv, 0.2)[0].item()
    start = surrogate(policy)
    policy, _ = ppo_update(policy, batch, PPOConfig(lr=1e-3, epochs=10), rng)
    assert surrogate(policy) < start


def test_shared_params_flag_trains():
    world = scenario_config("landmarks3")
    res = train(world, PPOConfig(shared_params=True, eval_interval=0), seed=0, budget=128)
    assert set(res.policy.critic) == {"head.out.W", "head.out.b"}
    assert np.all(np.isfinite(res.policy.value(np.tile(
        np.concatenate([[0, 0], np.full(6, 4.0), np.zeros(6)]), (2, 1)))))


def test_train_zero_budget_returns_initial_params():
    world = scenario_config("landmarks3")
    res = train(world, PPOConfig(), seed=3, budget=0)
    init = ActorCritic.create(ArchSpec.for_world("att", world), np.random.default_rng([3, 0]))
    assert res.curve == []
    for k in init.actor:
        np.testing.assert_array_equal(res.policy.actor[k], init.actor[k])


def test_train_is_deterministic():
    world = scenario_config("landmarks3")
    hyper = PPOConfig(eval_interval=640, eval_episodes=3)
    a = train(world, hyper, seed=11, budget=1280)
    b = train(world, hyper, seed=11, budget=1280)
    assert a.curve == b.curve and len(a.curve) == 2
    for k in a.policy.actor:
        assert a.policy.actor[k].tobytes() == b.policy.actor[k].tobytes()


def test_train_joint_architecture_runs():
    world = scenario_config("joint", map_dims=(7, 7), rho=0.2)
    res = train(world, PPOConfig(eval_interval=240, eval_episodes=2, n_envs=4), arch="joint",
                seed=0, budget=240)
    assert len(res.curve) == 1 and np.isfinite(res.curve[0][1])


def test_checkpoint_roundtrip(tmp_path):
    world = scenario_config("landmarks5")
    policy = ActorCritic.create(ArchSpec.for_world("mlp", world), np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, policy, meta={"seed": 1})
    loaded, header = load_checkpoint(path)
    assert header["arch"] == "mlp" and header["n_landmarks"] == 5
    assert header["widths"]["emb"] == 32
    assert loaded.spec == policy.spec
    for k, v in policy.named_blocks().items():
        assert loaded.named_blocks()[k].tobytes() == v.tobytes()
    with open(path, "rb") as f:
        assert f.read(8) == b"ALOCCKPT"


def test_curve_roundtrip(tmp_path):
    rows = [(100, 1.5, 0.25, 0.3), (200, 2.0, 0.1, 0.2)]
    write_curve(tmp_path / "c.csv", rows)
    assert read_curve(tmp_path / "c.csv") == rows
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == \
        "env_steps,mean_eval_reward,std_eval_reward,mean_mae"
