import json

import numpy as np
import pytest

from activeloc.belief import LandmarkBelief
from activeloc.env import (
    TRAJECTORY_FIELDS,
    ConfigError,
    EpisodeState,
    WorldConfig,
    assemble_observation,
    combined_reward,
    generate_map_ground_truth,
    mae,
    mae_euclidean,
    random_policy,
    reset,
    run_episode,
    scenario_config,
    step,
    trajectory_json,
)

# 2 log((4 + 4 w) / 4) with w = 1 - Phi(-2 sqrt(2) - 2) from a 30-digit mpmath run
CENTER_REWARD = 1.3862943611155981


def single_landmark_state(config, x, y, mu=None, info=4.0):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    mu = y if mu is None else np.atleast_2d(np.asarray(mu, dtype=float))
    belief = LandmarkBelief.initial(mu.ravel(), info)
    return EpisodeState(x=np.asarray(x, dtype=float), y_true=y, belief=belief, k=0,
                        rng=np.random.default_rng(0))


def states_equal(a, b):
    return (np.array_equal(a.x, b.x) and np.array_equal(a.y_true, b.y_true)
            and np.array_equal(a.belief.mu, b.belief.mu)
            and np.array_equal(a.belief.info_soft, b.belief.info_soft)
            and np.array_equal(a.belief.info_hard, b.belief.info_hard) and a.k == b.k)


def test_reset_is_deterministic():
    cfg = scenario_config("landmarks3")
    s1, o1 = reset(cfg, 42)
    s2, o2 = reset(cfg, 42)
    assert states_equal(s1, s2)
    assert o1.tobytes() == o2.tobytes()


def test_observation_length():
    assert len(reset(scenario_config("landmarks3"), 0)[1]) == 14
    cfg = scenario_config("joint")
    assert len(reset(cfg, 0)[1]) == 2 + 20 + 2 * 225


def test_default_initial_information():
    s, _ = reset(scenario_config("landmarks3"), 1)
    np.testing.assert_array_equal(s.belief.info_soft, np.full(6, 4.0))
    np.testing.assert_array_equal(s.belief.info_hard, np.full(6, 4.0))


def test_reset_ranges():
    cfg = scenario_config("landmarks5")
    for seed in range(30):
        s, _ = reset(cfg, seed)
        assert np.all(np.abs(s.x) <= 2.0)
        assert np.all(np.abs(s.y_true) <= 10.0)


def test_nonuniform_initial_information():
    s, _ = reset(scenario_config("nonuniform"), 0)
    np.testing.assert_array_equal(s.belief.info_soft, [200, 200, 4, 4, 4, 4])


def test_invalid_config():
    with pytest.raises(ConfigError):
        WorldConfig(episode_len=0)
    with pytest.raises(ConfigError):
        WorldConfig(rho=1.5)
    with pytest.raises(ConfigError):
        WorldConfig(control_bound=0)
    with pytest.raises(ConfigError):
        scenario_config("landmarks4")


def test_step_far_from_landmarks_gives_no_reward():
    cfg = WorldConfig(n_landmarks=1)
    s = single_landmark_state(cfg, (0, 0), (50, 50))
    s, _, r, _ = step(s, (0, 0), cfg)
    assert r == pytest.approx(0.0, abs=1e-12)


def test_step_landmark_at_center_reward():
    cfg = WorldConfig(n_landmarks=1)
    s = single_landmark_state(cfg, (0, 0), (0, 0))
    s, _, r, _ = step(s, (0, 0), cfg)
    # the measurement moves mu slightly off-centre before the soft weight is taken
    assert r == pytest.approx(CENTER_REWARD, abs=1e-9)


def test_step_clamps_control():
    cfg = WorldConfig(n_landmarks=1)
    s = single_landmark_state(cfg, (0, 0), (50, 50))
    s, _, _, _ = step(s, (10, 10), cfg)
    np.testing.assert_array_equal(s.x, (3, 3))
    np.testing.assert_array_equal(s.u_applied, (3, 3))


def test_stepping_terminal_episode_fails():
    cfg = WorldConfig(n_landmarks=1, episode_len=1)
    s = single_landmark_state(cfg, (0, 0), (5, 5))
    s, _, _, done = step(s, (0, 0), cfg)
    assert done
    with pytest.raises(RuntimeError):
        step(s, (0, 0), cfg)


def test_assemble_observation_order():
    cfg = WorldConfig(n_landmarks=1)
    s = single_landmark_state(cfg, (1, 2), (0, 0))
    info_before = s.belief.info_soft.copy()
    np.testing.assert_array_equal(assemble_observation(s, cfg), [1, 2, 4, 4, 0, 0])
    np.testing.assert_array_equal(s.belief.info_soft, info_before)


def test_map_block_appended():
    cfg = scenario_config("joint", map_dims=(2, 2))
    s, obs = reset(cfg, 3)
    assert len(obs) == 2 + 4 * 5 + 8
    np.testing.assert_array_equal(obs[-4:], np.ones(4))


def test_combined_reward():
    cfg = WorldConfig(rho=0.2, alpha_land=1.0, alpha_map=1.0)
    assert combined_reward(1.0, 2.0, cfg) == pytest.approx(1.8)
    cfg1 = WorldConfig(rho=1.0, alpha_land=2.0, alpha_map=1.0)
    assert combined_reward(1.5, 7.0, cfg1) == 3.0
    cfg0 = WorldConfig(rho=0.0, alpha_land=2.0, alpha_map=0.5)
    assert combined_reward(1.5, 7.0, cfg0) == 3.5


def test_mae():
    assert mae([1, 2], [1, 2]) == 0
    assert mae([1, 0], [0, 0]) == 0.5
    assert mae([1, 1, 0, 0], [0, 0, 0, 0]) == 0.5
    assert mae_euclidean([3, 4], [0, 0]) == 5.0
    with pytest.raises(ValueError):
        mae([1, 2, 3], [1, 2])


def test_map_ground_truth():
    cfg = scenario_config("joint")
    rng = np.random.default_rng
    assert np.all(generate_map_ground_truth(cfg, rng(0), density=0.0) == -1)
    assert np.all(generate_map_ground_truth(cfg, rng(0), density=1.0) == 1)
    a = generate_map_ground_truth(cfg, rng(7))
    b = generate_map_ground_truth(cfg, rng(7))
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {-1, 1}
    assert np.mean(a == 1) >= cfg.map_density - 1e-9


@pytest.mark.parametrize("scenario", ["landmarks3", "landmarks8", "nonuniform"])
def test_reward_telescopes_and_is_bounded(scenario):
    cfg = scenario_config(scenario)
    rng = np.random.default_rng(0)
    for seed in range(20):
        res = run_episode(cfg, seed, random_policy(cfg.control_bound, rng))
        s0, _ = reset(cfg, seed)
        final = res.final_state.belief.info_soft
        lam0 = s0.belief.info_soft
        assert res.reward == pytest.approx(np.sum(np.log(final) - np.log(lam0)), abs=1e-9)
        bound = np.sum(np.log((lam0 + cfg.episode_len / cfg.sigma**2) / lam0))
        assert res.reward <= bound + 1e-12


def test_noise_free_trajectories_reproducible():
    cfg = scenario_config("landmarks3")
    controls = np.random.default_rng(1).uniform(-3, 3, (8, 2))
    a = run_episode(cfg, 5, lambda o, k: controls[k], record=True)
    b = run_episode(cfg, 5, lambda o, k: controls[k], record=True)
    assert json.dumps(a.records) == json.dumps(b.records)


def test_motion_noise_perturbs_but_is_seeded():
    cfg = scenario_config("landmarks3", motion_noise_std=0.1)
    zero = lambda o, k: np.zeros(2)
    a = run_episode(cfg, 5, zero, record=True)
    b = run_episode(cfg, 5, zero, record=True)
    assert a.records == b.records
    assert a.records[-1]["x"] != a.records[0]["x"]


def test_applied_control_is_clamped():
    cfg = scenario_config("landmarks3")
    res = run_episode(cfg, 3, lambda o, k: np.array([100.0, -100.0]), record=True)
    for rec in res.records[1:]:
        assert max(abs(v) for v in rec["u"]) <= cfg.control_bound


def test_mae_decreases_with_more_observations():
    cfg = WorldConfig(n_landmarks=1, episode_len=5, landmark_range=0.5, agent_init_range=0.0)
    hover = lambda o, k: np.zeros(2)
    m5, m1 = [], []
    for seed in range(200):
        res5 = run_episode(cfg, seed, hover)
        res1 = run_episode(cfg.__class__(**{**cfg.to_dict(), "episode_len": 1}), seed, hover)
        m5.append(res5.mae)
        m1.append(res1.mae)
    assert np.mean(m5) < np.mean(m1)


def test_joint_step_reports_both_rewards():
    cfg = scenario_config("joint", rho=0.2)
    s, _ = reset(cfg, 0)
    s, obs, r, _ = step(s, (1.0, 1.0), cfg)
    assert s.reward_map > 0
    assert r == pytest.approx(combined_reward(s.reward_land, s.reward_map, cfg))
    assert np.all(s.map_belief.info >= 1.0)


def test_trajectory_json_schema():
    cfg = scenario_config("landmarks3")
    res = run_episode(cfg, 2, lambda o, k: np.ones(2), record=True)
    doc = json.loads(trajectory_json(cfg, 2, res.records))
    assert len(doc["records"]) == cfg.episode_len + 1
    assert tuple(doc["fields"]) == TRAJECTORY_FIELDS
    for rec in doc["records"]:
        assert set(rec) == set(TRAJECTORY_FIELDS)
        assert set(rec["visible_indices"]) <= set(range(cfg.n_landmarks))


def test_config_dict_roundtrip():
    cfg = scenario_config("nonuniform", motion_noise_std=0.1)
    assert WorldConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
