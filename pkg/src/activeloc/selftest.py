"""Fast oracle and invariant checks behind ``activeloc selftest``.

Each check returns ``(ok, detail)``; :func:`run_all` collects them as
``(name, ok, detail)`` rows. The full suites live in ``tests/``.
"""

import math

import numpy as np

from . import autodiff as ad
from .belief import LandmarkBelief, SensorModel, hard_info_update, mean_update
from .env import random_policy, reset, run_episode, scenario_config
from .fov import FieldOfView, probit, soft_visibility_weight
from .icr import icr_objective, icr_value_and_grad
from .nets import ActorCritic, ArchSpec, attention_weights
from .ppo import gae

# 1/2 (1 + erf(-2)), 30-digit reference
PHI_ZERO = 0.0023388674905236329


def check_probit():
    err = abs(probit(0.0, 0.5) - PHI_ZERO)
    xs = np.linspace(-3, 3, 13)
    ref = np.array([0.5 * (1 + math.erf(x / (math.sqrt(2) * 0.5) - 2)) for x in xs])
    err = max(err, float(np.max(np.abs(probit(xs, 0.5) - ref))))
    return err < 1e-12, f"max abs error {err:.2e}"


def check_sharp_fov():
    fov = FieldOfView(radius=2.0, kappa=0.005)
    d = np.concatenate([np.linspace(-1.9, -0.1, 50), np.linspace(0.1, 5, 50)])
    q = np.stack([2.0 + d, np.zeros_like(d)], axis=1)
    dev = float(np.max(np.abs(soft_visibility_weight(q, fov) - (d <= 0))))
    return dev < 1e-3, f"max deviation {dev:.2e}"


def check_filter():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        sigma = rng.uniform(0.1, 3.0)
        lam, mu, z = rng.uniform(0.01, 50, 2), rng.normal(0, 10, 2), rng.normal(0, 10, 2)
        b = LandmarkBelief(mu=mu, info_hard=lam.copy(), info_soft=lam.copy())
        m = SensorModel(sigma)
        b = hard_info_update(mean_update(b, [z], [0], m), [0], m.info_rate)
        P = 1 / lam
        K = P / (P + sigma**2)
        worst = max(worst, float(np.max(np.abs(b.mu - (mu + K * (z - mu))) / (np.abs(mu) + 1))),
                    float(np.max(np.abs(1 / b.info_hard - (1 - K) * P) / ((1 - K) * P))))
    return worst < 1e-8, f"max rel error {worst:.2e}"


def check_telescoping():
    cfg = scenario_config("landmarks3")
    rng = np.random.default_rng(1)
    worst = 0.0
    for seed in range(10):
        res = run_episode(cfg, seed, random_policy(cfg.control_bound, rng))
        lam0 = reset(cfg, seed)[0].belief.info_soft
        ref = float(np.sum(np.log(res.final_state.belief.info_soft) - np.log(lam0)))
        worst = max(worst, abs(res.reward - ref))
    return worst < 1e-9, f"max abs error {worst:.2e}"


def check_gradients():
    rng = np.random.default_rng(2)
    worst = 0.0
    x = rng.normal(size=(3, 4))
    W = rng.normal(size=(4, 2))
    for build in (lambda a, w: ad.reduce_sum(ad.tanh(ad.matmul(a, w))),
                  lambda a, w: ad.reduce_sum(ad.softmax(ad.matmul(a, w))) + ad.reduce_sum(ad.erf(a))):
        worst = max(worst, ad.gradcheck(build, [x, W]))
    cfg = scenario_config("landmarks3")
    U = rng.uniform(-1, 1, (3, 2))
    mu0 = rng.uniform(-3, 3, (3, 2))
    _, g = icr_value_and_grad(U, [0, 0], mu0, np.full(6, 4.0), cfg)
    num = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        e = np.zeros_like(U)
        e[idx] = 1e-6
        num[idx] = (icr_objective(U + e, [0, 0], mu0, np.full(6, 4.0), cfg)
                    - icr_objective(U - e, [0, 0], mu0, np.full(6, 4.0), cfg)) / 2e-6
    worst = max(worst, float(np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12)))
    return worst < 1e-4, f"max rel error {worst:.2e}"


def check_gae():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        T = int(rng.integers(1, 11))
        r, v, last = rng.normal(size=T), rng.normal(size=T), rng.normal()
        g, lam = rng.uniform(), rng.uniform()
        adv, _ = gae(r, v, np.zeros(T), last, g, lam)
        delta = r + g * np.append(v[1:], last) - v
        ref = [sum((g * lam) ** i * delta[k + i] for i in range(T - k)) for k in range(T)]
        worst = max(worst, float(np.max(np.abs(adv - ref))))
    return worst < 1e-10, f"max abs error {worst:.2e}"


def check_attention():
    rng = np.random.default_rng(4)
    one = ArchSpec("att", 1)
    policy = ActorCritic.create(one, rng)
    obs = np.concatenate([rng.normal(size=2), [4.0, 4.0], rng.normal(size=2)])[None]
    singleton = bool(np.all(attention_weights(one, policy.actor, obs) == 1.0))
    spec = ArchSpec("att", 4)
    policy = ActorCritic.create(spec, rng)
    obs = np.concatenate([rng.normal(size=2), rng.uniform(4, 20, 8), rng.uniform(-8, 8, 8)])[None]
    perm = rng.permutation(4)
    shuffled = obs.copy()
    shuffled[0, 2:10] = obs[0, 2:10].reshape(4, 2)[perm].ravel()
    shuffled[0, 10:18] = obs[0, 10:18].reshape(4, 2)[perm].ravel()
    same = policy.action_mean(obs).tobytes() == policy.action_mean(shuffled).tobytes()
    return singleton and same, f"singleton weight one: {singleton}, permutation exact: {same}"


CHECKS = {
    "probit": check_probit,
    "sharp_fov_limit": check_sharp_fov,
    "information_filter": check_filter,
    "reward_telescoping": check_telescoping,
    "gradients": check_gradients,
    "gae": check_gae,
    "attention_invariance": check_attention,
}


def run_all():
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as e:  # a crashing check is a failing check
            ok, detail = False, f"{type(e).__name__}: {e}"
        out.append((name, bool(ok), detail))
    return out
