"""
Information filter and the log-det reward
=========================================

Each landmark keeps a diagonal information vector. Hard updates add 1/sigma^2
for measured landmarks; soft updates add w/sigma^2 for every landmark. The
per-step reward is the gain in log det of the soft information, so an
episode's rewards telescope to log det(final) - log det(initial).
"""

import numpy as np

from activeloc.env import reset, run_episode, scenario_config, step

world = scenario_config("landmarks3")
state, obs = reset(world, seed=0)
print("true landmarks:\n", state.y_true)
print("prior means:\n", state.belief.mu.reshape(-1, 2).round(3))

# visit the prior means in turn; controls are clamped to 3 per axis
total = 0.0
for k in range(world.episode_len):
    target = state.belief.mu.reshape(-1, 2)[k * 3 // world.episode_len]
    state, obs, r, done = step(state, target - state.x, world)
    total += r
    print(f"k={k}  x={state.x.round(2)}  visible={state.visible}  reward={r:.3f}")

lam0 = reset(world, 0)[0].belief.info_soft
print("sum of rewards        ", total)
print("log det gain of lambda", np.sum(np.log(state.belief.info_soft) - np.log(lam0)))

hover = run_episode(world, 0, lambda o, k: np.zeros(2))
print("standing still earns", round(hover.reward, 3))
