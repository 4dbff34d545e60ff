"""
Open-loop baseline
==================

Projected gradient ascent over a whole control sequence, scoring landmark
visibility at the prior means. The plan is fixed before the episode starts,
so it cannot react to what the measurements reveal.
"""

import numpy as np

from activeloc.env import reset, scenario_config
from activeloc.icr import ICRConfig, evaluate_plan, icr_objective, optimize

world = scenario_config("landmarks5")
state, _ = reset(world, seed=7)
mu0 = state.belief.mu.reshape(-1, 2)
lam0 = state.belief.info_soft

rng = np.random.default_rng(0)
plan = optimize(state.x, mu0, lam0, world, ICRConfig(horizon=world.episode_len), rng)
print("objective history (first, last):", plan.objective_history[0], plan.objective)
print("controls:\n", plan.controls.round(2))

rand = max(icr_objective(rng.uniform(-3, 3, (15, 2)), state.x, mu0, lam0, world) for _ in range(100))
print("best of 100 random plans:", round(rand, 3))

# on its own layout versus on fresh layouts
print("planning instance:", evaluate_plan(plan, world, [7])["reward_mean"])
print("other layouts    :", evaluate_plan(plan, world, range(100, 110))["reward_mean"])
