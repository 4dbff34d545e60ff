"""
A short PPO run
===============

A few thousand steps on the 3-landmark scenario, enough to see the learning
curve move. Full desk-scale runs use 200k steps (see the CLI).
"""

import numpy as np

from activeloc.env import random_policy, run_episode, scenario_config
from activeloc.ppo import PPOConfig, eval_seeds, evaluate_policy, train

world = scenario_config("landmarks3")
res = train(world, PPOConfig(eval_interval=5_000, eval_episodes=10), arch="att", seed=0,
            budget=20_000)
for steps, mean, std, mae in res.curve:
    print(f"{steps:6d} steps  eval reward {mean:.2f} ± {std:.2f}  mae {mae:.3f}")

rng = np.random.default_rng(0)
rand = np.mean([run_episode(world, s, random_policy(3.0, rng)).reward for s in eval_seeds(10)])
print("random policy on the same episodes:", round(rand, 2))
print("trained policy:", evaluate_policy(res.policy, world, eval_seeds(10))["reward"].mean().round(2))
