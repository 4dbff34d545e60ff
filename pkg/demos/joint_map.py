"""
Landmarks plus an occupancy map
===============================

In the joint task the reward mixes landmark information and map-tile
information with weight rho. The same trajectory scores differently under
rho = 1 (landmarks only) and rho = 0.2 (mostly map).
"""

import numpy as np

from activeloc.env import run_episode, scenario_config

controls = np.tile([[2.0, 1.0], [-1.0, 2.0]], (8, 1))[:15]
for rho in (1.0, 0.2):
    world = scenario_config("joint", rho=rho)
    res = run_episode(world, 0, lambda o, k: controls[k])
    print(f"rho={rho}: total {res.reward:.2f}  landmark {res.reward_land:.2f}  map {res.reward_map:.2f}")

world = scenario_config("joint")
print("observation length:", world.obs_dim, "=", 2, "+ 4 x", world.n_landmarks, "+ 2 x", world.n_tiles)
print("map weight alpha_map = 2 n_l / n_m =", world.alpha_map_value)
