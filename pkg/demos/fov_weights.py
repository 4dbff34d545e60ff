"""
Soft field of view
==================

The hard sensor sees a landmark only inside the radius-2 disc. The soft
version replaces that indicator by 1 - Phi(d), d being the signed distance to
the disc boundary, so information gain becomes differentiable in the robot
position.
"""

import numpy as np

from activeloc.fov import FieldOfView, hard_visible_set, probit, soft_visibility_weight

fov = FieldOfView(radius=2.0, kappa=0.5)

# distance from the robot, out to well beyond the disc
r = np.linspace(0, 5, 11)
q = np.stack([r, np.zeros_like(r)], axis=1)
w = soft_visibility_weight(q, fov)
for ri, wi in zip(r, w):
    print(f"range {ri:4.1f}  soft weight {wi:.4f}")

# the built-in -2 shift puts the 50% point outside the disc, at d = 2 sqrt(2) kappa
print("Phi(0) =", probit(0.0, 0.5))
print("50% point at range", 2.0 + 2 * np.sqrt(2) * 0.5)

# smaller kappa -> the soft weight approaches the hard indicator
for kappa in (0.5, 0.1, 0.01):
    sharp = FieldOfView(radius=2.0, kappa=kappa)
    print(f"kappa {kappa:5.2f}:", np.round(soft_visibility_weight(q, sharp), 3))

landmarks = np.array([[1.0, 0.5], [3.0, 0.0], [-1.5, -1.0]])
print("hard-visible from the origin:", hard_visible_set(np.zeros(2), landmarks, fov))
