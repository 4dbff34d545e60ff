"""Circular field-of-view geometry and the probit-smoothed visibility weight."""

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class FieldOfView:
    """Circular sensing footprint centred on the robot.

    Parameters
    ----------
    radius : float
        Sensing radius in world units.
    kappa : float
        Smoothing factor of the probit used for the soft visibility weight.
    """

    radius: float = 2.0
    kappa: float = 0.5
    shape: str = "circle"

    def __post_init__(self):
        if self.shape != "circle":
            raise ValueError(f"unsupported FoV shape {self.shape!r}")
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")


def body_frame(x, p, heading=None):
    """Express world point(s) ``p`` in the body frame of a robot at ``x``.

    Only the position part of ``x`` is used. ``heading`` is accepted for
    pose-carrying states but no rotation is applied.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return p - x[..., :2]


def signed_distance(q, fov: FieldOfView):
    """Distance from body-frame point(s) ``q`` to the FoV boundary.

    Negative inside, positive outside, zero on the boundary. Works on the last
    axis, so ``q`` of shape (..., 2) gives a result of shape (...).
    """
    q = np.asarray(q, dtype=float)
    return np.hypot(q[..., 0], q[..., 1]) - fov.radius


def probit(x, kappa):
    """Shifted Gaussian-CDF squashing ``0.5 * (1 + erf(x / (sqrt(2) kappa) - 2))``."""
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    return 0.5 * (1.0 + erf(np.asarray(x, dtype=float) / (SQRT2 * kappa) - 2.0))


def soft_visibility_weight(q, fov: FieldOfView):
    """Smooth visibility in [0, 1]: ``1 - probit(signed_distance(q))``."""
    w = 1.0 - probit(signed_distance(q, fov), fov.kappa)
    return np.clip(w, 0.0, 1.0)


def hard_visible_set(x, points, fov: FieldOfView):
    """Indices of ``points`` inside the closed FoV of a robot at ``x``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    d = signed_distance(body_frame(x, points), fov)
    return np.flatnonzero(d <= 0.0)
