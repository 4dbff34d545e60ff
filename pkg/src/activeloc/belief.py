"""Diagonal information-form Kalman filter over static landmarks and map tiles.

Two information tracks are kept for the landmarks:

* ``info_hard`` is the estimator's own information, updated only for
  landmarks that were actually measured (hard FoV membership).
* ``info_soft`` is updated for every landmark with a probit visibility weight
  and feeds the reward and the policy observation.

With ``H = I`` and ``V = sigma^2 I`` every information matrix stays diagonal,
so beliefs store diagonals only.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SensorModel:
    sigma: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sensor noise sigma must be > 0, got {self.sigma}")

    @property
    def H(self):
        return np.eye(2)

    @property
    def V(self):
        return self.sigma**2 * np.eye(2)

    @property
    def info_rate(self):
        """Scalar ``1 / sigma^2`` representing ``H^T V^-1 H``."""
        return 1.0 / self.sigma**2


def sensor_info_matrix(model: SensorModel):
    """Return ``H^T V^-1 H`` as a 2x2 matrix."""
    if not model.sigma > 0:
        raise ValueError(f"sensor noise sigma must be > 0, got {model.sigma}")
    H, V = model.H, model.V
    return H.T @ np.linalg.solve(V, H)


@dataclass(frozen=True)
class LandmarkBelief:
    """Posterior means and diagonal information for ``n_l`` 2-D landmarks.

    All three arrays are flat of length ``2 * n_l`` laid out as
    ``(x_0, y_0, x_1, y_1, ...)``.
    """

    mu: np.ndarray
    info_hard: np.ndarray
    info_soft: np.ndarray

    @property
    def n_landmarks(self):
        return len(self.mu) // 2

    @classmethod
    def initial(cls, mu0, info0):
        mu0 = np.asarray(mu0, dtype=float).ravel()
        info0 = np.broadcast_to(np.asarray(info0, dtype=float), mu0.shape).copy()
        if np.any(info0 <= 0):
            raise ValueError("initial information must be positive")
        return cls(mu=mu0.copy(), info_hard=info0, info_soft=info0.copy())


def _coord_index(visible):
    visible = np.asarray(visible, dtype=int).ravel()
    return np.stack([2 * visible, 2 * visible + 1], axis=-1).ravel()


def _check_indices(visible, n):
    visible = np.asarray(visible, dtype=int).ravel()
    if visible.size and (visible.min() < 0 or visible.max() >= n):
        raise IndexError(f"visible indices {visible.tolist()} out of range for {n} landmarks")
    return visible


def hard_info_update(belief: LandmarkBelief, visible, m):
    """Add ``m`` to both information coordinates of every visible landmark."""
    if not m > 0:
        raise ValueError(f"info rate must be > 0, got {m}")
    visible = _check_indices(visible, belief.n_landmarks)
    info = belief.info_hard.copy()
    info[_coord_index(visible)] += m
    return replace(belief, info_hard=info)


def soft_info_update(belief: LandmarkBelief, weights, m):
    """Add ``weights[j] * m`` to both soft-information coordinates of landmark j."""
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape != (belief.n_landmarks,):
        raise ValueError(f"expected {belief.n_landmarks} weights, got {weights.shape}")
    if np.any(weights < 0) or np.any(weights > 1):
        raise ValueError("visibility weights must lie in [0, 1]")
    return replace(belief, info_soft=belief.info_soft + m * np.repeat(weights, 2))


def mean_update(belief: LandmarkBelief, z, visible, model: SensorModel):
    """Fuse world-frame measurements ``z`` of the ``visible`` landmarks into the means.

    Uses the hard information *before* its own update as prior precision:
    ``mu' = (lam * mu + z / sigma^2) / (lam + 1 / sigma^2)`` per coordinate.
    """
    visible = _check_indices(visible, belief.n_landmarks)
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    if len(z) != len(visible):
        raise ValueError(f"{len(z)} measurements for {len(visible)} visible landmarks")
    if not len(visible):
        return belief
    idx = _coord_index(visible)
    lam = belief.info_hard[idx]
    r = model.info_rate
    mu = belief.mu.copy()
    mu[idx] = (lam * mu[idx] + r * z.ravel()) / (lam + r)
    return replace(belief, mu=mu)


def logdet_gain(info_next, info_prev):
    """``log det diag(info_next) - log det diag(info_prev)``."""
    info_next = np.asarray(info_next, dtype=float)
    info_prev = np.asarray(info_prev, dtype=float)
    if info_next.shape != info_prev.shape:
        raise ValueError(f"shape mismatch {info_next.shape} vs {info_prev.shape}")
    if np.any(info_next <= 0) or np.any(info_prev <= 0):
        raise ValueError("information entries must be positive")
    return float(np.sum(np.log(info_next) - np.log(info_prev)))


@dataclass(frozen=True)
class MapBelief:
    """Per-tile occupancy belief.

    ``info`` is the soft (probit-weighted) information used for reward and
    observation; ``info_hard`` is the estimator precision behind ``occ_mean``.
    """

    info: np.ndarray
    occ_mean: np.ndarray
    tile_positions: np.ndarray
    info_hard: np.ndarray = None

    def __post_init__(self):
        if self.info_hard is None:
            object.__setattr__(self, "info_hard", np.array(self.info, dtype=float))

    @property
    def n_tiles(self):
        return len(self.info)

    @classmethod
    def initial(cls, tile_positions, info0=1.0):
        tile_positions = np.asarray(tile_positions, dtype=float).reshape(-1, 2)
        n = len(tile_positions)
        return cls(
            info=np.full(n, float(info0)),
            occ_mean=np.zeros(n),
            tile_positions=tile_positions,
            info_hard=np.full(n, float(info0)),
        )


def map_info_update(belief: MapBelief, xi, sigma):
    """Soft map information update ``Y'_j = Y_j + xi_j / sigma^2``."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.shape != belief.info.shape:
        raise ValueError(f"expected {belief.info.shape} weights, got {xi.shape}")
    if np.any(xi < 0) or np.any(xi > 1):
        raise ValueError("map visibility weights must lie in [0, 1]")
    return replace(belief, info=belief.info + xi / sigma**2)


def map_mean_update(belief: MapBelief, z, visible, sigma):
    """Scalar information-filter fusion of occupancy readings of visible tiles."""
    visible = np.asarray(visible, dtype=int).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if len(z) != len(visible):
        raise ValueError(f"{len(z)} readings for {len(visible)} visible tiles")
    if not len(visible):
        return belief
    r = 1.0 / sigma**2
    lam = belief.info_hard[visible]
    occ = belief.occ_mean.copy()
    occ[visible] = (lam * occ[visible] + r * z) / (lam + r)
    info_hard = belief.info_hard.copy()
    info_hard[visible] += r
    return replace(belief, occ_mean=occ, info_hard=info_hard)


def threshold_occupancy(belief: MapBelief):
    """Binary map estimate: +1 where ``occ_mean > 0``, otherwise -1."""
    return np.where(belief.occ_mean > 0, 1, -1)
