"""Episodic landmark-localization and joint exploration environments.

The environment is written as plain functions over an :class:`EpisodeState`
record: :func:`reset` starts an episode, :func:`step` advances it. The robot is
a single integrator ``x' = x + clip(u)`` with a circular field of view.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .belief import (
    LandmarkBelief,
    MapBelief,
    SensorModel,
    hard_info_update,
    logdet_gain,
    map_info_update,
    map_mean_update,
    mean_update,
    soft_info_update,
)
from .fov import FieldOfView, body_frame, hard_visible_set, soft_visibility_weight

SCENARIOS = ("landmarks3", "landmarks5", "landmarks8", "nonuniform", "joint")

# frozen field names of the per-step trajectory records
TRAJECTORY_FIELDS = ("k", "x", "u", "reward", "mu", "lambda_soft", "visible_indices")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    n_landmarks: int = 3
    episode_len: int = 8
    control_bound: float = 3.0
    landmark_range: float = 8.0
    agent_init_range: float = 2.0
    world_center: tuple = (0.0, 0.0)
    sigma: float = 0.5
    fov_radius: float = 2.0
    kappa: float = 0.5
    motion_noise_std: float = 0.0
    gamma: float = 0.99
    map_enabled: bool = False
    map_dims: tuple = (15, 15)
    world_size: float = 30.0
    map_density: float = 0.2
    rho: float = 1.0
    alpha_land: float = 1.0
    alpha_map: float = None
    info_init: tuple = None

    def __post_init__(self):
        if self.n_landmarks < 1:
            raise ConfigError(f"n_landmarks must be >= 1, got {self.n_landmarks}")
        if self.episode_len < 1:
            raise ConfigError(f"episode_len must be >= 1, got {self.episode_len}")
        if not self.control_bound > 0:
            raise ConfigError(f"control_bound must be > 0, got {self.control_bound}")
        if not 0 <= self.rho <= 1:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.motion_noise_std < 0:
            raise ConfigError("motion_noise_std must be >= 0")
        if not 0 <= self.map_density <= 1:
            raise ConfigError("map_density must lie in [0, 1]")
        if self.fov_radius <= 0 or self.kappa <= 0:
            raise ConfigError("fov_radius and kappa must be > 0")
        object.__setattr__(self, "world_center", tuple(float(c) for c in self.world_center))
        object.__setattr__(self, "map_dims", tuple(int(d) for d in self.map_dims))
        if self.info_init is not None:
            info = np.atleast_1d(np.asarray(self.info_init, dtype=float))
            if info.size not in (1, self.n_landmarks, 2 * self.n_landmarks) or np.any(info <= 0):
                raise ConfigError(f"bad info_init {self.info_init!r}")
            object.__setattr__(self, "info_init", tuple(info.tolist()))

    @property
    def fov(self):
        return FieldOfView(radius=self.fov_radius, kappa=self.kappa)

    @property
    def sensor(self):
        return SensorModel(self.sigma)

    @property
    def n_tiles(self):
        return self.map_dims[0] * self.map_dims[1] if self.map_enabled else 0

    @property
    def obs_dim(self):
        return 2 + 4 * self.n_landmarks + 2 * self.n_tiles

    @property
    def info0_vector(self):
        """Initial information per landmark coordinate (length ``2 n_l``)."""
        if self.info_init is None:
            return np.full(2 * self.n_landmarks, 1.0 / self.sigma**2)
        info = np.asarray(self.info_init, dtype=float)
        if info.size == 1:
            return np.full(2 * self.n_landmarks, info[0])
        if info.size == self.n_landmarks:
            return np.repeat(info, 2)
        return info.copy()

    @property
    def alpha_map_value(self):
        if self.alpha_map is not None:
            return self.alpha_map
        return 2.0 * self.n_landmarks / max(self.n_tiles, 1)

    def tile_positions(self):
        h, w = self.map_dims
        cx, cy = self.world_center
        half = self.world_size / 2
        xs = cx - half + (np.arange(w) + 0.5) * self.world_size / w
        ys = cy - half + (np.arange(h) + 0.5) * self.world_size / h
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)

    def to_dict(self):
        d = asdict(self)
        d["world_center"] = list(self.world_center)
        d["map_dims"] = list(self.map_dims)
        if self.info_init is not None:
            d["info_init"] = list(self.info_init)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world config keys {sorted(unknown)}")
        d = dict(d)
        for key in ("world_center", "map_dims", "info_init"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def scenario_config(name, **overrides):
    """World configuration for one of the named evaluation scenarios."""
    base = {
        "landmarks3": dict(n_landmarks=3, episode_len=8, landmark_range=8.0),
        "landmarks5": dict(n_landmarks=5, episode_len=15, landmark_range=10.0),
        "landmarks8": dict(n_landmarks=8, episode_len=18, landmark_range=12.0),
        "nonuniform": dict(n_landmarks=3, episode_len=8, landmark_range=8.0,
                           info_init=(50 * 4.0, 4.0, 4.0)),
        "joint": dict(n_landmarks=5, episode_len=15, landmark_range=10.0,
                      world_center=(15.0, 15.0), map_enabled=True, world_size=30.0,
                      map_dims=(15, 15)),
    }
    if name not in base:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    params = {**base[name], **overrides}
    return WorldConfig(**params)


@dataclass
class EpisodeState:
    x: np.ndarray
    y_true: np.ndarray
    belief: LandmarkBelief
    k: int
    rng: np.random.Generator
    map_true: np.ndarray = None
    map_belief: MapBelief = None
    xi: np.ndarray = None
    visible: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    reward_land: float = 0.0
    reward_map: float = 0.0
    u_applied: np.ndarray = None


def generate_map_ground_truth(config: WorldConfig, rng, density=None):
    """Random axis-aligned rectangular obstacles; +1 occupied, -1 free."""
    density = config.map_density if density is None else density
    h, w = config.map_dims
    grid = -np.ones((h, w), dtype=int)
    target = int(round(density * h * w))
    if target >= h * w:
        return np.ones(h * w, dtype=int)
    max_side = max(2, min(h, w) // 4)
    while np.count_nonzero(grid > 0) < target:
        rh, rw = rng.integers(1, max_side + 1, size=2)
        r0 = rng.integers(0, h - rh + 1)
        c0 = rng.integers(0, w - rw + 1)
        grid[r0:r0 + rh, c0:c0 + rw] = 1
    return grid.ravel()


def assemble_observation(state: EpisodeState, config: WorldConfig):
    """Flat MDP state ``[x; lambda_soft; mu]`` plus ``[xi; Y_map]`` when mapping."""
    parts = [state.x, state.belief.info_soft, state.belief.mu]
    if config.map_enabled:
        parts += [state.xi, state.map_belief.info]
    return np.concatenate(parts).astype(float)


def reset(config: WorldConfig, seed):
    """Start a seeded episode; returns ``(state, observation)``."""
    if not isinstance(config, WorldConfig):
        raise ConfigError("reset expects a WorldConfig")
    rng = np.random.default_rng(seed)
    c = np.asarray(config.world_center)
    x0 = c + rng.uniform(-config.agent_init_range, config.agent_init_range, size=2)
    y = c + rng.uniform(-config.landmark_range, config.landmark_range,
                        size=(config.n_landmarks, 2))
    mu0 = y + config.sigma * rng.standard_normal(size=y.shape)
    belief = LandmarkBelief.initial(mu0.ravel(), config.info0_vector)
    state = EpisodeState(x=x0, y_true=y, belief=belief, k=0, rng=rng)
    if config.map_enabled:
        state.map_true = generate_map_ground_truth(config, rng)
        state.map_belief = MapBelief.initial(config.tile_positions(), 1.0)
        state.xi = soft_visibility_weight(body_frame(x0, state.map_belief.tile_positions),
                                          config.fov)
    return state, assemble_observation(state, config)


def clamp_control(u, bound):
    return np.clip(np.asarray(u, dtype=float).reshape(2), -bound, bound)


def combined_reward(r_land, r_map, config: WorldConfig):
    return (config.rho * config.alpha_land * r_land
            + (1.0 - config.rho) * config.alpha_map_value * r_map)


def step(state: EpisodeState, u, config: WorldConfig):
    """Advance one step; returns ``(state, observation, reward, done)``."""
    if state.k >= config.episode_len:
        raise RuntimeError("cannot step a terminated episode")
    rng = state.rng
    fov, model = config.fov, config.sensor
    u = clamp_control(u, config.control_bound)
    x = state.x + u
    if config.motion_noise_std > 0:
        x = x + config.motion_noise_std * rng.standard_normal(2)

    visible = hard_visible_set(x, state.y_true, fov)
    z = state.y_true[visible] + config.sigma * rng.standard_normal((len(visible), 2))
    belief = mean_update(state.belief, z, visible, model)
    if len(visible):
        belief = hard_info_update(belief, visible, model.info_rate)
    mu = belief.mu.reshape(-1, 2)
    w = soft_visibility_weight(body_frame(x, mu), fov)
    belief = soft_info_update(belief, w, model.info_rate)
    r_land = logdet_gain(belief.info_soft, state.belief.info_soft)

    r_map = 0.0
    map_belief, xi = state.map_belief, state.xi
    if config.map_enabled:
        tiles = map_belief.tile_positions
        xi = soft_visibility_weight(body_frame(x, tiles), fov)
        seen = hard_visible_set(x, tiles, fov)
        readings = state.map_true[seen] + config.sigma * rng.standard_normal(len(seen))
        new_map = map_info_update(map_belief, xi, config.sigma)
        new_map = map_mean_update(new_map, readings, seen, config.sigma)
        r_map = logdet_gain(new_map.info, map_belief.info)
        map_belief = new_map
        reward = combined_reward(r_land, r_map, config)
    else:
        reward = r_land

    new_state = replace(state, x=x, belief=belief, k=state.k + 1, map_belief=map_belief,
                        xi=xi, visible=visible, reward_land=r_land, reward_map=r_map,
                        u_applied=u)
    done = new_state.k == config.episode_len
    return new_state, assemble_observation(new_state, config), float(reward), done


def mae(mu_final, y_true):
    """Mean absolute error over all landmark coordinates."""
    mu_final = np.asarray(mu_final, dtype=float).ravel()
    y_true = np.asarray(y_true, dtype=float).ravel()
    if mu_final.shape != y_true.shape:
        raise ValueError(f"dimension mismatch {mu_final.shape} vs {y_true.shape}")
    return float(np.mean(np.abs(mu_final - y_true)))


def mae_euclidean(mu_final, y_true):
    """Mean Euclidean landmark position error."""
    d = np.asarray(mu_final, dtype=float).reshape(-1, 2) - np.asarray(y_true, dtype=float).reshape(-1, 2)
    return float(np.mean(np.hypot(d[:, 0], d[:, 1])))


@dataclass
class EpisodeResult:
    reward: float
    reward_land: float
    reward_map: float
    mae: float
    final_state: EpisodeState
    records: list


def _record(state, u, reward):
    return {
        "k": int(state.k),
        "x": [float(v) for v in state.x],
        "u": None if u is None else [float(v) for v in u],
        "reward": None if reward is None else float(reward),
        "mu": [float(v) for v in state.belief.mu],
        "lambda_soft": [float(v) for v in state.belief.info_soft],
        "visible_indices": [int(j) for j in state.visible],
    }


def run_episode(config: WorldConfig, seed, policy, record=False):
    """Roll out ``policy(obs, k) -> u`` for a full episode.

    ``u`` in the records is the control actually applied (after clamping).
    """
    state, obs = reset(config, seed)
    records = [_record(state, None, None)] if record else []
    total = land = mapr = 0.0
    done = False
    while not done:
        u = policy(obs, state.k)
        state, obs, r, done = step(state, u, config)
        total += r
        land += state.reward_land
        mapr += state.reward_map
        if record:
            records.append(_record(state, state.u_applied, r))
    return EpisodeResult(total, land, mapr, mae(state.belief.mu, state.y_true), state, records)


def trajectory_json(config: WorldConfig, seed, records, **meta):
    doc = {"seed": int(seed), "config": config.to_dict(), "fields": list(TRAJECTORY_FIELDS),
           "records": records, **meta}
    return json.dumps(doc, indent=1, sort_keys=True)


def random_policy(bound, rng):
    """Uniform controls on the control box."""
    def act(obs, k):
        return rng.uniform(-bound, bound, size=2)
    return act
