"""Open-loop baseline: projected gradient ascent on a smoothed information objective.

The planner only knows the prior landmark means ``mu0``. It optimises a fixed
control sequence so that the soft (probit-weighted) information gathered
along the resulting trajectory is maximal, and the sequence is then replayed
blindly in the environment.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .env import WorldConfig, run_episode


@dataclass(frozen=True)
class ICRConfig:
    horizon: int = 8
    step_size: float = 0.05
    iterations: int = 500
    restarts: int = 10
    rel_tol: float = 1e-6
    max_halvings: int = 30


@dataclass
class OpenLoopPlan:
    controls: np.ndarray
    objective_history: list = field(default_factory=list)
    config: ICRConfig = ICRConfig()

    @property
    def objective(self):
        return self.objective_history[-1] if self.objective_history else float("nan")

    def to_json(self):
        return json.dumps({
            "controls": np.asarray(self.controls).tolist(),
            "objective_history": [float(v) for v in self.objective_history],
            "config": asdict(self.config),
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.asarray(d["controls"], dtype=float).reshape(-1, 2),
                   list(d["objective_history"]), ICRConfig(**d["config"]))


def _objective_graph(U, x0, mu0, lambda0, world: WorldConfig):
    """Autodiff graph of the objective for a (T, 2) control tensor ``U``."""
    T = U.shape[0]
    mu0 = np.asarray(mu0, dtype=float).reshape(-1, 2)
    lam0 = np.asarray(lambda0, dtype=float).reshape(-1, 2)
    n = len(mu0)
    lower = np.tril(np.ones((T, T)))
    X = ad.add(ad.matmul(lower, U), np.asarray(x0, dtype=float)[:2])
    pick_x = np.vstack([np.ones(n), np.zeros(n)])
    pick_y = np.vstack([np.zeros(n), np.ones(n)])
    dx = ad.sub(ad.matmul(X, pick_x), mu0[:, 0])
    dy = ad.sub(ad.matmul(X, pick_y), mu0[:, 1])
    dist = ad.sqrt(ad.add(ad.mul(dx, dx), ad.mul(dy, dy)))
    arg = ad.add(ad.mul(ad.sub(dist, world.fov_radius), 1.0 / (np.sqrt(2.0) * world.kappa)), -2.0)
    w = ad.sub(0.5, ad.mul(ad.erf(arg), 0.5))
    total_w = ad.reduce_sum(w, axis=0)
    m = 1.0 / world.sigma**2
    gain = 0.0
    for c in range(2):
        lam_T = ad.add(ad.mul(total_w, m), lam0[:, c])
        gain = ad.add(gain, ad.reduce_sum(ad.log(lam_T)))
    return ad.sub(gain, float(np.sum(np.log(lam0))))


def icr_objective(controls, x0, mu0, lambda0, world: WorldConfig):
    """Soft log-det information gain of an open-loop control sequence.

    Landmark visibility is evaluated at the fixed prior means ``mu0``.
    """
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    if len(controls) == 0:
        return 0.0
    with ad.no_grad():
        return float(_objective_graph(ad.Tensor(controls), x0, mu0, lambda0, world).data)


def icr_value_and_grad(controls, x0, mu0, lambda0, world: WorldConfig):
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    if len(controls) == 0:
        return 0.0, np.zeros((0, 2))
    U = ad.Tensor(controls, requires_grad=True)
    f = _objective_graph(U, x0, mu0, lambda0, world)
    ad.backward(f)
    return float(f.data), U.grad


def _ascend(U, x0, mu0, lambda0, world, cfg: ICRConfig):
    b = world.control_bound
    U = np.clip(U, -b, b)
    f, g = icr_value_and_grad(U, x0, mu0, lambda0, world)
    history = [f]
    for _ in range(cfg.iterations):
        alpha = cfg.step_size
        accepted = False
        for _ in range(cfg.max_halvings):
            cand = np.clip(U + alpha * g, -b, b)
            fc = icr_objective(cand, x0, mu0, lambda0, world)
            if fc > f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        improvement = (fc - f) / max(abs(f), 1e-12)
        U = cand
        f, g = icr_value_and_grad(U, x0, mu0, lambda0, world)
        history.append(f)
        if improvement < cfg.rel_tol:
            break
    return U, history


def optimize(x0, mu0, lambda0, world: WorldConfig, cfg: ICRConfig = None, rng=None, init=None):
    """Multi-start projected gradient ascent; returns the best :class:`OpenLoopPlan`.

    ``init`` optionally supplies the first start's control sequence; remaining
    starts are uniform on the control box.
    """
    cfg = cfg or ICRConfig(horizon=world.episode_len)
    rng = rng if rng is not None else np.random.default_rng(0)
    b = world.control_bound
    best = None
    for r in range(cfg.restarts):
        if r == 0 and init is not None:
            U0 = np.asarray(init, dtype=float).reshape(cfg.horizon, 2)
        else:
            U0 = rng.uniform(-b, b, size=(cfg.horizon, 2))
        U, hist = _ascend(U0, x0, mu0, lambda0, world, cfg)
        if best is None or hist[-1] > best.objective_history[-1]:
            best = OpenLoopPlan(U, hist, cfg)
    return best


def replay_policy(controls):
    controls = np.asarray(controls, dtype=float)

    def act(obs, k):
        return controls[k]
    return act


def evaluate_plan(plan: OpenLoopPlan, world: WorldConfig, seeds):
    """Replay a fixed plan in real episodes; returns summary and per-episode rows."""
    if len(plan.controls) != world.episode_len:
        raise ValueError(f"plan horizon {len(plan.controls)} != episode length {world.episode_len}")
    rows = []
    for s in seeds:
        res = run_episode(world, s, replay_policy(plan.controls))
        rows.append({"seed": int(s), "reward": res.reward, "mae": res.mae,
                     "reward_land": res.reward_land, "reward_map": res.reward_map})
    rewards = np.array([r["reward"] for r in rows])
    maes = np.array([r["mae"] for r in rows])
    return {
        "reward_mean": float(rewards.mean()) if rows else float("nan"),
        "reward_std": float(rewards.std()) if rows else float("nan"),
        "mae": float(maes.mean()) if rows else float("nan"),
        "episodes": rows,
    }
