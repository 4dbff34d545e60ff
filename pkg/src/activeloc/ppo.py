"""Proximal policy optimisation for the active-localisation environments."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .env import WorldConfig, mae, reset, step
from .nets import LOG_STD_BOUNDS, ActorCritic, ArchSpec, forward, prepare_features

log = logging.getLogger(__name__)

EVAL_SEED_BASE = 1_000_000


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    lr_anneal: bool = True
    n_envs: int = 8
    rollout_len: int = None
    epochs: int = 4
    minibatch: int = 64
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_adv: bool = True
    log_std_init: float = 0.0
    shared_params: bool = False
    eval_interval: int = 20_000
    eval_episodes: int = 10
    checkpoint_interval: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown PPO config keys {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- sampling

def sample_action(mean, log_std, rng):
    """Draw ``u = mean + exp(log_std) * eps``; returns ``(u, log_prob)``.

    Works on a single mean (2,) or a batch (B, 2). The action is not clamped.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    batch = mean.reshape(-1, mean.shape[-1])
    eps = rng.standard_normal(batch.shape)
    u = batch + np.exp(log_std) * eps
    with ad.no_grad():
        lp = ad.gaussian_log_prob(batch, log_std, u).data
    if mean.ndim == 1:
        return u[0], float(lp[0])
    return u, lp


# --------------------------------------------------------------------- GAE

def gae(rewards, values, dones, last_value, gamma, lam):
    """Generalised advantage estimates and value targets.

    ``rewards``, ``values`` and ``dones`` have shape (T,) or (T, E);
    ``dones[t]`` marks that the episode ended after step ``t``.
    ``last_value`` bootstraps the state after the final step (ignored where
    that step was terminal). Returns ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape[0] == 0:
        raise ValueError("gae needs a non-empty buffer")
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    next_v = np.asarray(last_value, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        delta = rewards[t] + gamma * next_v * notdone[t] - values[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_v = values[t]
    return adv, adv + values


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray = None
    returns: np.ndarray = None

    def __post_init__(self):
        T = self.rewards.shape[0]
        for name in ("obs", "actions", "logp", "values", "dones"):
            if getattr(self, name).shape[0] != T:
                raise ValueError(f"buffer field {name} is misaligned")

    def compute_advantages(self, gamma, lam):
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones,
                                            self.last_values, gamma, lam)
        return self

    def flat(self):
        if self.advantages is None:
            raise RuntimeError("compute advantages before flattening the buffer")
        n = self.rewards.size
        return {
            "obs": self.obs.reshape(n, -1),
            "actions": self.actions.reshape(n, -1),
            "logp": self.logp.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
            "values": self.values.reshape(n),
        }


# -------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


# ------------------------------------------------------------------ losses

def _leaves(params):
    return {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}


def surrogate_loss(spec, actor_t, log_std_t, feats, actions, logp_old, adv, clip_eps):
    """Negative clipped surrogate; also returns ratio and new log-probs."""
    mean = forward(spec, actor_t, feats)
    logp = ad.gaussian_log_prob(mean, log_std_t, actions)
    ratio = ad.exp(ad.sub(logp, logp_old))
    surr1 = ad.mul(ratio, adv)
    surr2 = ad.mul(ad.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
    loss = ad.neg(ad.reduce_mean(ad.minimum(surr1, surr2)))
    return loss, ratio, logp


def value_loss(spec, critic_t, feats, returns):
    v = ad.reshape(forward(spec, critic_t, feats), (len(returns),))
    d = ad.sub(v, returns)
    return ad.mul(ad.reduce_mean(ad.mul(d, d)), 0.5)


@dataclass
class Optimisers:
    actor: Adam
    critic: Adam

    @classmethod
    def create(cls, lr):
        return cls(Adam(lr), Adam(lr))


def ppo_update(policy: ActorCritic, batch, hyper: PPOConfig, rng, opt: Optimisers = None):
    """Run the PPO epochs over a flattened batch; mutates and returns ``policy``.

    Returns ``(policy, diagnostics)``. A non-finite loss restores the
    parameters to their state before the call and raises ``FloatingPointError``.
    """
    opt = opt or Optimisers.create(hyper.lr)
    spec = policy.spec
    snapshot = policy.copy()
    n = len(batch["returns"])
    adv_all = batch["advantages"]
    if hyper.normalize_adv and n > 1:
        adv_all = (adv_all - adv_all.mean()) / (adv_all.std() + 1e-8)
    shared = policy.shared
    diag = {"policy_loss": [], "value_loss": [], "clip_frac": [], "approx_kl": [],
            "entropy": [], "grad_norm": []}

    for _ in range(hyper.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.minibatch):
            idx = perm[start:start + hyper.minibatch]
            feats = prepare_features(spec, batch["obs"][idx])
            actions = batch["actions"][idx]
            returns = batch["returns"][idx]
            actor_t = _leaves(policy.actor)
            critic_t = _leaves(policy.critic)
            log_std_t = ad.Tensor(policy.log_std, requires_grad=True)

            pi_loss, ratio, logp = surrogate_loss(spec, actor_t, log_std_t, feats, actions,
                                                  batch["logp"][idx], adv_all[idx], hyper.clip_eps)
            entropy = float(np.sum(policy.log_std) + policy.log_std.size * 0.5 * math.log(2 * math.pi * math.e))
            total_pi = pi_loss
            if hyper.ent_coef:
                total_pi = ad.sub(pi_loss, ad.mul(ad.reduce_sum(log_std_t), hyper.ent_coef))
            v_loss = value_loss(spec, policy.critic_view(actor_t, critic_t), feats, returns)

            if not (np.isfinite(pi_loss.item()) and np.isfinite(v_loss.item())):
                policy.actor, policy.critic = snapshot.actor, snapshot.critic
                policy.log_std = snapshot.log_std
                raise FloatingPointError(
                    f"non-finite PPO loss (policy={pi_loss.item()}, value={v_loss.item()})")

            if shared:
                ad.backward(ad.add(total_pi, ad.mul(v_loss, hyper.vf_coef)))
            else:
                ad.backward(total_pi)
                ad.backward(v_loss)

            ga = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                  for k, t in actor_t.items()}
            ga["__log_std"] = log_std_t.grad if log_std_t.grad is not None else np.zeros(2)
            gc = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                  for k, t in critic_t.items()}
            if shared:
                ga.update({"__critic/" + k: g for k, g in gc.items()})
                norm = clip_grad_norm(ga, hyper.max_grad_norm)
                gc = {k[9:]: ga.pop(k) for k in list(ga) if k.startswith("__critic/")}
            else:
                norm = clip_grad_norm(ga, hyper.max_grad_norm)
                clip_grad_norm(gc, hyper.max_grad_norm)

            params = dict(policy.actor)
            params["__log_std"] = policy.log_std
            opt.actor.step(params, ga)
            opt.critic.step(policy.critic, gc)
            np.clip(policy.log_std, *LOG_STD_BOUNDS, out=policy.log_std)

            r = ratio.data
            diag["policy_loss"].append(pi_loss.item())
            diag["value_loss"].append(v_loss.item())
            diag["clip_frac"].append(float(np.mean(np.abs(r - 1.0) > hyper.clip_eps)))
            diag["approx_kl"].append(float(np.mean(batch["logp"][idx] - logp.data)))
            diag["entropy"].append(entropy)
            diag["grad_norm"].append(norm)
    return policy, {k: float(np.mean(v)) for k, v in diag.items()}


# ---------------------------------------------------------------- rollouts

def episode_seed(seed, env_index, episode):
    return int(np.random.SeedSequence([seed, env_index, episode]).generate_state(1)[0])


@dataclass
class EnvSlot:
    index: int
    action_rng: np.random.Generator
    episodes: int = 0
    state: object = None
    obs: np.ndarray = None
    ep_return: float = 0.0


def _collect(policy, world, slots, seed, horizon):
    """Step a group of environments in lockstep for ``horizon`` steps."""
    E = len(slots)
    obs_buf = np.zeros((horizon, E, world.obs_dim))
    act_buf = np.zeros((horizon, E, 2))
    logp_buf = np.zeros((horizon, E))
    rew_buf = np.zeros((horizon, E))
    val_buf = np.zeros((horizon, E))
    done_buf = np.zeros((horizon, E))
    finished = []
    for slot in slots:
        if slot.state is None:
            slot.state, slot.obs = reset(world, episode_seed(seed, slot.index, slot.episodes))
    for t in range(horizon):
        obs = np.stack([s.obs for s in slots])
        mean, v = policy.act_value(obs)
        obs_buf[t], val_buf[t] = obs, v
        for i, slot in enumerate(slots):
            u, lp = sample_action(mean[i], policy.log_std, slot.action_rng)
            act_buf[t, i], logp_buf[t, i] = u, lp
            slot.state, slot.obs, r, done = step(slot.state, u, world)
            rew_buf[t, i] = r
            slot.ep_return += r
            if done:
                done_buf[t, i] = 1.0
                finished.append(slot.ep_return)
                slot.episodes += 1
                slot.ep_return = 0.0
                slot.state, slot.obs = reset(world, episode_seed(seed, slot.index, slot.episodes))
    last_v = policy.value(np.stack([s.obs for s in slots]))
    return (obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf, last_v), slots, finished


def _collect_remote(args):
    return _collect(*args)


def collect_rollout(policy, world, slots, seed, horizon, pool=None, workers=1):
    """Collect one rollout from all environment slots.

    With ``workers > 1`` the slots are split across processes; every slot owns
    its random streams, so results do not depend on the split.
    """
    if pool is None or workers <= 1:
        parts, slots, finished = _collect(policy, world, slots, seed, horizon)
        groups = [(parts, slots)]
        finished_all = finished
    else:
        chunks = [c for c in np.array_split(np.arange(len(slots)), workers) if len(c)]
        jobs = [(policy, world, [slots[i] for i in c], seed, horizon) for c in chunks]
        results = list(pool.map(_collect_remote, jobs))
        groups = [(r[0], r[1]) for r in results]
        finished_all = [f for r in results for f in r[2]]
        slots = [s for r in results for s in r[1]]
    cat = [np.concatenate([g[0][k] for g in groups], axis=1) for k in range(6)]
    last_v = np.concatenate([g[0][6] for g in groups])
    buf = RolloutBuffer(obs=cat[0], actions=cat[1], logp=cat[2], rewards=cat[3],
                        values=cat[4], dones=cat[5], last_values=last_v)
    return buf, slots, finished_all


# -------------------------------------------------------------- evaluation

def evaluate_policy(policy, world, seeds, deterministic=True, rng=None):
    """Lockstep evaluation over episode seeds.

    Returns a dict of per-episode arrays: ``reward``, ``reward_land``,
    ``reward_map``, ``mae`` and the final ``states``.
    """
    seeds = list(seeds)
    if not seeds:
        return {"reward": np.zeros(0), "reward_land": np.zeros(0),
                "reward_map": np.zeros(0), "mae": np.zeros(0), "states": []}
    started = [reset(world, s) for s in seeds]
    states = [s for s, _ in started]
    obs = np.stack([o for _, o in started])
    n = len(seeds)
    tot, land, mp = np.zeros(n), np.zeros(n), np.zeros(n)
    for _ in range(world.episode_len):
        mean = policy.action_mean(obs)
        if not deterministic:
            mean = mean + np.exp(policy.log_std) * rng.standard_normal(mean.shape)
        for i in range(n):
            states[i], obs[i], r, _ = step(states[i], mean[i], world)
            tot[i] += r
            land[i] += states[i].reward_land
            mp[i] += states[i].reward_map
    maes = np.array([mae(s.belief.mu, s.y_true) for s in states])
    return {"reward": tot, "reward_land": land, "reward_map": mp, "mae": maes, "states": states}


def eval_seeds(count, base=EVAL_SEED_BASE):
    return [base + i for i in range(count)]


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    policy: ActorCritic
    curve: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    env_steps: int = 0


def train(world: WorldConfig, hyper: PPOConfig = PPOConfig(), arch="att", seed=0,
          budget=200_000, workers=1, on_checkpoint=None):
    """Train an actor-critic with PPO for ``budget`` environment steps.

    Returns a :class:`TrainResult` whose ``curve`` rows are
    ``(env_steps, mean_eval_reward, std_eval_reward, mean_mae)`` from
    deterministic evaluations every ``hyper.eval_interval`` steps and at the end.
    ``on_checkpoint(policy, env_steps)`` is called every
    ``hyper.checkpoint_interval`` steps when that is positive.
    """
    spec = ArchSpec.for_world(arch, world)
    init_rng = np.random.default_rng([seed, 0])
    policy = ActorCritic.create(spec, init_rng, hyper.log_std_init)
    if hyper.shared_params:
        out = "fuse.out" if arch == "joint" else "head.out"
        policy.critic = {k: v for k, v in policy.critic.items() if k.startswith(out)}
    result = TrainResult(policy)
    if budget <= 0:
        return result

    horizon = hyper.rollout_len or world.episode_len
    per_rollout = horizon * hyper.n_envs
    n_updates = math.ceil(budget / per_rollout)
    update_rng = np.random.default_rng([seed, 1])
    slots = [EnvSlot(i, np.random.default_rng([seed, 2, i])) for i in range(hyper.n_envs)]
    opt = Optimisers.create(hyper.lr)
    seeds = eval_seeds(hyper.eval_episodes)
    gamma = hyper.gamma

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        next_eval = hyper.eval_interval
        next_ckpt = hyper.checkpoint_interval
        for it in range(n_updates):
            if hyper.lr_anneal:
                opt.actor.lr = opt.critic.lr = hyper.lr * (1.0 - it / n_updates)
            buf, slots, finished = collect_rollout(policy, world, slots, seed, horizon,
                                                   pool, workers)
            buf.compute_advantages(gamma, hyper.gae_lambda)
            policy, diag = ppo_update(policy, buf.flat(), hyper, update_rng, opt)
            result.env_steps += per_rollout
            if finished:
                diag["train_return"] = float(np.mean(finished))
            diag["env_steps"] = result.env_steps
            result.diagnostics.append(diag)
            last = it == n_updates - 1
            if hyper.eval_interval and (result.env_steps >= next_eval or last):
                ev = evaluate_policy(policy, world, seeds)
                row = (result.env_steps, float(ev["reward"].mean()),
                       float(ev["reward"].std()), float(ev["mae"].mean()))
                result.curve.append(row)
                log.info("steps=%d eval_reward=%.3f±%.3f mae=%.3f", *row)
                while next_eval <= result.env_steps:
                    next_eval += hyper.eval_interval
            if on_checkpoint and hyper.checkpoint_interval and result.env_steps >= next_ckpt:
                on_checkpoint(policy, result.env_steps)
                while next_ckpt <= result.env_steps:
                    next_ckpt += hyper.checkpoint_interval
    finally:
        if pool is not None:
            pool.shutdown()
    return result
