"""Actor-critic networks: attention policy, MLP baseline and the joint map variant.

Parameters live in plain ``dict[str, ndarray]``; the forward functions build
:mod:`activeloc.autodiff` graphs from them, so the same code serves rollout
inference (under ``no_grad``) and training.

Raw observations go through a fixed feature transform before the network:
the agent position is centred and scaled, landmark means are taken
relative to the agent (same scale), information values enter as
``log(info / info_ref)``. Landmark rows are ``(lam_x, lam_y, mu_x, mu_y)``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

ARCHS = ("att", "mlp", "joint")
LOG_STD_BOUNDS = (-5.0, 2.0)
EMB = 32
HEAD = 64
LM_HIDDEN = 64
CONV_CHANNELS = (8, 16)
CONV_KERNEL = 3


@dataclass(frozen=True)
class ArchSpec:
    arch: str
    n_landmarks: int
    map_dims: tuple = None
    pos_center: tuple = (0.0, 0.0)
    pos_scale: float = 4.0
    info_ref: float = 4.0
    map_info_ref: float = 1.0
    relative: bool = True

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if (self.arch == "joint") != (self.map_dims is not None):
            raise ValueError("map_dims must be given exactly for the joint architecture")
        object.__setattr__(self, "pos_center", tuple(float(c) for c in self.pos_center))
        if self.map_dims is not None:
            object.__setattr__(self, "map_dims", tuple(int(d) for d in self.map_dims))

    @property
    def n_tiles(self):
        return 0 if self.map_dims is None else self.map_dims[0] * self.map_dims[1]

    @property
    def obs_dim(self):
        return 2 + 4 * self.n_landmarks + 2 * self.n_tiles

    def to_dict(self):
        d = asdict(self)
        d["pos_center"] = list(self.pos_center)
        d["map_dims"] = None if self.map_dims is None else list(self.map_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["pos_center"] = tuple(d["pos_center"])
        if d.get("map_dims") is not None:
            d["map_dims"] = tuple(d["map_dims"])
        return cls(**d)

    @classmethod
    def for_world(cls, arch, world):
        """Spec matching a :class:`activeloc.env.WorldConfig`."""
        return cls(
            arch=arch,
            n_landmarks=world.n_landmarks,
            map_dims=world.map_dims if arch == "joint" else None,
            pos_center=world.world_center,
            pos_scale=0.5 * float(world.landmark_range),
            info_ref=1.0 / world.sigma**2,
        )


# ------------------------------------------------------------------ features

def prepare_features(spec: ArchSpec, obs):
    """Split and normalise a batch of flat observations (B, obs_dim)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if obs.shape[1] != spec.obs_dim:
        raise ValueError(f"observation width {obs.shape[1]} != expected {spec.obs_dim}")
    n = spec.n_landmarks
    B = obs.shape[0]
    c = np.asarray(spec.pos_center)
    xf = (obs[:, :2] - c) / spec.pos_scale
    lam = np.log(obs[:, 2:2 + 2 * n] / spec.info_ref).reshape(B, n, 2)
    ref = obs[:, None, :2] if spec.relative else c
    mu = ((obs[:, 2 + 2 * n:2 + 4 * n].reshape(B, n, 2)) - ref) / spec.pos_scale
    rows = np.concatenate([lam, mu], axis=-1)
    feats = {"x": xf}
    if spec.arch == "mlp":
        feats["lm_flat"] = rows.reshape(B, 4 * n)
    else:
        # canonical row order: the pooling is order-invariant in exact
        # arithmetic, sorting makes it so in floating point as well
        keys = rows[:, :, ::-1]
        order = np.lexsort(np.moveaxis(keys, -1, 0), axis=-1) if B else np.zeros((0, n), int)
        feats["lm"] = np.take_along_axis(rows, order[..., None], axis=1)
    if spec.arch == "joint":
        h, w = spec.map_dims
        m = spec.n_tiles
        base = 2 + 4 * n
        xi = obs[:, base:base + m].reshape(B, h, w)
        ymap = np.log(obs[:, base + m:base + 2 * m] / spec.map_info_ref).reshape(B, h, w)
        feats["map"] = np.stack([xi, ymap], axis=1)
    return feats


# -------------------------------------------------------------- parameters

def _dense(rng, fan_in, fan_out, gain=1.0):
    a = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-a, a, size=(fan_in, fan_out)), np.zeros(fan_out)


def _conv_flat_size(map_dims):
    h, w = map_dims
    shrink = (CONV_KERNEL - 1) * len(CONV_CHANNELS)
    return CONV_CHANNELS[-1] * (h - shrink) * (w - shrink)


def init_params(spec: ArchSpec, out_dim, rng, out_gain=0.01):
    """Uniform init with variance ``gain^2 / fan_in``; output layer gain ``out_gain``."""
    p = {}

    def layer(name, fi, fo, gain=1.0):
        p[name + ".W"], p[name + ".b"] = _dense(rng, fi, fo, gain)

    layer("agent_enc.0", 2, EMB)
    layer("agent_enc.1", EMB, EMB)
    if spec.arch == "mlp":
        layer("lm_enc.0", 4 * spec.n_landmarks, LM_HIDDEN)
    else:
        layer("lm_enc.0", 4, LM_HIDDEN)
    layer("lm_enc.1", LM_HIDDEN, EMB)
    if spec.arch != "mlp":
        for name in ("attn.q", "attn.k", "attn.v"):
            a = np.sqrt(3.0 / EMB)
            p[name] = rng.uniform(-a, a, size=(EMB, EMB))
    layer("head.0", 2 * EMB, HEAD)
    layer("head.1", HEAD, HEAD)
    if spec.arch == "joint":
        c_in = 2
        for i, c_out in enumerate(CONV_CHANNELS):
            fan_in = c_in * CONV_KERNEL**2
            a = np.sqrt(6.0 / fan_in)
            p[f"conv.{i}.W"] = rng.uniform(-a, a, size=(c_out, c_in, CONV_KERNEL, CONV_KERNEL))
            p[f"conv.{i}.b"] = np.zeros(c_out)
            c_in = c_out
        layer("fuse.0", HEAD + _conv_flat_size(spec.map_dims), HEAD)
        layer("fuse.out", HEAD, out_dim, out_gain)
    else:
        layer("head.out", HEAD, out_dim, out_gain)
    return p


def param_count(params):
    return int(sum(v.size for v in params.values()))


# ----------------------------------------------------------------- forward

def _mlp_layer(p, name, h):
    return ad.tanh(ad.affine(h, p[name + ".W"], p[name + ".b"]))


def agent_embedding(p, x):
    return _mlp_layer(p, "agent_enc.1", _mlp_layer(p, "agent_enc.0", x))


def attention_pool(p, ex, lm):
    """Attention of the agent embedding over landmark embeddings.

    Returns the pooled relation embedding (B, EMB) and the weights (B, n).
    """
    B, n = lm.shape[:2]
    rows = ad.reshape(ad.as_tensor(lm), (B * n, 4))
    el = _mlp_layer(p, "lm_enc.1", _mlp_layer(p, "lm_enc.0", rows))
    q = ad.reshape(ad.matmul(ex, p["attn.q"]), (B, 1, EMB))
    k = ad.reshape(ad.matmul(el, p["attn.k"]), (B, n, EMB))
    v = ad.reshape(ad.matmul(el, p["attn.v"]), (B, n, EMB))
    scores = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(EMB))
    w = ad.softmax(scores)
    relp = ad.reshape(ad.matmul(w, v), (B, EMB))
    return relp, ad.reshape(w, (B, n))


def trunk(spec: ArchSpec, p, feats):
    """Shared body up to the last 64-unit layer (before the output layer)."""
    ex = agent_embedding(p, feats["x"])
    if spec.arch == "mlp":
        rel = _mlp_layer(p, "lm_enc.1", _mlp_layer(p, "lm_enc.0", feats["lm_flat"]))
    else:
        rel, _ = attention_pool(p, ex, feats["lm"])
    h = _mlp_layer(p, "head.0", ad.concat([ex, rel], axis=-1))
    return _mlp_layer(p, "head.1", h)


def forward(spec: ArchSpec, p, feats):
    """Network output (B, out_dim) for prepared features."""
    h = trunk(spec, p, feats)
    if spec.arch != "joint":
        return ad.affine(h, p["head.out.W"], p["head.out.b"])
    m = ad.as_tensor(feats["map"])
    for i in range(len(CONV_CHANNELS)):
        m = ad.relu(ad.conv2d(m, p[f"conv.{i}.W"], p[f"conv.{i}.b"], padding="valid"))
    z = ad.concat([h, ad.flatten(m)], axis=-1)
    z = _mlp_layer(p, "fuse.0", z)
    return ad.affine(z, p["fuse.out.W"], p["fuse.out.b"])


def attention_weights(spec: ArchSpec, p, obs):
    """Attention weights of the actor over (canonically ordered) landmarks."""
    feats = prepare_features(spec, obs)
    with ad.no_grad():
        ex = agent_embedding(p, feats["x"])
        _, w = attention_pool(p, ex, feats["lm"])
    return w.data


class ActorCritic:
    """Separate actor and critic parameter sets sharing one architecture."""

    def __init__(self, spec: ArchSpec, actor, critic, log_std):
        self.spec = spec
        self.actor = actor
        self.critic = critic
        self.log_std = np.asarray(log_std, dtype=np.float64)

    @classmethod
    def create(cls, spec: ArchSpec, rng, log_std_init=0.0):
        actor = init_params(spec, 2, rng, out_gain=0.01)
        critic = init_params(spec, 1, rng, out_gain=1.0)
        return cls(spec, actor, critic, np.full(2, float(log_std_init)))

    def copy(self):
        return ActorCritic(self.spec, {k: v.copy() for k, v in self.actor.items()},
                           {k: v.copy() for k, v in self.critic.items()}, self.log_std.copy())

    def named_blocks(self):
        """All parameters under stable names (checkpoint order)."""
        blocks = {f"actor/{k}": v for k, v in self.actor.items()}
        blocks.update({f"critic/{k}": v for k, v in self.critic.items()})
        blocks["log_std"] = self.log_std
        return blocks

    @classmethod
    def from_blocks(cls, spec, blocks):
        actor = {k[6:]: v for k, v in blocks.items() if k.startswith("actor/")}
        critic = {k[7:]: v for k, v in blocks.items() if k.startswith("critic/")}
        return cls(spec, actor, critic, blocks["log_std"])

    @property
    def shared(self):
        """True when the critic only owns an output layer on top of the actor trunk."""
        return "agent_enc.0.W" not in self.critic

    def critic_view(self, actor=None, critic=None):
        """Full critic parameter dict, borrowing the actor trunk when shared."""
        actor = self.actor if actor is None else actor
        critic = self.critic if critic is None else critic
        if not self.shared:
            return critic
        merged = {k: v for k, v in actor.items() if not k.startswith(("head.out", "fuse.out"))}
        merged.update(critic)
        return merged

    def param_count(self):
        return param_count(self.actor) + param_count(self.critic) + self.log_std.size

    def action_mean(self, obs):
        with ad.no_grad():
            return forward(self.spec, self.actor, prepare_features(self.spec, obs)).data

    def value(self, obs):
        with ad.no_grad():
            return forward(self.spec, self.critic_view(), prepare_features(self.spec, obs)).data[:, 0]

    def act_value(self, obs):
        feats = prepare_features(self.spec, obs)
        with ad.no_grad():
            mean = forward(self.spec, self.actor, feats).data
            v = forward(self.spec, self.critic_view(), feats).data[:, 0]
        return mean, v

    def deterministic_policy(self):
        def act(obs, k):
            return self.action_mean(obs[None])[0]
        return act
