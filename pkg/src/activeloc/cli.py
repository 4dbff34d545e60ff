"""Command-line front end: ``activeloc {train,eval,icr,trajectory,selftest}``.

Experiments are described by a YAML document (see :class:`ExperimentConfig`)::

    include: base.yaml          # optional, a path or list of paths
    scenario: landmarks3
    method: ppo-att
    seeds: [0, 1, 2]
    budget: 200000              # omitted -> desk default, --paper-scale -> 1M
    world: {motion_noise_std: 0.1}
    ppo: {lr: 0.0003}
    icr: {restarts: 10}

Included files are merged first (nested mappings merge key by key), then the
including file, then ``--set key.sub=value`` pairs, then the dedicated flags.
Output directory and worker count may also come from ``ACTIVELOC_OUTPUT_DIR``
and ``ACTIVELOC_WORKERS``; explicit flags win over the environment.
"""

import argparse
import csv
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, write_curve
from .env import (
    SCENARIOS,
    ConfigError,
    WorldConfig,
    random_policy,
    reset,
    run_episode,
    scenario_config,
    trajectory_json,
)
from .icr import ICRConfig, evaluate_plan, optimize, replay_policy
from .ppo import PPOConfig, eval_seeds, evaluate_policy, train

log = logging.getLogger("activeloc")

METHODS = ("ppo-att", "ppo-mlp", "icr", "random")
DESK_BUDGET = 200_000
PAPER_BUDGET = 1_000_000
DEFAULT_MOTION_NOISE = 0.1
RESULT_FIELDS = ("scenario", "method", "noise", "reward_mean", "reward_std", "mae")
EPISODE_FIELDS = ("model_seed", "episode_seed", "reward", "reward_land", "reward_map", "mae")
ENV_OUTPUT_DIR = "ACTIVELOC_OUTPUT_DIR"
ENV_WORKERS = "ACTIVELOC_WORKERS"


class CheckpointMismatch(ConfigError):
    pass


# YAML 1.1 reads "3e-4" as a string; accept exponent floats without a dot
class _Loader(yaml.SafeLoader):
    pass


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def _load_yaml(text):
    doc = yaml.load(text, Loader=_Loader)
    return {} if doc is None else doc


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


@dataclass
class ExperimentConfig:
    scenario: str = "landmarks3"
    method: str = "ppo-att"
    seeds: tuple = (0,)
    motion_noise: bool = False
    budget: int = None
    output_dir: str = "runs"
    workers: int = 1
    eval_episodes: int = 10
    world: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    icr: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.scenario == "joint" and self.method == "ppo-mlp":
            raise ConfigError("ppo-mlp has no map branch; use ppo-att for the joint scenario")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.budget is not None and int(self.budget) < 0:
            raise ConfigError("budget must be >= 0")
        if int(self.workers) < 1 or int(self.eval_episodes) < 1:
            raise ConfigError("workers and eval_episodes must be >= 1")
        self.world = {k: _tuplify(v) for k, v in dict(self.world).items()}
        self.ppo = dict(self.ppo)
        self.icr = dict(self.icr)
        # fail early on bad overrides
        self.world_config()
        self.ppo_config()
        self.icr_config()

    # -------------------------------------------------------------- derived
    def world_config(self) -> WorldConfig:
        overrides = dict(self.world)
        if self.motion_noise:
            overrides.setdefault("motion_noise_std", DEFAULT_MOTION_NOISE)
        try:
            return scenario_config(self.scenario, **overrides)
        except TypeError as e:
            raise ConfigError(f"bad world override: {e}") from None

    def ppo_config(self) -> PPOConfig:
        try:
            return PPOConfig.from_dict(self.ppo)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad ppo override: {e}") from None

    def icr_config(self) -> ICRConfig:
        params = {"horizon": self.world_config().episode_len, **self.icr}
        try:
            return ICRConfig(**params)
        except TypeError as e:
            raise ConfigError(f"bad icr override: {e}") from None

    def effective_budget(self, paper_scale=False):
        if paper_scale:
            return PAPER_BUDGET
        return DESK_BUDGET if self.budget is None else int(self.budget)

    @property
    def arch(self):
        if self.method == "ppo-mlp":
            return "mlp"
        return "joint" if self.world_config().map_enabled else "att"

    @property
    def noise(self):
        return self.world_config().motion_noise_std > 0

    def stem(self, seed):
        return f"{self.scenario}_{self.method}_{seed}"

    # -------------------------------------------------------- serialisation
    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["world"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.world.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def serialize(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _load_tree(path, seen=()):
    path = Path(path).resolve()
    if path in seen:
        raise ConfigError(f"include cycle at {path}")
    try:
        doc = _load_yaml(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    inc = doc.pop("include", [])
    merged = {}
    for p in [inc] if isinstance(inc, str) else inc:
        merged = _merge(merged, _load_tree(path.parent / p, seen + (path,)))
    return _merge(merged, doc)


def parse(text: str) -> ExperimentConfig:
    """Parse a config document without includes (inverse of :func:`serialize`)."""
    doc = _load_yaml(text)
    if "include" in doc:
        raise ConfigError("include needs a file path; use load_config")
    return ExperimentConfig.from_dict(doc)


def _set_dotted(d, key, value):
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def load_config(path=None, sets=(), **flags) -> ExperimentConfig:
    """Resolve a config file, ``--set`` pairs and flag overrides (``None`` flags are ignored)."""
    doc = _load_tree(path) if path else {}
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_dotted(doc, k.strip(), _load_yaml(v) if v.strip() else None)
    for k, v in flags.items():
        if v is not None:
            doc[k] = v
    return ExperimentConfig.from_dict(doc)


# ------------------------------------------------------------------ outputs

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _summary_row(config, episodes):
    rewards = np.array([e["reward"] for e in episodes])
    maes = np.array([e["mae"] for e in episodes])
    return {"scenario": config.scenario, "method": config.method,
            "noise": "w/ noise" if config.noise else "w/o noise",
            "reward_mean": float(rewards.mean()), "reward_std": float(rewards.std()),
            "mae": float(maes.mean())}


def _emit_results(config, out, episodes, tag="eval"):
    row = _summary_row(config, episodes)
    stem = f"{config.scenario}_{config.method}_{tag}"
    _write_rows(out / f"{stem}.csv", RESULT_FIELDS, [row])
    _write_rows(out / f"{stem}_episodes.csv", EPISODE_FIELDS, episodes)
    text = (f"{row['scenario']:<11} {row['method']:<8} {row['noise']:<10} "
            f"reward {row['reward_mean']:.2f} ± {row['reward_std']:.2f}  mae {row['mae']:.3f}  "
            f"({len(episodes)} episodes)\n")
    (out / f"{stem}.txt").write_text(text)
    print(text, end="")
    return row


def _output_dir(config):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------- commands

def cmd_train(config: ExperimentConfig, paper_scale=False):
    if config.method not in ("ppo-att", "ppo-mlp"):
        raise ConfigError(f"train needs a ppo method, got {config.method!r}")
    world, hyper = config.world_config(), config.ppo_config()
    budget = config.effective_budget(paper_scale)
    out = _output_dir(config)
    written = []
    for seed in config.seeds:
        stem = config.stem(seed)
        meta = {"scenario": config.scenario, "method": config.method, "seed": seed,
                "world": world.to_dict(), "ppo": hyper.to_dict()}

        def snapshot(policy, steps, stem=stem, meta=meta):
            save_checkpoint(out / f"{stem}_step{steps}.ckpt", policy, {**meta, "env_steps": steps})

        log.info("training %s for %d steps", stem, budget)
        res = train(world, hyper, config.arch, seed, budget, config.workers, snapshot)
        save_checkpoint(out / f"{stem}.ckpt", res.policy, {**meta, "env_steps": res.env_steps})
        write_curve(out / f"{stem}.csv", res.curve)
        written += [out / f"{stem}.ckpt", out / f"{stem}.csv"]
        final = f"final eval reward {res.curve[-1][1]:.3f}" if res.curve else "no evaluation"
        print(f"{stem}: {res.env_steps} steps, {final}")
    return written


def _load_policy(config, path):
    try:
        policy, header = load_checkpoint(path)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from None
    world = config.world_config()
    if policy.spec.arch != config.arch or policy.spec.n_landmarks != world.n_landmarks:
        raise CheckpointMismatch(
            f"{path}: checkpoint is {policy.spec.arch}/{policy.spec.n_landmarks} landmarks, "
            f"config needs {config.arch}/{world.n_landmarks}")
    if config.arch == "joint" and tuple(policy.spec.map_dims) != tuple(world.map_dims):
        raise CheckpointMismatch(f"{path}: map dims {policy.spec.map_dims} != {world.map_dims}")
    return policy


def _checkpoint_paths(config, checkpoints):
    if checkpoints:
        return [(i, Path(p)) for i, p in enumerate(checkpoints)]
    out = Path(config.output_dir)
    return [(s, out / f"{config.stem(s)}.ckpt") for s in config.seeds]


def cmd_eval(config: ExperimentConfig, checkpoints=()):
    """Deterministic evaluation of each model (or random policy) on the shared episode seeds."""
    if config.method == "icr":
        return cmd_icr(config)
    world = config.world_config()
    seeds = eval_seeds(config.eval_episodes)
    episodes = []
    if config.method == "random":
        for s in config.seeds:
            rng = np.random.default_rng([s, 4])
            for es in seeds:
                res = run_episode(world, es, random_policy(world.control_bound, rng))
                episodes.append({"model_seed": s, "episode_seed": es, "reward": res.reward,
                                 "reward_land": res.reward_land, "reward_map": res.reward_map,
                                 "mae": res.mae})
    else:
        for s, path in _checkpoint_paths(config, checkpoints):
            ev = evaluate_policy(_load_policy(config, path), world, seeds)
            for i, es in enumerate(seeds):
                episodes.append({"model_seed": s, "episode_seed": es, "reward": ev["reward"][i],
                                 "reward_land": ev["reward_land"][i],
                                 "reward_map": ev["reward_map"][i], "mae": ev["mae"][i]})
    return _emit_results(config, _output_dir(config), episodes)


def cmd_icr(config: ExperimentConfig):
    """One open-loop plan per seed, planned on that seed's layout and replayed on the eval seeds."""
    if config.method != "icr":
        config = replace(config, method="icr")
    world = config.world_config()
    cfg = config.icr_config()
    out = _output_dir(config)
    seeds = eval_seeds(config.eval_episodes)
    episodes = []
    for s in config.seeds:
        state, _ = reset(world, s)
        plan = optimize(state.x, state.belief.mu.reshape(-1, 2), state.belief.info_soft, world,
                        cfg, np.random.default_rng([s, 3]))
        (out / f"{config.scenario}_icr_{s}.plan.json").write_text(plan.to_json())
        ev = evaluate_plan(plan, world, seeds)
        for e in ev["episodes"]:
            episodes.append({"model_seed": s, "episode_seed": e["seed"], "reward": e["reward"],
                             "reward_land": e["reward_land"], "reward_map": e["reward_map"],
                             "mae": e["mae"]})
    return _emit_results(config, out, episodes)


def cmd_trajectory(config: ExperimentConfig, checkpoint=None, episode_seed=None):
    """Dump one recorded episode (``episode_len + 1`` state records) as JSON."""
    world = config.world_config()
    seed = config.seeds[0]
    episode_seed = eval_seeds(1)[0] if episode_seed is None else int(episode_seed)
    if config.method == "random":
        policy = random_policy(world.control_bound, np.random.default_rng([seed, 4]))
    elif config.method == "icr":
        state, _ = reset(world, seed)
        plan = optimize(state.x, state.belief.mu.reshape(-1, 2), state.belief.info_soft, world,
                        config.icr_config(), np.random.default_rng([seed, 3]))
        policy = replay_policy(plan.controls)
    else:
        path = Path(checkpoint) if checkpoint else Path(config.output_dir) / f"{config.stem(seed)}.ckpt"
        policy = _load_policy(config, path).deterministic_policy()
    res = run_episode(world, episode_seed, policy, record=True)
    path = _output_dir(config) / f"{config.stem(seed)}_traj{episode_seed}.json"
    path.write_text(trajectory_json(world, episode_seed, res.records, method=config.method,
                                    reward=res.reward, mae=res.mae))
    print(f"wrote {path}")
    return path


def cmd_selftest():
    from .selftest import run_all
    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    failed = [n for n, ok, _ in results if not ok]
    if failed:
        raise SelfTestFailure(f"{len(failed)} self-test check(s) failed: {', '.join(failed)}")


class SelfTestFailure(RuntimeError):
    pass


# --------------------------------------------------------------------- main

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, dotted keys for nested ones")
    common.add_argument("--scenario", choices=SCENARIOS)
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--seed", type=int, action="append",
                        help="run seed (repeat for several); replaces the config's seeds")
    common.add_argument("--budget", type=int, help="training env steps")
    common.add_argument("--paper-scale", action="store_true", help="train for 1M env steps")
    common.add_argument("--motion-noise", action="store_true", default=None)
    common.add_argument("--eval-episodes", type=int)
    common.add_argument("--output-dir", help=f"artifact directory (env {ENV_OUTPUT_DIR})")
    common.add_argument("--workers", type=int, help=f"rollout worker cap (env {ENV_WORKERS})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="activeloc", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train PPO policies, one per seed")
    ev = sub.add_parser("eval", parents=[common], help="evaluate checkpoints or the random policy")
    ev.add_argument("--checkpoint", action="append", default=[])
    sub.add_parser("icr", parents=[common], help="plan and evaluate the open-loop baseline")
    tr = sub.add_parser("trajectory", parents=[common], help="export one episode as JSON")
    tr.add_argument("--checkpoint")
    tr.add_argument("--episode-seed", type=int)
    sub.add_parser("selftest", help="run the built-in oracle checks")
    return p


def _config_from_args(args):
    env_out = os.environ.get(ENV_OUTPUT_DIR)
    env_workers = os.environ.get(ENV_WORKERS)
    try:
        env_workers = int(env_workers) if env_workers else None
    except ValueError:
        raise ConfigError(f"{ENV_WORKERS} must be an integer, got {env_workers!r}") from None
    return load_config(
        args.config, args.set,
        scenario=args.scenario, method=args.method, seeds=args.seed, budget=args.budget,
        motion_noise=args.motion_noise, eval_episodes=args.eval_episodes,
        output_dir=args.output_dir or env_out, workers=args.workers or env_workers,
    )


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            cmd_selftest()
            return 0
        config = _config_from_args(args)
        if args.command == "train":
            cmd_train(config, args.paper_scale)
        elif args.command == "eval":
            cmd_eval(config, args.checkpoint)
        elif args.command == "icr":
            cmd_icr(config)
        elif args.command == "trajectory":
            cmd_trajectory(config, args.checkpoint, args.episode_seed)
        return 0
    except (ConfigError, CheckpointError, SelfTestFailure, OSError, FloatingPointError) as e:
        err = {"error": type(e).__name__, "message": str(e), "command": args.command}
        print("error: " + json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(e, (ConfigError, CheckpointError)) else 1


if __name__ == "__main__":
    sys.exit(main())
