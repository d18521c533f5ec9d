"""Experiment configuration, runner, and metrics files.

Configs are INI text (sections of key = value pairs) validated into
pydantic models. A run executes seeded replications sequentially and
writes one CSV per replication plus an aggregate JSON with per-iteration
means and 95% normal-approximation confidence intervals.

Reproducibility contract: the metrics CSVs and the aggregate JSON are
byte-identical across runs with the same config and seeds. Wall-clock
timing is therefore reported in a separate timings file that is outside
the determinism contract, and the CSV's wall_ms column is left empty.
"""

from __future__ import annotations

import configparser
import io
import json
import time
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .envs import PendulumEnv, QuadEnv, QuadWorld
from .safety import ActionBox, PendulumCbfParams, QuadEcbfParams
from .trainers import PpoConfig, SafeRpgConfig, ppo_train, safe_rpg_train

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "default_config",
    "parse_config_text",
    "render_config_ini",
    "build_env",
    "run_experiment",
    "CSV_HEADER",
]

ENVS = ("pendulum", "quadcopter")
ALGORITHMS = ("safe_rpg", "ppo_beta", "ppo_gaussian", "ppo_gaussian_projected")

CSV_HEADER = "iteration,return,safety_rate,violations,safe_set_empty_events,wall_ms,seed"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _parse_hidden(v):
    if isinstance(v, str):
        v = [p for p in v.replace(" ", "").split(",") if p]
    return tuple(int(x) for x in v)


class ExperimentSection(BaseModel):
    env: str
    algorithm: str
    replications: int = 5
    base_seed: int = 1000
    seeds: list[int] | None = None
    output_dir: str = "results"

    @field_validator("env")
    @classmethod
    def _env_known(cls, v):
        if v not in ENVS:
            raise ValueError(f"env must be one of {ENVS}, got {v!r}")
        return v

    @field_validator("algorithm")
    @classmethod
    def _algo_known(cls, v):
        if v not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {v!r}")
        return v

    @field_validator("replications")
    @classmethod
    def _reps_positive(cls, v):
        if v < 1:
            raise ValueError("replications must be at least 1")
        return v

    def replication_seeds(self) -> list[int]:
        if self.seeds is not None:
            if len(self.seeds) != self.replications:
                raise ConfigError(
                    f"got {len(self.seeds)} seeds for {self.replications} replications"
                )
            return list(self.seeds)
        return [self.base_seed + r for r in range(self.replications)]


class PendulumSection(BaseModel):
    theta_bound: float = 0.5
    eta: float = 0.2
    dt: float = 0.05
    m: float = 1.0
    l: float = 1.0
    g: float = 10.0
    torque_min: float = -15.0
    torque_max: float = 15.0
    episode_len: int = 300

    def build(self) -> PendulumEnv:
        cbf = PendulumCbfParams(
            eta=self.eta,
            dt=self.dt,
            m=self.m,
            l=self.l,
            g=self.g,
            theta_bound=self.theta_bound,
            torque_box=ActionBox(np.array([self.torque_min]), np.array([self.torque_max])),
        )
        return PendulumEnv(cbf, episode_len=self.episode_len)


class QuadSection(BaseModel):
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    r_s: float = 1.0
    k1: float = 6.0
    k2: float = 8.0
    dt: float = 0.1
    obs_x: float = 2.5
    obs_y: float = 2.5
    accel_min: float = -1.0
    accel_max: float = 1.0
    start_x: float = 0.0
    start_y: float = 0.0
    goal_x: float = 5.0
    goal_y: float = 5.0
    bounds_min_x: float = -2.0
    bounds_min_y: float = -2.0
    bounds_max_x: float = 8.0
    bounds_max_y: float = 8.0
    eps_goal: float = 0.25
    goal_bonus: float = 50.0
    boundary_penalty: float = 400.0
    episode_len: int = 180

    def build(self) -> QuadEnv:
        ecbf = QuadEcbfParams(
            a=self.a,
            b=self.b,
            c=self.c,
            r_s=self.r_s,
            k1=self.k1,
            k2=self.k2,
            r_obs=np.array([self.obs_x, self.obs_y]),
            accel_box=ActionBox(
                np.array([self.accel_min, self.accel_min]),
                np.array([self.accel_max, self.accel_max]),
            ),
            dt=self.dt,
        )
        world = QuadWorld(
            r_start=np.array([self.start_x, self.start_y]),
            r_goal=np.array([self.goal_x, self.goal_y]),
            eps_goal=self.eps_goal,
            r_min=np.array([self.bounds_min_x, self.bounds_min_y]),
            r_max=np.array([self.bounds_max_x, self.bounds_max_y]),
            goal_bonus=self.goal_bonus,
            boundary_penalty=self.boundary_penalty,
        )
        return QuadEnv(ecbf, world, episode_len=self.episode_len)


class PpoSection(BaseModel):
    policy_lr: float = 3e-4
    value_lr: float = 3e-4
    clip_range: float = 0.2
    entropy_coef: float = 0.0
    batch_size: int = 64
    buffer_size: int = 300
    n_epochs: int = 10
    gamma: float = 0.99
    hidden: tuple = (64, 64)
    normalize_advantages: bool = False
    iterations: int = 500

    @field_validator("hidden", mode="before")
    @classmethod
    def _hidden(cls, v):
        return _parse_hidden(v)

    def build(self) -> PpoConfig:
        cfg = PpoConfig(
            policy_lr=self.policy_lr,
            value_lr=self.value_lr,
            clip_range=self.clip_range,
            entropy_coef=self.entropy_coef,
            batch_size=self.batch_size,
            buffer_size=self.buffer_size,
            n_epochs=self.n_epochs,
            gamma=self.gamma,
            hidden=self.hidden,
            normalize_advantages=self.normalize_advantages,
        )
        cfg.validate()
        return cfg


class SafeRpgSection(BaseModel):
    gamma: float = 0.95
    alpha0: float = 1e-4
    stepsize_decay: float = 0.51
    mc_samples: int = 128
    max_iterations: int = 2000
    eval_interval: int = 100
    eval_episodes: int = 10
    hidden: tuple = (16,)

    @field_validator("hidden", mode="before")
    @classmethod
    def _hidden(cls, v):
        return _parse_hidden(v)

    def build(self) -> SafeRpgConfig:
        cfg = SafeRpgConfig(
            gamma=self.gamma,
            alpha0=self.alpha0,
            stepsize_decay=self.stepsize_decay,
            mc_samples=self.mc_samples,
            max_iterations=self.max_iterations,
            eval_interval=self.eval_interval,
            eval_episodes=self.eval_episodes,
            hidden=self.hidden,
        )
        cfg.validate()
        return cfg


class ExperimentConfig(BaseModel):
    experiment: ExperimentSection
    pendulum: PendulumSection = Field(default_factory=PendulumSection)
    quadcopter: QuadSection = Field(default_factory=QuadSection)
    ppo: PpoSection = Field(default_factory=PpoSection)
    safe_rpg: SafeRpgSection = Field(default_factory=SafeRpgSection)


# (env, algorithm)-specific defaults; values not listed fall back to the
# section defaults above. PPO tables follow the published per-environment
# hyperparameters; safe_rpg values come from the tuning study in the repo
# history (short episodes, small net, conservative decaying steps).
DEFAULT_OVERRIDES = {
    ("pendulum", "ppo_beta"): {
        "pendulum": {"theta_bound": 0.5, "episode_len": 300},
        "ppo": {"policy_lr": 1e-2, "value_lr": 1e-2, "gamma": 0.99, "hidden": (64, 64),
                "batch_size": 64, "buffer_size": 300, "iterations": 500},
    },
    ("pendulum", "ppo_gaussian"): {
        "pendulum": {"theta_bound": 0.5, "episode_len": 300},
        "ppo": {"policy_lr": 3e-4, "value_lr": 3e-4, "gamma": 0.99, "hidden": (64, 64),
                "batch_size": 64, "buffer_size": 300, "iterations": 500},
    },
    ("pendulum", "ppo_gaussian_projected"): {
        "pendulum": {"theta_bound": 0.5, "episode_len": 300},
        "ppo": {"policy_lr": 3e-4, "value_lr": 3e-4, "gamma": 0.99, "hidden": (64, 64),
                "batch_size": 64, "buffer_size": 300, "iterations": 500},
    },
    ("pendulum", "safe_rpg"): {
        "pendulum": {"theta_bound": 1.0, "episode_len": 40},
    },
    ("quadcopter", "ppo_beta"): {
        "quadcopter": {"episode_len": 180},
        "ppo": {"policy_lr": 6e-4, "value_lr": 6e-4, "gamma": 0.9, "hidden": (256, 256),
                "batch_size": 256, "buffer_size": 180, "entropy_coef": 0.0, "iterations": 1000},
    },
    ("quadcopter", "ppo_gaussian"): {
        "quadcopter": {"episode_len": 320},
        "ppo": {"policy_lr": 4e-4, "value_lr": 4e-4, "gamma": 0.9, "hidden": (256, 256),
                "batch_size": 256, "buffer_size": 320, "entropy_coef": 1e-8, "iterations": 1000},
    },
    ("quadcopter", "ppo_gaussian_projected"): {
        "quadcopter": {"episode_len": 320},
        "ppo": {"policy_lr": 4e-4, "value_lr": 4e-4, "gamma": 0.9, "hidden": (256, 256),
                "batch_size": 256, "buffer_size": 320, "entropy_coef": 1e-8, "iterations": 1000},
    },
    ("quadcopter", "safe_rpg"): {
        "quadcopter": {"episode_len": 180},
        "safe_rpg": {"gamma": 0.9, "hidden": (32,)},
    },
}


def default_config(env: str, algorithm: str, replications: int = 5, base_seed: int = 1000) -> ExperimentConfig:
    """Fully populated defaults for an (env, algorithm) pair."""
    if env not in ENVS:
        raise ConfigError(f"env must be one of {ENVS}, got {env!r}")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    cfg = ExperimentConfig(
        experiment=ExperimentSection(
            env=env, algorithm=algorithm, replications=replications, base_seed=base_seed
        )
    )
    overrides = DEFAULT_OVERRIDES.get((env, algorithm), {})
    data = cfg.model_dump()
    for section, values in overrides.items():
        data[section].update(values)
    return ExperimentConfig(**data)


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse INI config text into a validated ExperimentConfig.

    Unknown sections or keys are rejected; values are type-checked via the
    pydantic models. Section defaults are first specialized for the
    (env, algorithm) pair, then user values are applied on top.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if "experiment" not in parser:
        raise ConfigError("config must have an [experiment] section")

    raw: dict = {s: dict(parser[s]) for s in parser.sections()}
    known_sections = {"experiment", "pendulum", "quadcopter", "ppo", "safe_rpg"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    exp_raw = dict(raw.get("experiment", {}))
    if "seeds" in exp_raw:
        exp_raw["seeds"] = [int(x) for x in exp_raw["seeds"].replace(" ", "").split(",") if x]
    env = exp_raw.get("env")
    algorithm = exp_raw.get("algorithm")
    if env is None or algorithm is None:
        raise ConfigError("[experiment] must set env and algorithm")

    try:
        base = default_config(env, algorithm).model_dump()
        base["experiment"].update(exp_raw)
        for section in ("pendulum", "quadcopter", "ppo", "safe_rpg"):
            if section in raw:
                model = ExperimentConfig.model_fields[section].annotation
                unknown_keys = set(raw[section]) - set(model.model_fields)
                if unknown_keys:
                    raise ConfigError(
                        f"unknown keys in [{section}]: {sorted(unknown_keys)}"
                    )
                base[section].update(raw[section])
        cfg = ExperimentConfig(**base)
        cfg.experiment.replication_seeds()  # surfaces seed-count mismatches
        # construction validates numeric ranges (barrier params, stepsizes)
        build_env(cfg)
        if cfg.experiment.algorithm == "safe_rpg":
            cfg.safe_rpg.build()
        else:
            cfg.ppo.build()
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def apply_overrides(cfg: ExperimentConfig, replications=None, base_seed=None, output_dir=None) -> ExperimentConfig:
    """Copy a config with CLI-style overrides; explicit seed lists reset."""
    data = cfg.model_dump()
    if replications is not None:
        data["experiment"]["replications"] = int(replications)
        data["experiment"]["seeds"] = None
    if base_seed is not None:
        data["experiment"]["base_seed"] = int(base_seed)
        data["experiment"]["seeds"] = None
    if output_dir is not None:
        data["experiment"]["output_dir"] = str(output_dir)
    try:
        new = ExperimentConfig(**data)
        new.experiment.replication_seeds()
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    return new


def render_config_ini(cfg: ExperimentConfig) -> str:
    """Dump a config as INI text (the inverse of parse_config_text)."""
    parser = configparser.ConfigParser()
    data = cfg.model_dump()
    for section, values in data.items():
        parser[section] = {}
        for key, value in values.items():
            if value is None:
                continue
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            parser[section][key] = str(value)
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def build_env(cfg: ExperimentConfig):
    if cfg.experiment.env == "pendulum":
        return cfg.pendulum.build()
    return cfg.quadcopter.build()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records, seed: int) -> str:
    """Render iteration records as CSV text (LF endings, '.' decimals).

    The wall_ms column is part of the schema but intentionally left empty:
    populated timing would break the byte-identical reproducibility
    contract. Timings are reported separately.
    """
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.iteration),
                    _fmt(float(r.episodic_return)),
                    _fmt(float(r.safety_rate)),
                    str(r.violations),
                    str(r.safe_set_empty_events),
                    "",
                    str(seed),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def aggregate_records(per_replication) -> dict:
    """Per-iteration mean and 95% normal-approximation CI across replications.

    Iterations present in every replication are aggregated; ragged tails
    (e.g. a plateau stop) are truncated to the common prefix.
    """
    n_common = min(len(recs) for recs in per_replication)
    iters = [per_replication[0][i].iteration for i in range(n_common)]
    returns = np.array([[recs[i].episodic_return for i in range(n_common)] for recs in per_replication])
    safety = np.array([[recs[i].safety_rate for i in range(n_common)] for recs in per_replication])
    n = returns.shape[0]
    z = 1.959963984540054
    def stats(mat):
        mean = mat.mean(axis=0)
        if n > 1:
            half = z * mat.std(axis=0, ddof=1) / np.sqrt(n)
        else:
            half = np.zeros_like(mean)
        return mean.tolist(), half.tolist()
    ret_mean, ret_ci = stats(returns)
    safe_mean, safe_ci = stats(safety)
    return {
        "replications": n,
        "iterations": iters,
        "return_mean": ret_mean,
        "return_ci95_halfwidth": ret_ci,
        "safety_rate_mean": safe_mean,
        "safety_rate_ci95_halfwidth": safe_ci,
        "total_violations": int(sum(r.violations for recs in per_replication for r in recs)),
        "total_safe_set_empty_events": int(
            sum(r.safe_set_empty_events for recs in per_replication for r in recs)
        ),
    }


def run_replication(cfg: ExperimentConfig, seed: int):
    """Train one replication; returns its iteration records."""
    env = build_env(cfg)
    algo = cfg.experiment.algorithm
    if algo == "safe_rpg":
        _, records = safe_rpg_train(env, cfg.safe_rpg.build(), seed=seed)
        return records
    mode = {"ppo_beta": "beta", "ppo_gaussian": "gaussian", "ppo_gaussian_projected": "gaussian_projected"}[algo]
    _, _, records = ppo_train(env, cfg.ppo.build(), cfg.ppo.iterations, seed=seed, mode=mode)
    return records


def run_experiment(cfg: ExperimentConfig, output_dir=None, progress=None) -> dict:
    """Execute all replications and write metrics files.

    Returns a manifest: file names, aggregate stats, and timings. The
    `progress` callback, when given, receives (replication_index, total).
    """
    out = Path(output_dir if output_dir is not None else cfg.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.experiment.replication_seeds()
    per_replication = []
    timings = []
    csv_names = []
    for r, seed in enumerate(seeds):
        if progress is not None:
            progress(r, len(seeds))
        t0 = time.perf_counter()
        records = run_replication(cfg, seed)
        timings.append(time.perf_counter() - t0)
        per_replication.append(records)
        name = f"replication_{r:02d}_seed_{seed}.csv"
        (out / name).write_text(records_to_csv(records, seed), newline="")
        csv_names.append(name)
    aggregate = aggregate_records(per_replication)
    agg_text = json.dumps(aggregate, indent=2, sort_keys=True) + "\n"
    (out / "aggregate.json").write_text(agg_text, newline="")
    (out / "timings.txt").write_text(
        "".join(f"replication {r}: {t:.3f}s\n" for r, t in enumerate(timings))
    )
    (out / "config.ini").write_text(render_config_ini(cfg))
    return {
        "output_dir": str(out),
        "csv_files": csv_names,
        "aggregate": aggregate,
        "timings_s": timings,
    }
