"""Learning algorithms over the safe environments.

Three trainers live here:

* ``est_q`` — unbiased action-value estimation with a geometric random
  horizon; the square-root discounting makes the truncated sum an exact
  unbiased estimate of the infinite discounted return.
* ``safe_rpg_*`` — random-horizon policy gradient: one trajectory per
  update, a geometric pivot step, an est_q call at the pivot, the
  truncated-policy score there, and a plain SGD step with a decaying
  stepsize.
* ``ppo_train`` — a minimal clipped-surrogate PPO with a value network,
  no GAE, optional advantage normalization, and Adam updates. With a
  box-supported policy every action is drawn from the safe action set, so
  training never leaves the safe set; the Gaussian variants reproduce the
  unconstrained and projection baselines.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .envs import PendulumEnv, QuadEnv
from .nets import Head, MlpSpec, init_params, mlp_backward, mlp_forward
from .policies import (
    BetaBoxPolicy,
    GaussianClippedPolicy,
    beta_entropy_upstream,
    beta_score_upstream,
    box_beta_entropy,
    truncated_score,
    _beta_log_pdf_interior,
    _to_unit,
)
from .safety import SafeSetEmpty
from .stochastics import Rng, geometric_sample

__all__ = [
    "SafeRpgConfig",
    "PpoConfig",
    "GradientEstimate",
    "IterationRecord",
    "SafetyCounter",
    "Adam",
    "est_q",
    "safe_rpg_iteration",
    "safe_rpg_train",
    "ppo_train",
    "projection_baseline_action",
    "evaluate_policy",
    "make_policy",
    "make_value_net",
]


# ---------------------------------------------------------------------------
# configs and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SafeRpgConfig:
    """Random-horizon policy-gradient settings.

    The stepsize sequence alpha0 / (1 + k)^decay is square-summable but
    not summable exactly when decay lies in (0.5, 1], which is the range
    the convergence argument needs; anything else is rejected.
    """

    gamma: float = 0.9
    alpha0: float = 5e-4
    stepsize_decay: float = 0.6
    mc_samples: int = 128
    max_iterations: int = 2000
    eval_interval: int = 100
    eval_episodes: int = 10
    hidden: tuple = (64, 64)
    plateau_window: int = 500
    plateau_rel_change: float = 0.0  # 0 disables the plateau stop

    def validate(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not (0.5 < self.stepsize_decay <= 1.0):
            raise ValueError(
                "stepsize decay must lie in (0.5, 1] so the stepsizes are "
                f"square-summable but not summable; got {self.stepsize_decay}"
            )
        if self.alpha0 < 0.0:
            raise ValueError("alpha0 must be nonnegative")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if self.max_iterations < 1 or self.eval_interval < 1:
            raise ValueError("iteration counts must be positive")

    def stepsize(self, k: int) -> float:
        return self.alpha0 / (1.0 + k) ** self.stepsize_decay


@dataclass(frozen=True)
class PpoConfig:
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

    def validate(self) -> None:
        if self.clip_range <= 0.0:
            raise ValueError("clip_range must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if min(self.policy_lr, self.value_lr) < 0.0:
            raise ValueError("learning rates must be nonnegative")
        if self.batch_size < 1 or self.buffer_size < 1 or self.n_epochs < 1:
            raise ValueError("batch/buffer/epoch counts must be positive")


@dataclass(frozen=True)
class GradientEstimate:
    """One Safe-RPG update direction: (1/(1-gamma)) * q_hat * score."""

    q_hat: float
    score: np.ndarray
    update: np.ndarray


@dataclass
class IterationRecord:
    iteration: int
    episodic_return: float
    safety_rate: float
    violations: int
    safe_set_empty_events: int
    wall_ms: float
    seed: int


@dataclass
class SafetyCounter:
    """Running tally of training-time safety accounting."""

    steps: int = 0
    violations: int = 0
    safe_set_empty_events: int = 0

    def observe(self, env, state) -> None:
        self.steps += 1
        if not env.is_safe(state):
            self.violations += 1

    def snapshot_and_reset(self) -> tuple:
        out = (self.steps, self.violations, self.safe_set_empty_events)
        self.steps = 0
        self.violations = 0
        self.safe_set_empty_events = 0
        return out


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class Adam:
    """Standard Adam on a flat parameter vector (minimizes)."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# policy/value construction and safe agents
# ---------------------------------------------------------------------------


def make_policy(env, family: str, hidden, rng: Rng):
    if family == "beta_box":
        return BetaBoxPolicy.create(env.feature_dim, env.action_dim, hidden=hidden, rng=rng)
    if family == "gaussian_clipped":
        return GaussianClippedPolicy.create(
            env.feature_dim, env.action_dim, env.action_box, hidden=hidden, rng=rng
        )
    raise ValueError(f"unknown policy family {family!r}")


def make_value_net(env, hidden, rng: Rng):
    spec = MlpSpec(tuple([env.feature_dim, *hidden, 1]), (Head("value", 1),))
    return spec, init_params(spec, rng)


def safe_beta_agent(env, policy: BetaBoxPolicy):
    """Action sampler drawing from the safe action set at each state."""

    def agent(state, rng: Rng):
        sset = env.safe_action_set(state)
        return policy.sample(env.features(state), sset.sampling_box, rng)

    return agent


def projection_baseline_action(policy: GaussianClippedPolicy, x, inner_box, rng: Rng) -> np.ndarray:
    """Two-stage baseline: sample the clipped Gaussian, then project
    (componentwise clip) onto the inner rectangle of the safe set."""
    return inner_box.clip(policy.sample(x, rng))


# ---------------------------------------------------------------------------
# EstQ: unbiased action-value estimation
# ---------------------------------------------------------------------------


def est_q(env, agent, x0, u0, gamma: float, rng: Rng, safety: SafetyCounter | None = None) -> float:
    """Unbiased estimate of Q(x0, u0) under the agent's policy.

    Draws T ~ Geom(1 - sqrt(gamma)) on {0, 1, ...}, accumulates
    gamma^(t/2)-weighted rewards along a trajectory of length T, and adds
    the final reward with weight gamma^(T/2). The environment is treated
    as continuing: no resets happen inside.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    horizon = geometric_sample(1.0 - math.sqrt(gamma), rng)
    q_hat = 0.0
    x, u = x0, u0
    for t in range(horizon):
        x_next, reward, _ = env.transition(x, u)
        if safety is not None:
            safety.observe(env, x_next)
        q_hat += gamma ** (0.5 * t) * reward
        x = x_next
        u = agent(x, rng)
    x_final, reward, _ = env.transition(x, u)
    if safety is not None:
        safety.observe(env, x_final)
    q_hat += gamma ** (0.5 * horizon) * reward
    return q_hat


# ---------------------------------------------------------------------------
# Safe-RPG: random-horizon policy gradient
# ---------------------------------------------------------------------------


def safe_rpg_iteration(policy: BetaBoxPolicy, env, k: int, cfg: SafeRpgConfig, rng: Rng, safety: SafetyCounter | None = None):
    """One update of the random-horizon policy gradient.

    Rolls out T ~ Geom(1 - gamma) steps from the fixed start state under
    the safe policy, estimates Q at the pivot (x_T, u_T), forms the
    truncated-policy score there, and ascends with the decaying stepsize.
    Raises SafeSetEmpty if the safe set ever empties mid-rollout.
    """
    cfg.validate()
    agent = safe_beta_agent(env, policy)
    x = env.fixed_start()
    u = agent(x, rng)
    pivot = geometric_sample(1.0 - cfg.gamma, rng)
    for _ in range(pivot):
        x, _, _ = env.transition(x, u)
        if safety is not None:
            safety.observe(env, x)
        u = agent(x, rng)
    q_hat = est_q(env, agent, x, u, cfg.gamma, rng, safety)
    sset = env.safe_action_set(x)
    score_est = truncated_score(policy, env.features(x), u, sset, cfg.mc_samples, rng)
    update = (1.0 / (1.0 - cfg.gamma)) * q_hat * score_est.score
    new_params = policy.params + cfg.stepsize(k) * update
    return policy.with_params(new_params), GradientEstimate(q_hat, score_est.score, update)


def evaluate_policy(env, policy, episodes: int, seed_base: int, safety: SafetyCounter | None = None) -> float:
    """Mean return of deterministic-seed episodes with mean actions."""
    total = 0.0
    for e in range(episodes):
        rng = Rng(seed_base + e)
        s = env.reset(rng)
        ep_return = 0.0
        for _ in range(env.episode_len):
            feat = env.features(s)
            if isinstance(policy, BetaBoxPolicy):
                try:
                    sset = env.safe_action_set(s)
                except SafeSetEmpty:
                    if safety is not None:
                        safety.safe_set_empty_events += 1
                    break
                u = policy.mean_action(feat, sset.sampling_box)
            else:
                u = policy.mean_action(feat)
            s, reward, done = env.transition(s, u)
            if safety is not None:
                safety.observe(env, s)
            ep_return += reward
            if done:
                break
        total += ep_return
    return total / episodes


def safe_rpg_train(env, cfg: SafeRpgConfig, seed: int, policy: BetaBoxPolicy | None = None):
    """Run Safe-RPG for cfg.max_iterations; returns (policy, records).

    A record is emitted at iteration 0 and every eval_interval iterations
    thereafter, carrying the deterministic evaluation return and the
    safety tally accumulated since the previous record.
    """
    cfg.validate()
    rng = Rng(seed)
    if policy is None:
        policy = make_policy(env, "beta_box", cfg.hidden, rng.spawn(1))
    safety = SafetyCounter()
    records: list[IterationRecord] = []
    eval_seed = 10_000_000 + seed
    returns_history: list[float] = []
    t_start = time.perf_counter()

    def emit(iteration):
        ret = evaluate_policy(env, policy, cfg.eval_episodes, eval_seed)
        steps, violations, empties = safety.snapshot_and_reset()
        rate = 1.0 if steps == 0 else 1.0 - violations / steps
        records.append(
            IterationRecord(
                iteration=iteration,
                episodic_return=ret,
                safety_rate=rate,
                violations=violations,
                safe_set_empty_events=empties,
                wall_ms=(time.perf_counter() - t_start) * 1e3,
                seed=seed,
            )
        )
        returns_history.append(ret)

    emit(0)
    for k in range(cfg.max_iterations):
        try:
            policy, _ = safe_rpg_iteration(policy, env, k, cfg, rng, safety)
        except SafeSetEmpty:
            safety.safe_set_empty_events += 1
        if (k + 1) % cfg.eval_interval == 0:
            emit(k + 1)
            if cfg.plateau_rel_change > 0.0 and len(returns_history) >= 2:
                window = max(1, cfg.plateau_window // cfg.eval_interval)
                if len(returns_history) > window:
                    prev = returns_history[-window - 1]
                    cur = returns_history[-1]
                    denom = max(abs(prev), 1e-9)
                    if abs(cur - prev) / denom < cfg.plateau_rel_change:
                        break
    if cfg.max_iterations % cfg.eval_interval != 0:
        emit(cfg.max_iterations)
    return policy, records


# ---------------------------------------------------------------------------
# PPO with a clipped surrogate
# ---------------------------------------------------------------------------


def _returns_to_go(rewards: np.ndarray, dones: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        if dones[i]:
            acc = 0.0
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


@dataclass
class _Buffer:
    features: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    box_lower: np.ndarray
    box_upper: np.ndarray
    episode_returns: list


def _collect_rollout(env, policy, cfg: PpoConfig, mode: str, rng: Rng, safety: SafetyCounter) -> _Buffer:
    """Fill a buffer with fresh episodes; only completed episodes feed the
    episodic-return statistic. Episodes cut short by an empty safe set are
    dropped from the statistic and closed with a done marker so credit
    never flows across the break."""
    n = cfg.buffer_size
    buf = _Buffer(
        features=np.empty((n, env.feature_dim)),
        actions=np.empty((n, env.action_dim)),
        log_probs=np.empty(n),
        rewards=np.empty(n),
        dones=np.zeros(n, dtype=bool),
        box_lower=np.empty((n, env.action_dim)),
        box_upper=np.empty((n, env.action_dim)),
        episode_returns=[],
    )
    i = 0
    partial_return = 0.0
    while i < n:
        s = env.reset(rng)
        ep_return = 0.0
        ep_steps = 0
        terminated = False
        cut_short = False
        while ep_steps < env.episode_len and i < n:
            feat = env.features(s)
            if mode in ("beta", "gaussian_projected"):
                try:
                    sset = env.safe_action_set(s)
                except SafeSetEmpty:
                    safety.safe_set_empty_events += 1
                    cut_short = True
                    break
            if mode == "beta":
                box = sset.sampling_box
                u = policy.sample(feat, box, rng)
                logp = policy.log_prob(feat, u, box)
                u_exec = u
            elif mode == "gaussian":
                u = policy.sample_unclipped(feat, rng)
                logp = policy.log_prob(feat, u)
                u_exec = policy.clip_box.clip(u)
                box = policy.clip_box
            elif mode == "gaussian_projected":
                # two-stage baseline: the gradient sees the policy's own
                # sample; the system executes its projection onto the
                # inner rectangle of the safe set
                u = policy.sample_unclipped(feat, rng)
                logp = policy.log_prob(feat, u)
                u_exec = sset.sampling_box.clip(policy.clip_box.clip(u))
                box = policy.clip_box
            else:
                raise ValueError(f"unknown ppo mode {mode!r}")
            s_next, reward, done = env.transition(s, u_exec)
            safety.observe(env, s_next)
            buf.features[i] = feat
            buf.actions[i] = u
            buf.log_probs[i] = logp
            buf.rewards[i] = reward
            buf.dones[i] = done
            buf.box_lower[i] = box.lower
            buf.box_upper[i] = box.upper
            ep_return += reward
            ep_steps += 1
            s = s_next
            i += 1
            if done:
                terminated = True
                break
        if (terminated or ep_steps == env.episode_len) and not cut_short:
            buf.episode_returns.append(ep_return)
            if i > 0:
                buf.dones[i - 1] = True  # close credit at the episode boundary
        elif cut_short and i > 0:
            buf.dones[i - 1] = True
        else:
            partial_return = ep_return  # buffer ended mid-episode
    if not buf.episode_returns:
        buf.episode_returns.append(partial_return)
    return buf


def _beta_log_probs_batch(policy: BetaBoxPolicy, feats, actions, lo, hi):
    from .nets import mlp_forward_heads

    heads = mlp_forward_heads(policy.spec, policy.params, feats)
    alpha, beta = heads["alpha"], heads["beta"]
    width = hi - lo
    live = width > 0.0
    u_hat = np.full_like(actions, 0.5)
    u_hat[live] = (actions[live] - lo[live]) / width[live]
    u_hat = np.clip(u_hat, 1e-12, 1.0 - 1e-12)
    terms = _beta_log_pdf_interior(alpha, beta, u_hat)
    terms = np.where(live, terms - np.log(np.where(live, width, 1.0)), 0.0)
    return terms.sum(axis=1), alpha, beta, u_hat, live


def _policy_gradient(policy, batch, cfg: PpoConfig, mode: str):
    """Gradient of the clipped surrogate plus entropy bonus, ascent direction."""
    feats = batch["features"]
    actions = batch["actions"]
    advantages = batch["advantages"]
    logp_old = batch["log_probs"]
    n = len(advantages)
    if mode == "beta":
        logp_new, alpha, beta, u_hat, live = _beta_log_probs_batch(
            policy, feats, actions, batch["box_lower"], batch["box_upper"]
        )
    else:
        mean = mlp_forward(policy.spec, policy.net_params, feats)
        std = np.exp(policy.log_std)
        z = (actions - mean) / std
        logp_new = (
            -0.5 * (z**2).sum(axis=1)
            - np.log(std).sum()
            - 0.5 * policy.action_dim * np.log(2.0 * np.pi)
        )
    ratio = np.exp(logp_new - logp_old)
    clipped_off = (
        ((advantages > 0.0) & (ratio > 1.0 + cfg.clip_range))
        | ((advantages < 0.0) & (ratio < 1.0 - cfg.clip_range))
    )
    coef = np.where(clipped_off, 0.0, ratio * advantages) / n
    surrogate = np.minimum(
        ratio * advantages,
        np.clip(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range) * advantages,
    ).mean()
    if not np.isfinite(surrogate):
        raise RuntimeError(
            f"non-finite PPO surrogate (ratio range [{ratio.min():.3e}, {ratio.max():.3e}])"
        )
    if mode == "beta":
        upstream = coef[:, None] * beta_score_upstream(alpha, beta, u_hat, live)
        if cfg.entropy_coef != 0.0:
            upstream = upstream + (cfg.entropy_coef / n) * beta_entropy_upstream(alpha, beta, live)
        return mlp_backward(policy.spec, policy.params, feats, upstream), surrogate
    upstream = coef[:, None] * (z / std)
    net_grad = mlp_backward(policy.spec, policy.net_params, feats, upstream)
    log_std_grad = (coef[:, None] * (z**2 - 1.0)).sum(axis=0)
    if cfg.entropy_coef != 0.0:
        log_std_grad = log_std_grad + cfg.entropy_coef
    return np.concatenate([net_grad, log_std_grad]), surrogate


def _value_and_gradient(value_spec, value_params, feats, targets):
    values = mlp_forward(value_spec, value_params, feats)[:, 0]
    n = len(targets)
    err = values - targets
    loss = float((err**2).mean())
    grad = mlp_backward(value_spec, value_params, feats, (2.0 * err / n)[:, None])
    return loss, grad, values


def ppo_train(env, cfg: PpoConfig, iterations: int, seed: int, mode: str, policy=None, value=None, record_seed: int | None = None):
    """Clipped-surrogate PPO; returns (policy, value_params, records).

    mode selects the sampling scheme: "beta" draws every action from the
    state's safe action set, "gaussian" clips to the fixed actuator box,
    "gaussian_projected" additionally projects the executed action onto
    the inner rectangle of the safe set.
    """
    cfg.validate()
    rng = Rng(seed)
    if policy is None:
        family = "beta_box" if mode == "beta" else "gaussian_clipped"
        policy = make_policy(env, family, cfg.hidden, rng.spawn(1))
    if value is None:
        value_spec, value_params = make_value_net(env, cfg.hidden, rng.spawn(2))
    else:
        value_spec, value_params = value
    policy_opt = Adam(len(policy.params), cfg.policy_lr)
    value_opt = Adam(len(value_params), cfg.value_lr)
    safety = SafetyCounter()
    records: list[IterationRecord] = []
    rec_seed = seed if record_seed is None else record_seed

    for it in range(iterations):
        t0 = time.perf_counter()
        buf = _collect_rollout(env, policy, cfg, mode, rng, safety)
        returns = _returns_to_go(buf.rewards, buf.dones, cfg.gamma)
        values = mlp_forward(value_spec, value_params, buf.features)[:, 0]
        advantages = returns - values
        if cfg.normalize_advantages:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

        n = cfg.buffer_size
        for _ in range(cfg.n_epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = {
                    "features": buf.features[idx],
                    "actions": buf.actions[idx],
                    "advantages": advantages[idx],
                    "log_probs": buf.log_probs[idx],
                    "box_lower": buf.box_lower[idx],
                    "box_upper": buf.box_upper[idx],
                }
                grad, _ = _policy_gradient(policy, batch, cfg, mode)
                policy = policy.with_params(policy_opt.step(policy.params, -grad))
                v_loss, v_grad, _ = _value_and_gradient(
                    value_spec, value_params, buf.features[idx], returns[idx]
                )
                if not math.isfinite(v_loss):
                    raise RuntimeError(f"non-finite value loss at iteration {it}")
                value_params = value_opt.step(value_params, v_grad)

        steps, violations, empties = safety.snapshot_and_reset()
        rate = 1.0 if steps == 0 else 1.0 - violations / steps
        records.append(
            IterationRecord(
                iteration=it,
                episodic_return=float(np.mean(buf.episode_returns)),
                safety_rate=rate,
                violations=violations,
                safe_set_empty_events=empties,
                wall_ms=(time.perf_counter() - t0) * 1e3,
                seed=rec_seed,
            )
        )
    return policy, (value_spec, value_params), records
