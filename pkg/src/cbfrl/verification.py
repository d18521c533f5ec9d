"""Built-in oracle suites behind the `verify` command.

Each suite re-derives expected values through an independent route
(closed forms, brute-force grids, finite differences, long value
iteration) and checks the production code against them. Suites return a
list of named checks so callers can render a pass/fail table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import QUAD_SAFETY_FLOOR, PendulumEnv, QuadEnv
from .nets import mlp_backward
from .policies import (
    BetaBoxPolicy,
    GaussianClippedPolicy,
    estimate_normalization,
    estimate_normalization_quadrature,
    truncated_score_quadrature,
)
from .safety import (
    ActionBox,
    PendulumCbfParams,
    SafeSetEmpty,
    max_inner_hyperrectangle,
)
from .stochastics import Rng
from .trainers import est_q

__all__ = ["SUITES", "run_suite", "CheckResult"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check(name, passed, detail) -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), detail=detail)


# ---------------------------------------------------------------------------
# estq: unbiasedness oracles
# ---------------------------------------------------------------------------


class _ConstantEnv:
    def __init__(self, c):
        self.c = c

    def transition(self, x, u):
        return x, self.c, False


class _ChainEnv:
    rewards = (1.0, 3.0)

    def transition(self, x, u):
        return 1 - x, self.rewards[x], False


def _null_agent(x, rng):
    return 0.0


def suite_estq(n: int = 100_000):
    checks = []
    c = 1.7
    for gamma in (0.5, 0.9, 0.99):
        env = _ConstantEnv(c)
        rng = Rng(7)
        qs = np.array([est_q(env, _null_agent, 0, 0.0, gamma, rng) for _ in range(n)])
        want = c / (1.0 - gamma)
        se = qs.std(ddof=1) / math.sqrt(n)
        err = abs(qs.mean() - want)
        checks.append(
            _check(
                f"constant-reward gamma={gamma}",
                err <= 3.0 * se,
                f"mean {qs.mean():.4f} vs {want:.4f} (3se = {3 * se:.4f})",
            )
        )
    gamma = 0.5
    env = _ChainEnv()
    q_exact, state = 0.0, 0
    for t in range(10_000):
        q_exact += gamma**t * env.rewards[state]
        state = 1 - state
    rng = Rng(9)
    qs = np.array([est_q(env, _null_agent, 0, 0.0, gamma, rng) for _ in range(n)])
    se = qs.std(ddof=1) / math.sqrt(n)
    checks.append(
        _check(
            "two-state chain gamma=0.5",
            abs(qs.mean() - q_exact) <= 3.0 * se,
            f"mean {qs.mean():.4f} vs value-iteration {q_exact:.4f} (3se = {3 * se:.4f})",
        )
    )
    return checks


# ---------------------------------------------------------------------------
# scores: finite-difference oracles
# ---------------------------------------------------------------------------


def _fd_max_rel_err(objective, params, grad, eps, stride=1):
    worst = 0.0
    for j in range(0, len(params), stride):
        p_plus = params.copy()
        p_plus[j] += eps
        p_minus = params.copy()
        p_minus[j] -= eps
        fd = (objective(p_plus) - objective(p_minus)) / (2 * eps)
        denom = max(abs(fd), abs(grad[j]), 1e-3)
        worst = max(worst, abs(grad[j] - fd) / denom)
    return worst


def suite_scores(n_configs: int = 20):
    checks = []
    rng = Rng(55)
    worst_beta = 0.0
    for trial in range(n_configs):
        pol = BetaBoxPolicy.create(2, 1, hidden=(5,), rng=Rng(500 + trial))
        pol = pol.with_params(pol.params + 0.3 * np.asarray(Rng(600 + trial).normal(len(pol.params))))
        x = np.asarray(rng.normal(2))
        box = ActionBox(np.array([-1.5]), np.array([2.0]))
        u = np.array([float(rng.uniform(-1.3, 1.8))])
        grad = pol.score(x, u, box)
        worst_beta = max(
            worst_beta,
            _fd_max_rel_err(lambda p: pol.with_params(p).log_prob(x, u, box), pol.params, grad, 1e-5),
        )
    checks.append(
        _check(
            f"beta-box score vs finite differences ({n_configs} configs)",
            worst_beta <= 1e-4,
            f"max relative error {worst_beta:.2e}",
        )
    )

    worst_gauss = 0.0
    for trial in range(n_configs):
        clip = ActionBox(np.array([-10.0]), np.array([10.0]))
        pol = GaussianClippedPolicy.create(2, 1, clip, hidden=(5,), rng=Rng(700 + trial))
        pol = pol.with_params(pol.params + 0.3 * np.asarray(Rng(800 + trial).normal(len(pol.params))))
        x = np.asarray(rng.normal(2))
        from .safety import Interval

        c = Interval(float(rng.uniform(-2.0, -0.2)), float(rng.uniform(0.2, 2.0)))
        u = np.array([float(rng.uniform(c.lo + 0.05, c.hi - 0.05))])
        est = truncated_score_quadrature(pol, x, u, c, n_nodes=64)

        def objective(params):
            p = pol.with_params(params)
            return p.log_prob(x, u) - math.log(estimate_normalization_quadrature(p, x, c, n_nodes=64))

        worst_gauss = max(worst_gauss, _fd_max_rel_err(objective, pol.params, est.score, 1e-5))
    checks.append(
        _check(
            f"truncated-gaussian score vs finite differences ({n_configs} configs)",
            worst_gauss <= 1e-4,
            f"max relative error {worst_gauss:.2e}",
        )
    )
    return checks


# ---------------------------------------------------------------------------
# maxrect: grid brute-force oracle
# ---------------------------------------------------------------------------


def _grid_best_area(a, b, box, n=200, tol=1e-12):
    xs = np.linspace(box.lower[0], box.upper[0], n)
    ys = np.linspace(box.lower[1], box.upper[1], n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    def ok(x, y):
        return a[0] * x + a[1] * y <= b + tol

    best = 0.0
    for px, py in [
        (box.lower[0], box.lower[1]),
        (box.upper[0], box.lower[1]),
        (box.lower[0], box.upper[1]),
        (box.upper[0], box.upper[1]),
    ]:
        if not ok(px, py):
            continue
        feasible = ok(X, py) & ok(px, Y) & ok(X, Y)
        areas = np.abs((X - px) * (Y - py))
        areas[~feasible] = 0.0
        best = max(best, float(areas.max()))
    return best


def suite_maxrect(n_instances: int = 500):
    rng = Rng(77)
    solved = 0
    area_failures = 0
    corner_failures = 0
    for _ in range(n_instances):
        a = np.asarray(rng.normal(2))
        if rng.uniform() < 0.15:
            a[int(rng.integers(0, 2))] = 0.0
        lo = np.asarray(rng.uniform(-3.0, 1.0, size=2))
        hi = lo + np.asarray(rng.uniform(0.2, 4.0, size=2))
        box = ActionBox(lo, hi)
        b = float(a @ (0.5 * (lo + hi)) + rng.uniform(-3.0, 3.0))
        try:
            rect = max_inner_hyperrectangle(a, b, box)
        except SafeSetEmpty:
            if _grid_best_area(a, b, box) > 0.0:
                area_failures += 1
            continue
        solved += 1
        for corner in rect.corners():
            if float(a @ corner) > b + 1e-9:
                corner_failures += 1
        if rect.volume < 0.99 * _grid_best_area(a, b, box):
            area_failures += 1
    return [
        _check(
            f"inner rectangle within 1% of grid brute force ({n_instances} instances)",
            area_failures == 0,
            f"{solved} feasible instances, {area_failures} area failures",
        ),
        _check(
            "all inner-rectangle corners satisfy the halfspace (+1e-9)",
            corner_failures == 0,
            f"{corner_failures} corner violations",
        ),
    ]


# ---------------------------------------------------------------------------
# invariance: pendulum closure + quad rollout sweep
# ---------------------------------------------------------------------------


def suite_invariance(n_pendulum: int = 100_000, n_quad_rollouts: int = 100, quad_steps: int = 500):
    checks = []
    env = PendulumEnv(PendulumCbfParams(theta_bound=0.5))
    rng = Rng(33)
    worst_slack = np.inf
    worst_theta = 0.0
    tested = 0
    from .envs import PendulumState

    while tested < n_pendulum:
        theta = float(rng.uniform(-0.5, 0.5))
        theta_dot = float(rng.uniform(-8.0, 8.0))
        s = PendulumState(theta, theta_dot)
        try:
            iv = env.safe_action_set(s)
        except SafeSetEmpty:
            continue
        u = float(iv.sample_uniform(rng)[0])
        s2, _ = env.step(s, u)
        h_now = env.cbf.barrier(theta)
        h_next = env.cbf.barrier(s2.theta)
        worst_slack = min(worst_slack, float((h_next - (1.0 - env.cbf.eta) * h_now).min()))
        worst_theta = max(worst_theta, abs(s2.theta))
        tested += 1
    checks.append(
        _check(
            f"pendulum one-step invariance ({n_pendulum} draws)",
            worst_slack >= -1e-9 and worst_theta <= 0.5 + 1e-9,
            f"min barrier slack {worst_slack:.2e}, max |theta'| {worst_theta:.9f}",
        )
    )

    qenv = QuadEnv()
    min_h = np.inf
    empties = 0
    for k in range(n_quad_rollouts):
        rng_k = Rng(4000 + k)
        s = qenv.reset(rng_k)
        for _ in range(quad_steps):
            try:
                hs = qenv.safe_action_set(s)
            except SafeSetEmpty:
                empties += 1
                break
            s, _, _ = qenv.step(s, hs.inner.sample_uniform(rng_k))
            min_h = min(min_h, qenv.barrier_value(s))
    checks.append(
        _check(
            f"quad barrier floor over {n_quad_rollouts}x{quad_steps} random rollouts",
            min_h >= QUAD_SAFETY_FLOOR and empties == 0,
            f"min h {min_h:.6f} (floor {QUAD_SAFETY_FLOOR}), empty events {empties}",
        )
    )
    return checks


# ---------------------------------------------------------------------------
# normalization: interval / full-support / erf oracles
# ---------------------------------------------------------------------------


def suite_normalization():
    from .safety import Interval

    checks = []
    # uniform base on [0, 1]: the mass of [0.2, 0.6] is exactly 0.4
    pol = BetaBoxPolicy.create(2, 1, hidden=(4,), rng=Rng(3))
    from .nets import flatten, unflatten

    layers = unflatten(pol.spec, np.zeros_like(pol.params))
    layers[-1][1][:] = -60.0
    pol = pol.with_params(flatten(layers))
    support = ActionBox(np.array([0.0]), np.array([1.0]))
    x = np.zeros(2)
    est = estimate_normalization(pol, x, Interval(0.2, 0.6), 10_000, Rng(31), support_box=support)
    quad = estimate_normalization_quadrature(pol, x, Interval(0.2, 0.6), support_box=support)
    checks.append(
        _check(
            "uniform base mass of [0.2, 0.6]",
            abs(est - 0.4) <= 1e-9 and abs(quad - 0.4) <= 1e-10,
            f"mc {est:.12f}, quadrature {quad:.12f}",
        )
    )
    full = estimate_normalization(pol, x, Interval(0.0, 1.0), 2_000, Rng(32), support_box=support)
    checks.append(_check("full-support mass is 1", abs(full - 1.0) <= 1e-9, f"mc {full:.12f}"))

    clip = ActionBox(np.array([-10.0]), np.array([10.0]))
    gauss = GaussianClippedPolicy.create(2, 1, clip, hidden=(4,), rng=Rng(5))
    gauss = gauss.with_params(np.zeros_like(gauss.params))
    m = 100_000
    est = estimate_normalization(gauss, x, Interval(-1.0, 1.0), m, Rng(34))
    want = math.erf(1.0 / math.sqrt(2.0))
    nodes = np.linspace(-1, 1, 10_001)
    se = 2.0 * np.std(np.exp(-0.5 * nodes**2) / math.sqrt(2 * math.pi)) / math.sqrt(m)
    checks.append(
        _check(
            "standard normal mass of [-1, 1] vs erf",
            abs(est - want) <= 3.0 * se,
            f"mc {est:.6f} vs erf {want:.6f} (3se = {3 * se:.6f})",
        )
    )

    quad_mass = estimate_normalization_quadrature(gauss, x, Interval(-0.5, 1.5), n_nodes=64)
    rng = Rng(36)
    estimates = np.array(
        [estimate_normalization(gauss, x, Interval(-0.5, 1.5), 100, rng) for _ in range(200)]
    )
    se = estimates.std(ddof=1) / math.sqrt(len(estimates))
    checks.append(
        _check(
            "mc normalization unbiased (200 estimates at M=100)",
            abs(estimates.mean() - quad_mass) <= 3.0 * se,
            f"grand mean {estimates.mean():.6f} vs quadrature {quad_mass:.6f} (3se = {3 * se:.6f})",
        )
    )
    return checks


SUITES = {
    "estq": suite_estq,
    "scores": suite_scores,
    "maxrect": suite_maxrect,
    "invariance": suite_invariance,
    "normalization": suite_normalization,
}


def run_suite(name: str):
    """Run one named suite; raises KeyError for unknown names."""
    return SUITES[name]()
