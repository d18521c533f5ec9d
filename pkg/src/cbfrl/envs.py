"""The two benchmark environments as deterministic discrete-time MDPs.

Both expose pure step functions over immutable state values plus the
per-state safe action set, so trainers and replications can advance
them concurrently without shared mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .safety import (
    ActionBox,
    HalfspaceBox,
    Interval,
    PendulumCbfParams,
    QuadEcbfParams,
    halfspace_box_set,
    pendulum_safe_interval,
    quad_ecbf_halfspace,
    quad_h,
)
from .stochastics import Rng

__all__ = [
    "PendulumState",
    "QuadState",
    "QuadWorld",
    "PendulumEnv",
    "QuadEnv",
    "wrap_angle",
    "QUAD_SAFETY_FLOOR",
]

# Discretizing the quad's continuous-time barrier condition admits dips of
# this size below the h >= 0 level set; states above the floor count as safe.
QUAD_SAFETY_FLOOR = -1e-3

TWO_PI = 2.0 * math.pi


def wrap_angle(x: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(x, TWO_PI)
    return math.pi if w <= -math.pi else w


@dataclass(frozen=True)
class PendulumState:
    theta: float
    theta_dot: float


@dataclass(frozen=True)
class QuadState:
    r: np.ndarray
    r_dot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "r_dot", np.asarray(self.r_dot, dtype=float))


@dataclass(frozen=True)
class QuadWorld:
    """Task geometry and reward constants for the navigation problem."""

    r_start: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0]))
    r_goal: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0]))
    eps_goal: float = 0.25
    r_min: np.ndarray = field(default_factory=lambda: np.array([-2.0, -2.0]))
    r_max: np.ndarray = field(default_factory=lambda: np.array([8.0, 8.0]))
    goal_bonus: float = 50.0
    boundary_penalty: float = 400.0

    def __post_init__(self):
        for name in ("r_start", "r_goal", "r_min", "r_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.eps_goal <= 0.0:
            raise ValueError("eps_goal must be positive")
        if not ((self.r_goal > self.r_min).all() and (self.r_goal < self.r_max).all()):
            raise ValueError("goal must lie strictly inside the world bounds")


class PendulumEnv:
    """Torque-limited pendulum with a two-sided angle barrier.

    Dynamics (per step, before wrapping/clamping):
        theta'     = theta + dt*theta_dot + dt^2 * (3g/(2l) sin(theta) + 3/(m l^2) u)
        theta_dot' = theta_dot + dt * (3g/(2l) sin(theta) + 3/(m l^2) u)
    Reward is the usual quadratic cost on the pre-step state:
        -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2).
    """

    action_dim = 1
    feature_dim = 3
    theta_dot_max = 8.0

    def __init__(self, cbf: PendulumCbfParams | None = None, episode_len: int = 300):
        self.cbf = cbf if cbf is not None else PendulumCbfParams()
        self.episode_len = int(episode_len)

    def reset(self, rng: Rng) -> PendulumState:
        theta = float(rng.uniform(-0.9 * self.cbf.theta_bound, 0.9 * self.cbf.theta_bound))
        theta_dot = float(rng.uniform(-1.0, 1.0))
        return PendulumState(theta, theta_dot)

    def fixed_start(self) -> PendulumState:
        """Deterministic start state for fixed-start training objectives."""
        return PendulumState(0.5 * self.cbf.theta_bound, 0.0)

    def transition(self, s: PendulumState, u) -> tuple:
        """Uniform (state, reward, terminal) protocol; never terminal."""
        s2, r = self.step(s, u)
        return s2, r, False

    def step(self, s: PendulumState, u) -> tuple:
        torque = float(np.asarray(u).reshape(()))
        acc = (
            3.0 * self.cbf.g / (2.0 * self.cbf.l) * math.sin(s.theta)
            + 3.0 / (self.cbf.m * self.cbf.l**2) * torque
        )
        theta_next = s.theta + self.cbf.dt * s.theta_dot + self.cbf.dt**2 * acc
        theta_dot_next = s.theta_dot + self.cbf.dt * acc
        theta_next = wrap_angle(theta_next)
        theta_dot_next = min(max(theta_dot_next, -self.theta_dot_max), self.theta_dot_max)
        reward = -(wrap_angle(s.theta) ** 2 + 0.1 * s.theta_dot**2 + 0.001 * torque**2)
        return PendulumState(theta_next, theta_dot_next), reward

    def features(self, s: PendulumState) -> np.ndarray:
        return np.array([math.cos(s.theta), math.sin(s.theta), s.theta_dot])

    def safe_action_set(self, s: PendulumState) -> Interval:
        return pendulum_safe_interval(s.theta, s.theta_dot, self.cbf)

    def is_safe(self, s: PendulumState) -> bool:
        return abs(s.theta) <= self.cbf.theta_bound + 1e-9

    @property
    def action_box(self) -> ActionBox:
        """Fixed clip box for unconstrained (Gaussian) policies."""
        return self.cbf.torque_box


class QuadEnv:
    """Planar double integrator navigating past a quartic-barrier obstacle.

    Exact zero-order-hold discretization:
        r'     = r + rdot*dt + u*dt^2/2
        rdot'  = rdot + u*dt
    Reward depends on the post-step position: the goal bonus inside the
    goal ball, otherwise negative distance, with an extra penalty outside
    the world bounds.
    """

    action_dim = 2
    feature_dim = 4

    def __init__(
        self,
        ecbf: QuadEcbfParams | None = None,
        world: QuadWorld | None = None,
        episode_len: int = 180,
    ):
        self.ecbf = ecbf if ecbf is not None else QuadEcbfParams()
        self.world = world if world is not None else QuadWorld()
        self.episode_len = int(episode_len)
        if quad_h(self.world.r_start, self.ecbf) <= 0.0:
            raise ValueError("configured start position is not strictly safe")
        if quad_h(self.world.r_goal, self.ecbf) <= 0.0:
            raise ValueError("configured goal position is not strictly safe")

    def reset(self, rng: Rng) -> QuadState:
        del rng  # fixed start; signature kept uniform with PendulumEnv
        return QuadState(self.world.r_start.copy(), np.zeros(2))

    def fixed_start(self) -> QuadState:
        return QuadState(self.world.r_start.copy(), np.zeros(2))

    def transition(self, s: QuadState, u) -> tuple:
        """Uniform (state, reward, terminal) protocol; terminal at the goal."""
        return self.step(s, u)

    def step(self, s: QuadState, u) -> tuple:
        u = np.asarray(u, dtype=float)
        dt = self.ecbf.dt
        r_next = s.r + s.r_dot * dt + 0.5 * u * dt**2
        r_dot_next = s.r_dot + u * dt
        dist = float(np.linalg.norm(r_next - self.world.r_goal))
        reached = dist < self.world.eps_goal
        if reached:
            reward = self.world.goal_bonus
        else:
            inside = bool(
                (r_next > self.world.r_min).all() and (r_next < self.world.r_max).all()
            )
            reward = -dist if inside else -dist - self.world.boundary_penalty
        return QuadState(r_next, r_dot_next), reward, reached

    def features(self, s: QuadState) -> np.ndarray:
        return np.concatenate([s.r, s.r_dot])

    def safe_action_set(self, s: QuadState) -> HalfspaceBox:
        h = quad_h(s.r, self.ecbf)
        if h < QUAD_SAFETY_FLOOR:
            raise ValueError(f"state with h={h:.6f} is outside the safe set")
        a_row, b = quad_ecbf_halfspace(s.r, s.r_dot, self.ecbf)
        return halfspace_box_set(a_row, b, self.ecbf.accel_box)

    def is_safe(self, s: QuadState) -> bool:
        return quad_h(s.r, self.ecbf) >= QUAD_SAFETY_FLOOR

    def barrier_value(self, s: QuadState) -> float:
        return quad_h(s.r, self.ecbf)

    @property
    def action_box(self) -> ActionBox:
        """Fixed clip box for unconstrained (Gaussian) policies."""
        return self.ecbf.accel_box
