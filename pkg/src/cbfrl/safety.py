"""State-dependent safe action sets built from barrier conditions.

Two constructions are provided:

* the pendulum's one-step barrier condition, which reduces to a pair of
  linear inequalities in the torque and yields a closed interval, and
* the quadcopter's second-order barrier condition, which yields a
  halfspace in acceleration space; intersected with the actuator box it
  admits a maximal inner axis-aligned rectangle that box-supported
  policies can sample from directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .stochastics import Rng

__all__ = [
    "SafeSetEmpty",
    "ActionBox",
    "Interval",
    "BoxSet",
    "HalfspaceBox",
    "PendulumCbfParams",
    "QuadEcbfParams",
    "pendulum_safe_interval",
    "quad_h",
    "quad_h_dot",
    "quad_ecbf_halfspace",
    "max_inner_hyperrectangle",
    "halfspace_box_set",
]

CORNER_SLACK = 1e-9


class SafeSetEmpty(Exception):
    """The admissible control set at the current state is empty."""


@dataclass(frozen=True)
class ActionBox:
    """Axis-aligned box of control vectors, lower[i] <= upper[i]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box bounds must be finite")
        if (lo > hi).any():
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains(self, u, tol: float = CORNER_SLACK) -> bool:
        u = np.asarray(u, dtype=float)
        return bool((u >= self.lower - tol).all() and (u <= self.upper + tol).all())

    def clip(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def sample_uniform(self, rng: Rng) -> np.ndarray:
        return self.lower + rng.uniform(size=self.dim) * self.width

    def corners(self) -> np.ndarray:
        if self.dim != 2:
            raise ValueError("corners() supports 2-D boxes only")
        lo, hi = self.lower, self.upper
        return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


@dataclass(frozen=True)
class Interval:
    """Closed interval of scalar controls; the 1-D safe action set."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("interval bounds must be finite")
        if self.lo > self.hi:
            raise ValueError("interval lower bound exceeds upper bound")

    @property
    def volume(self) -> float:
        return self.hi - self.lo

    def contains(self, u, tol: float = CORNER_SLACK) -> bool:
        u = float(np.asarray(u).reshape(()))
        return self.lo - tol <= u <= self.hi + tol

    def sample_uniform(self, rng: Rng) -> np.ndarray:
        return np.array([self.lo + rng.uniform() * (self.hi - self.lo)])

    def as_box(self) -> ActionBox:
        return ActionBox(np.array([self.lo]), np.array([self.hi]))

    @property
    def sampling_box(self) -> ActionBox:
        return self.as_box()


@dataclass(frozen=True)
class BoxSet:
    """Box-shaped safe action set (the whole actuator box is admissible)."""

    box: ActionBox

    @property
    def volume(self) -> float:
        return self.box.volume

    def contains(self, u, tol: float = CORNER_SLACK) -> bool:
        return self.box.contains(u, tol)

    def sample_uniform(self, rng: Rng) -> np.ndarray:
        return self.box.sample_uniform(rng)

    @property
    def sampling_box(self) -> ActionBox:
        return self.box


def _clip_box_by_halfplane(box: ActionBox, a: np.ndarray, b: float):
    """Vertices of box intersect {a.u <= b} (Sutherland-Hodgman, one plane)."""
    poly = list(box.corners())
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp, fq = float(a @ p - b), float(a @ q - b)
        if fp <= 0.0:
            out.append(p)
        if (fp < 0.0 < fq) or (fq < 0.0 < fp):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return out


def _polygon_area(vertices) -> float:
    if len(vertices) < 3:
        return 0.0
    xs = np.array([v[0] for v in vertices])
    ys = np.array([v[1] for v in vertices])
    return 0.5 * abs(float(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))


@dataclass(frozen=True)
class HalfspaceBox:
    """Safe set {u : a_row . u <= b} intersected with an actuator box.

    `inner` is the maximal axis-aligned rectangle inside the
    intersection; box-supported policies sample from it directly.
    """

    a_row: np.ndarray
    b: float
    box: ActionBox
    inner: ActionBox

    def __post_init__(self):
        object.__setattr__(self, "a_row", np.asarray(self.a_row, dtype=float))

    @cached_property
    def volume(self) -> float:
        """Area of the exact intersection (not of the inner rectangle)."""
        worst = float(self.a_row @ np.where(self.a_row > 0, self.box.upper, self.box.lower))
        if worst <= self.b:
            return self.box.volume
        return _polygon_area(_clip_box_by_halfplane(self.box, self.a_row, self.b))

    def contains(self, u, tol: float = CORNER_SLACK) -> bool:
        u = np.asarray(u, dtype=float)
        return self.box.contains(u, tol) and float(self.a_row @ u) <= self.b + tol

    def sample_uniform(self, rng: Rng, max_attempts: int = 10_000) -> np.ndarray:
        """Uniform over the exact intersection, by rejection from the box."""
        for _ in range(max_attempts):
            u = self.box.sample_uniform(rng)
            if float(self.a_row @ u) <= self.b:
                return u
        raise SafeSetEmpty("rejection sampling from halfspace/box intersection failed")

    @property
    def sampling_box(self) -> ActionBox:
        return self.inner


# ---------------------------------------------------------------------------
# pendulum: one-step barrier interval
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PendulumCbfParams:
    """Barrier and dynamics constants for the torque-limited pendulum.

    The safe set is |theta| <= theta_bound; eta in (0, 1) sets the
    per-step geometric decay the barrier pair must respect.
    """

    eta: float = 0.2
    dt: float = 0.05
    m: float = 1.0
    l: float = 1.0
    g: float = 10.0
    theta_bound: float = 0.5
    torque_box: ActionBox = field(
        default_factory=lambda: ActionBox(np.array([-15.0]), np.array([15.0]))
    )

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.theta_bound <= 0.0:
            raise ValueError("theta_bound must be positive")
        if self.torque_box.dim != 1:
            raise ValueError("torque box must be one-dimensional")

    def barrier(self, theta: float) -> np.ndarray:
        """Two-sided barrier [theta + bound, bound - theta]; safe iff >= 0."""
        return np.array([theta + self.theta_bound, self.theta_bound - theta])


def pendulum_safe_interval(theta: float, theta_dot: float, p: PendulumCbfParams) -> Interval:
    """Torques keeping the angle barrier decaying by at most factor (1 - eta).

    Solves the two linear inequalities
        (dt*theta_dot + c(theta, u)) + eta*(theta + bound) >= 0
       -(dt*theta_dot + c(theta, u)) + eta*(bound - theta) >= 0
    with c(theta, u) = dt^2 (3g/(2l) sin(theta) + 3/(m l^2) u), then
    intersects with the torque box.
    """
    if abs(theta) > p.theta_bound + CORNER_SLACK:
        raise ValueError(f"state theta={theta} is outside the safe set |theta| <= {p.theta_bound}")
    gain = p.dt**2 * 3.0 / (p.m * p.l**2)
    drift = p.dt * theta_dot + p.dt**2 * (3.0 * p.g / (2.0 * p.l)) * math.sin(theta)
    lo_cbf = (-p.eta * (theta + p.theta_bound) - drift) / gain
    hi_cbf = (p.eta * (p.theta_bound - theta) - drift) / gain
    lo = max(lo_cbf, float(p.torque_box.lower[0]))
    hi = min(hi_cbf, float(p.torque_box.upper[0]))
    if lo > hi:
        raise SafeSetEmpty(
            f"no admissible torque at theta={theta:.4f}, theta_dot={theta_dot:.4f}"
        )
    return Interval(lo, hi)


# ---------------------------------------------------------------------------
# quadcopter: second-order barrier halfspace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadEcbfParams:
    """Quartic obstacle barrier and gains for the double-integrator quad.

    a, b, c are the obstacle semi-axes, r_s the barrier level, and
    (k1, k2) the gains of the second-order condition
    hddot + k1*h + k2*hdot >= 0.
    """

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    r_s: float = 1.0
    k1: float = 6.0
    k2: float = 8.0
    r_obs: np.ndarray = field(default_factory=lambda: np.array([2.5, 2.5]))
    accel_box: ActionBox = field(
        default_factory=lambda: ActionBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    )
    dt: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "r_obs", np.asarray(self.r_obs, dtype=float))
        if min(self.a, self.b, self.c) <= 0.0:
            raise ValueError("obstacle semi-axes must be positive")
        if self.r_s <= 0.0:
            raise ValueError("safety margin r_s must be positive")
        if min(self.k1, self.k2) <= 0.0:
            raise ValueError("barrier gains must be positive")

    def semi_axes(self, dim: int) -> np.ndarray:
        return np.array([self.a, self.b, self.c])[:dim]


def quad_h(r, p: QuadEcbfParams) -> float:
    """Quartic obstacle barrier; the state is safe iff h(r) >= 0."""
    r = np.asarray(r, dtype=float)
    dr = r - p.r_obs[: r.shape[0]]
    ax = p.semi_axes(r.shape[0])
    return float(((dr / ax) ** 4).sum() - p.r_s)


def quad_h_dot(r, r_dot, p: QuadEcbfParams) -> float:
    """First time derivative of the barrier along the current velocity."""
    a_row, _ = quad_ecbf_halfspace(r, np.zeros_like(np.asarray(r, dtype=float)), p)
    return float(-a_row @ np.asarray(r_dot, dtype=float))


def quad_ecbf_halfspace(r, r_dot, p: QuadEcbfParams):
    """Coefficients (a_row, b) of the admissible-acceleration halfspace a_row . u <= b.

    Derived from the second-order barrier condition with
    hddot = rdot^T D rdot - a_row . u,  hdot = -a_row . rdot,
    D = diag(12 dr_i^2 / axis_i^4) and a_row = -[4 dr_i^3 / axis_i^4].
    """
    r = np.asarray(r, dtype=float)
    r_dot = np.asarray(r_dot, dtype=float)
    dr = r - p.r_obs[: r.shape[0]]
    ax = p.semi_axes(r.shape[0])
    a_row = -4.0 * dr**3 / ax**4
    d_diag = 12.0 * dr**2 / ax**4
    h = quad_h(r, p)
    b = float(r_dot @ (d_diag * r_dot)) + p.k1 * h - p.k2 * float(a_row @ r_dot)
    return a_row, b


# ---------------------------------------------------------------------------
# maximal inner rectangle of halfspace /\ box
# ---------------------------------------------------------------------------


def max_inner_hyperrectangle(a_row, b: float, box: ActionBox) -> ActionBox:
    """Largest-area axis-aligned rectangle inside {a_row . u <= b} /\\ box.

    The optimal rectangle is anchored at one of the box corners with the
    opposite corner either on the constraint line or clamped to the box;
    along the line the area is quadratic in the free corner's position,
    so each anchored case has a closed-form maximizer. All feasible
    anchors are evaluated and the largest area wins, ties going to the
    anchor at the box minimum.
    """
    a = np.asarray(a_row, dtype=float)
    if a.shape != (2,):
        raise ValueError("inner-rectangle solver supports 2-D action spaces only")
    if box.dim != 2:
        raise ValueError("box must be two-dimensional")
    lo, hi = box.lower, box.upper
    worst = float(a @ np.where(a > 0, hi, lo))
    if worst <= b + CORNER_SLACK:
        return box

    w_max = float(hi[0] - lo[0])
    h_max = float(hi[1] - lo[1])
    anchors = [
        (lo[0], lo[1], 1.0, 1.0),
        (hi[0], lo[1], -1.0, 1.0),
        (lo[0], hi[1], 1.0, -1.0),
        (hi[0], hi[1], -1.0, -1.0),
    ]
    best_area = -1.0
    best_rect = None
    for px, py, sx, sy in anchors:
        base = a[0] * px + a[1] * py
        slack = b - base
        if slack < -CORNER_SLACK:
            continue
        slack = max(slack, 0.0)
        c1 = max(0.0, a[0] * sx)
        c2 = max(0.0, a[1] * sy)
        if c1 == 0.0 and c2 == 0.0:
            w, h = w_max, h_max
        elif c1 == 0.0:
            w, h = w_max, min(h_max, slack / c2)
        elif c2 == 0.0:
            w, h = min(w_max, slack / c1), h_max
        else:
            w, h = slack / (2.0 * c1), slack / (2.0 * c2)
            if w > w_max:
                w, h = w_max, min(h_max, (slack - c1 * w_max) / c2)
            elif h > h_max:
                h, w = h_max, min(w_max, (slack - c2 * h_max) / c1)
        w, h = max(w, 0.0), max(h, 0.0)
        if w * h > best_area:
            best_area = w * h
            x2, y2 = px + sx * w, py + sy * h
            best_rect = ActionBox(
                np.array([min(px, x2), min(py, y2)]), np.array([max(px, x2), max(py, y2)])
            )
    if best_rect is None:
        raise SafeSetEmpty("actuator box does not intersect the barrier halfspace")
    return best_rect


def halfspace_box_set(a_row, b: float, box: ActionBox) -> HalfspaceBox:
    """Bundle a halfspace constraint with its box and inner rectangle."""
    inner = max_inner_hyperrectangle(a_row, b, box)
    return HalfspaceBox(a_row=np.asarray(a_row, dtype=float), b=float(b), box=box, inner=inner)
