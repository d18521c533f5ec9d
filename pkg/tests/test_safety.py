import math

import numpy as np
import pytest

from cbfrl.safety import (
    ActionBox,
    HalfspaceBox,
    Interval,
    PendulumCbfParams,
    QuadEcbfParams,
    SafeSetEmpty,
    halfspace_box_set,
    max_inner_hyperrectangle,
    pendulum_safe_interval,
    quad_ecbf_halfspace,
    quad_h,
    quad_h_dot,
)
from cbfrl.stochastics import Rng


def pendulum_inequalities(theta, theta_dot, u, p):
    """Direct evaluation of the two barrier inequalities (the oracle)."""
    c = p.dt**2 * (3.0 * p.g / (2.0 * p.l) * math.sin(theta) + 3.0 / (p.m * p.l**2) * u)
    s = p.dt * theta_dot + c
    return (s + p.eta * (theta + p.theta_bound), -s + p.eta * (p.theta_bound - theta))


def grid_best_rectangle_area(a, b, box, n=200, tol=1e-12):
    """Brute-force oracle: best axis-aligned rectangle with the free corner on
    an n-by-n grid, anchored at each box corner."""
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


class TestActionBox:
    def test_validation(self):
        with pytest.raises(ValueError):
            ActionBox(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            ActionBox(np.array([0.0]), np.array([np.inf]))

    def test_volume_and_contains(self):
        box = ActionBox(np.array([0.0, -1.0]), np.array([2.0, 1.0]))
        assert box.volume == pytest.approx(4.0)
        assert box.contains([1.0, 0.0])
        assert not box.contains([3.0, 0.0])

    def test_uniform_samples_inside(self):
        rng = Rng(5)
        box = ActionBox(np.array([-2.0, 3.0]), np.array([-1.0, 7.0]))
        for _ in range(500):
            assert box.contains(box.sample_uniform(rng), tol=0.0)


class TestPendulumSafeInterval:
    def test_origin_state_gives_full_torque_box(self):
        p = PendulumCbfParams(eta=0.5, theta_bound=1.0)
        iv = pendulum_safe_interval(0.0, 0.0, p)
        # Barrier alone allows |u| <= 0.5 / 0.0075 = 66.67; actuator box binds.
        assert iv.lo == pytest.approx(-15.0)
        assert iv.hi == pytest.approx(15.0)
        gain = p.dt**2 * 3.0
        assert p.eta * p.theta_bound / gain == pytest.approx(66.666666667)

    def test_interval_matches_inequality_oracle(self):
        rng = Rng(21)
        p = PendulumCbfParams(eta=0.4, theta_bound=1.0)
        grid = np.linspace(-15.0, 15.0, 20_001)
        for _ in range(50):
            theta = float(rng.uniform(-1.0, 1.0))
            theta_dot = float(rng.uniform(-3.0, 3.0))
            try:
                iv = pendulum_safe_interval(theta, theta_dot, p)
            except SafeSetEmpty:
                ok = [
                    u
                    for u in grid
                    if min(pendulum_inequalities(theta, theta_dot, u, p)) >= 0.0
                ]
                assert not ok
                continue
            ok = np.array(
                [min(pendulum_inequalities(theta, theta_dot, u, p)) >= -1e-12 for u in grid]
            )
            sel = grid[ok]
            step = grid[1] - grid[0]
            assert iv.lo == pytest.approx(sel.min(), abs=step)
            assert iv.hi == pytest.approx(sel.max(), abs=step)

    def test_boundary_state_one_sided(self):
        p = PendulumCbfParams(eta=0.5, theta_bound=1.0)
        iv = pendulum_safe_interval(p.theta_bound, 0.0, p)
        # Upper inequality forces dt*thetadot + c <= 0, i.e. u <= -5 sin(1).
        assert iv.hi == pytest.approx(-5.0 * math.sin(1.0), abs=1e-9)
        assert iv.lo == pytest.approx(-15.0)
        for u in np.linspace(iv.lo, iv.hi, 101):
            assert min(pendulum_inequalities(p.theta_bound, 0.0, u, p)) >= -1e-12

    def test_empty_interval(self):
        p = PendulumCbfParams(eta=0.5, theta_bound=0.5)
        with pytest.raises(SafeSetEmpty):
            pendulum_safe_interval(0.0, 8.0, p)

    def test_unsafe_state_rejected(self):
        p = PendulumCbfParams(theta_bound=0.5)
        with pytest.raises(ValueError):
            pendulum_safe_interval(0.7, 0.0, p)

    def test_one_step_invariance_sweep(self):
        # Corollary-style check: u in the interval implies the next-step
        # barrier dominates (1 - eta) times the current one. The dynamics
        # update is re-derived inline (it is the oracle here).
        rng = Rng(33)
        p = PendulumCbfParams(eta=0.2, theta_bound=0.5)
        checked = 0
        for _ in range(20_000):
            theta = float(rng.uniform(-p.theta_bound, p.theta_bound))
            theta_dot = float(rng.uniform(-8.0, 8.0))
            try:
                iv = pendulum_safe_interval(theta, theta_dot, p)
            except SafeSetEmpty:
                continue
            u = float(iv.sample_uniform(rng)[0])
            acc = 3.0 * p.g / (2.0 * p.l) * math.sin(theta) + 3.0 / (p.m * p.l**2) * u
            theta_next = theta + p.dt * theta_dot + p.dt**2 * acc
            h_now = p.barrier(theta)
            h_next = p.barrier(theta_next)
            assert (h_next >= (1.0 - p.eta) * h_now - 1e-9).all()
            assert abs(theta_next) <= p.theta_bound + 1e-9
            checked += 1
        assert checked > 10_000


class TestQuadBarrier:
    def test_center_value(self):
        p = QuadEcbfParams(r_s=1.0, r_obs=np.array([0.0, 0.0, 0.0]))
        assert quad_h(np.zeros(3), p) == pytest.approx(-1.0)

    def test_level_set_point(self):
        p = QuadEcbfParams(a=2.0, r_s=3.0, r_obs=np.zeros(3))
        r = np.array([2.0 * 3.0**0.25, 0.0, 0.0])
        assert quad_h(r, p) == pytest.approx(0.0, abs=1e-12)

    def test_far_point(self):
        p = QuadEcbfParams(a=1.0, b=1.0, c=1.0, r_s=1.0, r_obs=np.zeros(3))
        assert quad_h(np.array([2.0, 2.0, 2.0]), p) == pytest.approx(47.0)

    def test_two_dimensional_states(self):
        p = QuadEcbfParams(r_s=1.0, r_obs=np.array([2.5, 2.5]))
        assert quad_h(np.array([2.5, 2.5]), p) == pytest.approx(-1.0)
        assert quad_h(np.array([4.5, 2.5]), p) == pytest.approx(15.0)


class TestQuadEcbfHalfspace:
    def test_hand_values_unit_offsets(self):
        p = QuadEcbfParams(a=1.0, b=1.0, c=1.0, r_s=1.0, k1=6.0, k2=8.0, r_obs=np.zeros(3))
        a_row, b = quad_ecbf_halfspace(np.array([1.0, 0.0, 0.0]), np.zeros(3), p)
        assert np.allclose(a_row, [-4.0, 0.0, 0.0])
        assert b == pytest.approx(0.0, abs=1e-12)

        a_row, b = quad_ecbf_halfspace(np.array([2.0, 0.0, 0.0]), np.zeros(3), p)
        assert np.allclose(a_row, [-32.0, 0.0, 0.0])
        assert b == pytest.approx(90.0)

    def test_obstacle_center_degenerates(self):
        p = QuadEcbfParams(r_s=1.0, r_obs=np.array([0.0, 0.0]))
        rdot = np.array([1.5, -0.5])
        a_row, b = quad_ecbf_halfspace(np.zeros(2), rdot, p)
        assert np.allclose(a_row, 0.0)
        assert b == pytest.approx(p.k1 * (-p.r_s))  # D vanishes with dr = 0

    def test_zero_velocity_on_level_set(self):
        p = QuadEcbfParams(a=1.0, r_s=1.0, r_obs=np.zeros(2))
        a_row, b = quad_ecbf_halfspace(np.array([1.0, 0.0]), np.zeros(2), p)
        assert b == pytest.approx(0.0, abs=1e-12)

    def test_discrete_condition_identity(self):
        # For any u with a_row.u <= b the quantity hddot + k1 h + k2 hdot,
        # assembled independently from the derivative formulas, is >= 0.
        rng = Rng(44)
        p = QuadEcbfParams(a=1.3, b=0.8, r_s=2.0, r_obs=np.array([1.0, -1.0]))
        for _ in range(2_000):
            r = np.asarray(rng.uniform(-4.0, 4.0, size=2))
            rdot = np.asarray(rng.uniform(-3.0, 3.0, size=2))
            a_row, b = quad_ecbf_halfspace(r, rdot, p)
            u = np.asarray(rng.uniform(-5.0, 5.0, size=2))
            if float(a_row @ u) > b:
                continue
            dr = r - p.r_obs
            ax = np.array([p.a, p.b])
            h = ((dr / ax) ** 4).sum() - p.r_s
            hdot = float((4.0 * dr**3 / ax**4) @ rdot)
            hddot = float((12.0 * dr**2 / ax**4) @ (rdot**2) + (4.0 * dr**3 / ax**4) @ u)
            assert hddot + p.k1 * h + p.k2 * hdot >= -1e-9


class TestMaxInnerHyperrectangle:
    def box01(self):
        return ActionBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))

    def test_diagonal_constraint_closed_form(self):
        rect = max_inner_hyperrectangle(np.array([1.0, 1.0]), 1.0, self.box01())
        assert np.allclose(rect.lower, [0.0, 0.0])
        assert np.allclose(rect.upper, [0.5, 0.5])
        assert rect.volume == pytest.approx(0.25)
        grid = grid_best_rectangle_area(np.array([1.0, 1.0]), 1.0, self.box01())
        assert rect.volume >= 0.99 * grid

    def test_inactive_constraint(self):
        rect = max_inner_hyperrectangle(np.array([1.0, 0.0]), 10.0, self.box01())
        assert np.allclose(rect.lower, [0.0, 0.0]) and np.allclose(rect.upper, [1.0, 1.0])

    def test_infeasible(self):
        with pytest.raises(SafeSetEmpty):
            max_inner_hyperrectangle(np.array([1.0, 0.0]), -1.0, self.box01())

    def test_axis_aligned_constraint_clips_one_side(self):
        rect = max_inner_hyperrectangle(np.array([1.0, 0.0]), 0.25, self.box01())
        assert rect.volume == pytest.approx(0.25)
        assert rect.upper[0] == pytest.approx(0.25)
        assert rect.upper[1] == pytest.approx(1.0)

    def test_degenerate_zero_row(self):
        rect = max_inner_hyperrectangle(np.array([0.0, 0.0]), 0.5, self.box01())
        assert rect.volume == pytest.approx(1.0)
        with pytest.raises(SafeSetEmpty):
            max_inner_hyperrectangle(np.array([0.0, 0.0]), -0.5, self.box01())

    def test_500_random_instances_against_grid_oracle(self):
        rng = Rng(77)
        solved = 0
        for _ in range(500):
            a = np.asarray(rng.normal(2))
            if rng.uniform() < 0.15:
                a[int(rng.integers(0, 2))] = 0.0
            lo = np.asarray(rng.uniform(-3.0, 1.0, size=2))
            hi = lo + np.asarray(rng.uniform(0.2, 4.0, size=2))
            box = ActionBox(lo, hi)
            mid = a @ (0.5 * (lo + hi))
            b = float(mid + rng.uniform(-3.0, 3.0))
            try:
                rect = max_inner_hyperrectangle(a, b, box)
            except SafeSetEmpty:
                assert grid_best_rectangle_area(a, b, box) == 0.0
                continue
            solved += 1
            for corner in rect.corners():
                assert float(a @ corner) <= b + 1e-9
            assert (rect.lower >= box.lower - 1e-12).all()
            assert (rect.upper <= box.upper + 1e-12).all()
            assert rect.volume >= 0.99 * grid_best_rectangle_area(a, b, box)
        assert solved >= 300


class TestHalfspaceBoxSet:
    def test_volume_triangle_case(self):
        box = ActionBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        hs = halfspace_box_set(np.array([1.0, 1.0]), 1.0, box)
        assert hs.volume == pytest.approx(0.5, rel=1e-9)
        assert hs.inner.volume == pytest.approx(0.25)

    def test_volume_full_box(self):
        box = ActionBox(np.array([-1.0, -2.0]), np.array([3.0, 2.0]))
        hs = halfspace_box_set(np.array([0.3, -0.8]), 100.0, box)
        assert hs.volume == pytest.approx(box.volume, rel=1e-12)

    def test_volume_matches_grid_estimate(self):
        rng = Rng(91)
        for _ in range(20):
            a = np.asarray(rng.normal(2))
            lo = np.asarray(rng.uniform(-2.0, 0.0, size=2))
            hi = lo + np.asarray(rng.uniform(0.5, 3.0, size=2))
            box = ActionBox(lo, hi)
            b = float(a @ (0.5 * (lo + hi)) + rng.uniform(-1.0, 1.0))
            try:
                hs = halfspace_box_set(a, b, box)
            except SafeSetEmpty:
                continue
            n = 400
            xs = np.linspace(lo[0], hi[0], n)
            ys = np.linspace(lo[1], hi[1], n)
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            frac = float((a[0] * X + a[1] * Y <= b).mean())
            assert hs.volume == pytest.approx(frac * box.volume, abs=0.02 * box.volume)

    def test_membership_and_uniform_sampling(self):
        rng = Rng(92)
        box = ActionBox(np.array([-2.0, -2.0]), np.array([2.0, 2.0]))
        hs = halfspace_box_set(np.array([1.0, -0.5]), 0.3, box)
        for _ in range(2_000):
            u = hs.sample_uniform(rng)
            assert hs.contains(u, tol=0.0)
        inner_rng = Rng(93)
        for _ in range(2_000):
            u = hs.inner.sample_uniform(inner_rng)
            assert float(hs.a_row @ u) <= hs.b + 1e-9

    def test_soundness_sweep_random_quad_states(self):
        rng = Rng(94)
        accel = ActionBox(np.array([-2.0, -2.0]), np.array([2.0, 2.0]))
        checked = 0
        for _ in range(2_000):
            p = QuadEcbfParams(
                a=float(rng.uniform(0.5, 2.0)),
                b=float(rng.uniform(0.5, 2.0)),
                r_s=float(rng.uniform(0.5, 2.0)),
                r_obs=np.asarray(rng.uniform(-1.0, 1.0, size=2)),
                accel_box=accel,
            )
            r = np.asarray(rng.uniform(-4.0, 4.0, size=2))
            if quad_h(r, p) < 0.0:
                continue
            rdot = np.asarray(rng.uniform(-2.0, 2.0, size=2))
            a_row, b = quad_ecbf_halfspace(r, rdot, p)
            try:
                hs = halfspace_box_set(a_row, b, accel)
            except SafeSetEmpty:
                continue
            for _ in range(5):
                u = hs.inner.sample_uniform(rng)
                assert float(a_row @ u) - b <= 1e-9
                assert accel.contains(u)
            checked += 1
        assert checked > 500


class TestIntervalType:
    def test_invariants(self):
        with pytest.raises(ValueError):
            Interval(2.0, 1.0)
        iv = Interval(-1.0, 3.0)
        assert iv.volume == pytest.approx(4.0)
        assert iv.contains(0.0) and not iv.contains(3.5)

    def test_uniform_sampling(self):
        rng = Rng(95)
        iv = Interval(2.0, 5.0)
        xs = np.array([iv.sample_uniform(rng)[0] for _ in range(5_000)])
        assert xs.min() >= 2.0 and xs.max() <= 5.0
        assert abs(xs.mean() - 3.5) < 0.05
