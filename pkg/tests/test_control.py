import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgpnav.control import ControlInput, PidGains, PidState, integrate_motion, pid_step, tracking_errors
from sgpnav.errors import InvalidArgumentError
from sgpnav.planner import WorldPose

ORIGIN = WorldPose([0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Tracking errors
# ---------------------------------------------------------------------------


class TestTrackingErrors:
    def test_straight_ahead(self):
        assert tracking_errors(ORIGIN, (1.0, 0.0, 5.0)) == (1.0, 0.0)

    def test_left(self):
        d, e = tracking_errors(ORIGIN, (0.0, 1.0, 0.0))
        assert d == 1.0 and e == pytest.approx(math.pi / 2)

    def test_coincident(self):
        assert tracking_errors(WorldPose([2.0, 3.0, 0.0], yaw=1.0), (2.0, 3.0, 0.0)) == (0.0, 0.0)

    def test_wrapped(self):
        pose = WorldPose([0.0, 0.0, 0.0], yaw=3.0)
        _, e = tracking_errors(pose, (math.cos(-3.0), math.sin(-3.0)))
        assert e == pytest.approx(-6.0 + 2 * math.pi)


# ---------------------------------------------------------------------------
# PID
# ---------------------------------------------------------------------------


class TestPid:
    def test_zero(self):
        u, _ = pid_step((0.0, 0.0), PidGains(), PidState(), 0.1)
        assert (u.v, u.omega) == (0.0, 0.0)

    def test_saturated_linear(self):
        g = PidGains(kp_dist=1.0, kp_yaw=0.0, v_max=0.8)
        u, _ = pid_step((1.0, 0.0), g, PidState(), 0.1)
        assert u.v == 0.8

    def test_turn_in_place(self):
        for e in (math.pi / 2, -2.0, math.pi):
            u, _ = pid_step((5.0, e), PidGains(), PidState(), 0.1)
            assert u.v == 0.0

    def test_cosine_gate(self):
        g = PidGains(kp_dist=0.1, kp_yaw=0.0)
        u, _ = pid_step((1.0, 0.5), g, PidState(), 0.1)
        assert u.v == pytest.approx(0.1 * math.cos(0.5))

    def test_integral_clamped(self):
        g = PidGains(kp_dist=0.0, ki_dist=1.0, integral_limit=0.3)
        state = PidState()
        for _ in range(20):
            u, state = pid_step((1.0, 0.0), g, state, 0.1)
        assert state.integral_dist == 0.3 and u.v == pytest.approx(0.3)

    def test_derivative_term(self):
        g = PidGains(kp_dist=0.0, kd_dist=0.5)
        _, s = pid_step((1.0, 0.0), g, PidState(), 0.1)
        u, _ = pid_step((1.04, 0.0), g, s, 0.1)
        assert u.v == pytest.approx(0.5 * 0.4)

    def test_rejects_bad_dt(self):
        with pytest.raises(InvalidArgumentError):
            pid_step((1.0, 0.0), PidGains(), PidState(), 0.0)

    def test_rejects_negative_gain(self):
        with pytest.raises(InvalidArgumentError):
            PidGains(kp_yaw=-1.0)

    @given(st.floats(-50, 50), st.floats(-math.pi, math.pi))
    def test_saturation_bounds(self, d, e):
        g = PidGains(kp_dist=5.0, kp_yaw=5.0, ki_dist=1.0, kd_yaw=1.0)
        u, s = pid_step((d, e), g, PidState(0.5, -0.5, 0.0, 0.0), 0.02)
        assert abs(u.v) <= g.v_max and abs(u.omega) <= g.omega_max

    def test_proportional_is_memoryless(self, rng):
        g = PidGains(kp_dist=0.7, kp_yaw=1.3)
        ref, _ = pid_step((0.4, 0.3), g, PidState(), 0.1)
        state = PidState()
        for _ in range(10):
            _, state = pid_step(tuple(rng.uniform(-2, 2, 2)), g, state, 0.1)
        again, _ = pid_step((0.4, 0.3), g, state, 0.1)
        assert again == ref


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------


class TestIntegrate:
    def test_straight(self):
        p = integrate_motion(ORIGIN, ControlInput(1.0, 0.0), 0.1)
        assert (p.x, p.y) == pytest.approx((0.1, 0.0), abs=1e-15)

    def test_turn_in_place(self):
        p = integrate_motion(ORIGIN, ControlInput(0.0, 1.0), math.pi)
        assert (p.x, p.y) == (0.0, 0.0)
        assert abs(p.yaw) == pytest.approx(math.pi)

    def test_quarter_arc(self):
        p = integrate_motion(ORIGIN, ControlInput(1.0, 1.0), math.pi / 2)
        assert (p.x, p.y) == pytest.approx((1.0, 1.0), abs=1e-12)
        assert p.yaw == pytest.approx(math.pi / 2)

    def test_branch_continuity(self):
        pose = WorldPose([1.0, -2.0, 0.3], yaw=0.7)
        arc = integrate_motion(pose, ControlInput(0.8, 1e-8), 0.5)
        line = integrate_motion(pose, ControlInput(0.8, 0.0), 0.5)
        assert math.hypot(arc.x - line.x, arc.y - line.y) < 1e-6

    def test_carries_z_and_attitude(self):
        pose = WorldPose([0.0, 0.0, 1.5], roll=0.1, pitch=-0.2)
        p = integrate_motion(pose, ControlInput(0.5, 0.3), 0.1)
        assert (p.z, p.roll, p.pitch) == (1.5, 0.1, -0.2)

    @given(st.floats(-1, 1), st.floats(-2, 2), st.floats(0.001, 1.0), st.floats(-3, 3))
    def test_step_length_bound(self, v, w, dt, yaw):
        pose = WorldPose([0.0, 0.0, 0.0], yaw=yaw)
        p = integrate_motion(pose, ControlInput(v, w), dt)
        assert math.hypot(p.x, p.y) <= abs(v) * dt + 1e-9

    def test_stop_leaves_pose(self):
        pose = WorldPose(np.array([3.0, 4.0, 0.0]), yaw=0.5)
        p = integrate_motion(pose, ControlInput(0.0, 0.0), 0.1)
        assert np.array_equal(p.position, pose.position) and p.yaw == pose.yaw
