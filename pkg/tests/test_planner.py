import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgpnav.errors import InvalidArgumentError, NoFeasibleSubgoalError
from sgpnav.planner import (
    CostWeights,
    RobotSpec,
    SafetyLimits,
    Subgoal,
    WorldPose,
    evaluate_subgoals,
    place_subgoals,
    rotation_matrix,
    select,
    select_index,
    steepness_cost,
    to_world,
)
from sgpnav.segmentation import Segment

R_OC = 7.0
ROBOT = RobotSpec(0.67, 0.17)
LIMITS = SafetyLimits()
PURE_MINMAX = CostWeights(0.2, 0.3, 0.5, spread_floor=(0.0, 0.0, 0.0))


def segment(a0, a1, elev=0.0):
    return Segment(a0, a1, elev, R_OC * math.sin(elev), R_OC * (a1 - a0))


def scored(total, direction=0.0, azimuth=0.0):
    s = Subgoal.at(azimuth, 0.0, R_OC)
    return replace(s, cost_components=(direction, 0.0, 0.0), total_cost=total)


def world_subgoal(x, y, z):
    s = Subgoal.at(math.atan2(y, x), 0.0, R_OC)
    return replace(s, world_frame=np.array([x, y, z], dtype=float))


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


class TestTypes:
    def test_clearance(self):
        assert ROBOT.clearance_width == pytest.approx(0.84)

    def test_robot_validation(self):
        with pytest.raises(InvalidArgumentError):
            RobotSpec(0.0, 0.1)

    def test_limits_validation(self):
        with pytest.raises(InvalidArgumentError):
            SafetyLimits(slope_height_range=(1.0, -1.0))
        with pytest.raises(InvalidArgumentError):
            SafetyLimits(roll_max=0.0)

    def test_default_height_band(self):
        lo, hi = LIMITS.height_range(R_OC)
        assert hi == pytest.approx(R_OC * math.sin(LIMITS.pitch_max)) and lo == -hi

    def test_weights_validation(self):
        with pytest.raises(InvalidArgumentError):
            CostWeights(0.0, 0.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            CostWeights(-0.1, 0.3, 0.5)
        with pytest.raises(InvalidArgumentError):
            CostWeights(spread_floor=(0.0, -1.0, 0.0))

    def test_pose_yaw_wrapped(self):
        assert WorldPose([0, 0, 0], yaw=math.pi).yaw == pytest.approx(-math.pi)
        assert WorldPose([0, 0], yaw=3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)

    def test_pose_rejects_nan(self):
        with pytest.raises(InvalidArgumentError):
            WorldPose([0, 0, 0], yaw=math.nan)


# ---------------------------------------------------------------------------
# Subgoal placement
# ---------------------------------------------------------------------------


class TestPlacement:
    def test_narrow_segment_skipped(self):
        assert place_subgoals([segment(0.0, 0.5 / R_OC)], ROBOT, LIMITS, R_OC) == []

    def test_exact_clearance_skipped(self):
        assert place_subgoals([segment(0.0, 0.84 / R_OC)], ROBOT, LIMITS, R_OC) == []

    def test_midpoint(self):
        subs = place_subgoals([segment(0.0, 0.2)], ROBOT, LIMITS, R_OC)
        assert len(subs) == 1 and subs[0].azimuth == pytest.approx(0.1)
        assert np.allclose(subs[0].robot_frame, [R_OC * math.cos(0.1), R_OC * math.sin(0.1), 0.0])

    def test_equidistant_split(self):
        span = 4.2 / R_OC
        subs = place_subgoals([segment(0.0, span)], ROBOT, LIMITS, R_OC)
        assert len(subs) == 4
        assert np.allclose([s.azimuth for s in subs], [k * span / 5 for k in range(1, 5)])

    def test_height_band_gate(self):
        steep = segment(0.0, 0.2, elev=0.25)
        limits = SafetyLimits(slope_height_range=(-1.0, 1.0))
        assert place_subgoals([steep], ROBOT, limits, R_OC) == []
        assert len(place_subgoals([steep], ROBOT, LIMITS, R_OC)) == 1

    def test_radius_and_elevation(self):
        s = place_subgoals([segment(-0.3, 0.0, elev=-0.1)], ROBOT, LIMITS, R_OC)[0]
        assert s.radius == R_OC and s.elevation == -0.1
        assert np.linalg.norm(s.robot_frame) == pytest.approx(R_OC)

    def test_wrapped_segment_azimuth(self):
        s = place_subgoals([segment(3.0, 3.3)], ROBOT, LIMITS, R_OC)[0]
        assert s.azimuth == pytest.approx(3.15 - 2 * math.pi)

    def test_never_below_clearance(self, rng):
        for _ in range(200):
            a0 = rng.uniform(-3, 3)
            seg = segment(a0, a0 + rng.uniform(0.01, 0.4))
            subs = place_subgoals([seg], ROBOT, LIMITS, R_OC)
            assert not subs or seg.width > ROBOT.clearance_width


# ---------------------------------------------------------------------------
# World transform
# ---------------------------------------------------------------------------


class TestToWorld:
    def test_identity(self):
        s = Subgoal.at(0.3, 0.1, R_OC)
        assert np.array_equal(to_world(s, WorldPose([0, 0, 0])).world_frame, s.robot_frame)

    def test_yaw_quarter_turn(self):
        s = replace(Subgoal.at(0.0, 0.0, 1.0), robot_frame=np.array([1.0, 0.0, 0.0]))
        assert np.allclose(to_world(s, WorldPose([0, 0, 0], yaw=math.pi / 2)).world_frame, [0, 1, 0], atol=1e-15)

    def test_translation(self):
        s = replace(Subgoal.at(0.0, 0.0, 1.0), robot_frame=np.array([1.0, 2.0, 0.0]))
        assert np.allclose(to_world(s, WorldPose([5, 5, 1])).world_frame, [6, 7, 1])

    def test_zyx_order(self, rng):
        r, p, y = rng.uniform(-1, 1, 3)

        def rx(a):
            return np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])

        def ry(a):
            return np.array([[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]])

        def rz(a):
            return np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])

        assert np.allclose(rotation_matrix(r, p, y), rz(y) @ ry(p) @ rx(r), atol=1e-15)

    def test_positive_pitch_lowers_forward_point(self):
        s = replace(Subgoal.at(0.0, 0.0, 1.0), robot_frame=np.array([1.0, 0.0, 0.0]))
        assert to_world(s, WorldPose([0, 0, 0], pitch=0.2)).world_frame[2] < 0


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


class TestSteepness:
    def test_level(self):
        assert steepness_cost(0.0, 0.0) == 0.0

    def test_uphill_hand_value(self):
        assert steepness_cost(1.0, 0.5) == pytest.approx(2.35914091422952, abs=1e-9)

    def test_downhill_hand_value(self):
        assert steepness_cost(-1.0, 0.5) == pytest.approx(1.18393972058572, abs=1e-9)

    def test_zero_pitch_sign(self):
        assert steepness_cost(2.0, 0.0) == 4.0

    @given(st.floats(-5, 5), st.floats(-1, 1))
    def test_odd_symmetry(self, dz, pitch):
        assert steepness_cost(dz, pitch) == pytest.approx(steepness_cost(-dz, -pitch), rel=1e-12, abs=1e-12)

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(-1, 1))
    def test_monotone_in_aligned_dz(self, a, b, pitch):
        lo, hi = sorted((a, b))
        s = 1.0 if pitch >= 0 else -1.0
        assert steepness_cost(s * hi, pitch) >= steepness_cost(s * lo, pitch)


class TestEvaluate:
    def test_single_candidate_zero(self):
        out = evaluate_subgoals([world_subgoal(7, 0, 0)], WorldPose([0, 0, 0]), (20, 0), CostWeights())
        assert out[0].total_cost == 0.0 and out[0].normalized_costs == (0.0, 0.0, 0.0)

    def test_requires_world_frame(self):
        with pytest.raises(InvalidArgumentError):
            evaluate_subgoals([Subgoal.at(0, 0, R_OC)], WorldPose([0, 0, 0]), (1, 0), CostWeights())

    def test_requires_candidates(self):
        with pytest.raises(InvalidArgumentError):
            evaluate_subgoals([], WorldPose([0, 0, 0]), (1, 0), CostWeights())

    def test_larger_dz_costs_more(self):
        subs = [world_subgoal(7, 0, 0.2), world_subgoal(7, 0, 1.0)]
        out = evaluate_subgoals(subs, WorldPose([0, 0, 0], pitch=0.1), (20, 0), PURE_MINMAX)
        assert out[1].total_cost > out[0].total_cost

    def test_five_candidate_hand_oracle(self):
        pose = WorldPose([1.0, 2.0, 0.5], yaw=0.3, pitch=0.2)
        goal = (15.0, 4.0)
        pts = [(7.0, 4.0, 1.2), (5.0, 8.0, 0.1), (-3.0, 4.0, 0.5), (6.0, -1.0, 2.0), (8.0, 2.5, 0.9)]
        # row by row: heading error, planar distance to goal, steepness
        raw = []
        for x, y, z in pts:
            d = math.atan2(y - 2.0, x - 1.0) - 0.3
            d = abs((d + math.pi) % (2 * math.pi) - math.pi)
            dst = math.sqrt((15.0 - x) ** 2 + (4.0 - y) ** 2)
            dz = z - 0.5
            stp = dz * dz + math.exp(dz) * 0.2
            raw.append((d, dst, stp))
        cols = list(zip(*raw))
        norm = [[(v - min(c)) / (max(c) - min(c)) for v in c] for c in cols]
        expected = [0.2 * norm[0][i] + 0.3 * norm[1][i] + 0.5 * norm[2][i] for i in range(5)]
        out = evaluate_subgoals([world_subgoal(*p) for p in pts], pose, goal, PURE_MINMAX)
        for i, s in enumerate(out):
            assert s.total_cost == pytest.approx(expected[i], abs=1e-9)
            assert s.cost_components == pytest.approx(raw[i], abs=1e-12)

    def test_spread_floor_limits_small_spreads(self):
        subs = [world_subgoal(7, 0, 0.0), world_subgoal(7, 0, 0.1)]
        pose = WorldPose([0, 0, 0])
        out = evaluate_subgoals(subs, pose, (7, 0), CostWeights(0.0, 0.0, 1.0, spread_floor=(0.0, 0.0, 0.1)))
        # spread 0.01 is below the 0.1 floor, so the scaled gap is 0.1 not 1
        assert out[1].normalized_costs[2] == pytest.approx(0.1, abs=1e-12)
        wide = evaluate_subgoals(
            [world_subgoal(7, 0, 0.0), world_subgoal(7, 0, 1.0)], pose, (7, 0), CostWeights(0.0, 0.0, 1.0)
        )
        assert wide[1].normalized_costs[2] == pytest.approx(1.0)

    def test_heading_only_selection(self):
        subs = [world_subgoal(7 * math.cos(a), 7 * math.sin(a), 0.0) for a in (-0.4, 0.1, 0.6)]
        out = evaluate_subgoals(subs, WorldPose([0, 0, 0]), (0, 0), CostWeights(1.0, 1.0, 0.0))
        assert select_index(out) == 1

    def test_direction_is_absolute(self):
        subs = [world_subgoal(7 * math.cos(a), 7 * math.sin(a), 0.0) for a in (-0.5, 0.5)]
        out = evaluate_subgoals(subs, WorldPose([0, 0, 0]), (0, 0), CostWeights(1.0, 0.0, 0.0))
        assert out[0].cost_components[0] == pytest.approx(out[1].cost_components[0])


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


class TestSelect:
    def test_single(self):
        s = scored(0.5)
        assert select([s]) is s

    def test_argmin(self):
        assert select_index([scored(0.4), scored(0.2), scored(0.9)]) == 1

    def test_tie_on_direction(self):
        assert select_index([scored(0.5, 0.3), scored(0.5, 0.1)]) == 1

    def test_tie_on_azimuth(self):
        assert select_index([scored(0.5, 0.1, 0.4), scored(0.5, 0.1, -0.2)]) == 1

    def test_empty(self):
        with pytest.raises(NoFeasibleSubgoalError):
            select([])

    def test_unscored(self):
        with pytest.raises(InvalidArgumentError):
            select([Subgoal.at(0, 0, R_OC)])

    def test_affine_invariance(self, rng):
        for _ in range(200):
            costs = rng.uniform(0, 1, int(rng.integers(1, 12)))
            a, b = rng.uniform(0.1, 10), rng.uniform(-5, 5)
            base = [scored(float(c), azimuth=float(k)) for k, c in enumerate(costs)]
            moved = [scored(float(a * c + b), azimuth=float(k)) for k, c in enumerate(costs)]
            assert select_index(base) == select_index(moved)
