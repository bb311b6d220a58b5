"""Simulator tests: kinematics, terrain, the gait engine, and rollouts.

Oracle notes
------------
[DERIVED] FK/IK round trips, law-of-cosines spot checks, displacement and
    elapsed-time arithmetic, plane-fit recovery on an analytic ramp, and
    slip-calibration checks are all verified against independently computed
    closed-form values.
[TRIVIAL] Error paths, determinism, bounds, and flag layouts.
"""
import numpy as np
import pytest

from contextgait.objective import BaseCommand, delta_q
from contextgait.sim import (
    GaitEngine,
    Heightfield,
    ReachError,
    RobotModel,
    SimConfig,
    TerrainSpec,
    ConstantController,
    deltaq_vibration_sweep,
    fk_leg,
    generate_terrain,
    ik_leg,
    ik_leg_clamped,
    rms_vibration,
    run_rollout,
)


def flat_terrain():
    return generate_terrain(TerrainSpec("flat", 0.0, 0))


class TestKinematics:
    def test_fk_ik_round_trip(self):
        # [DERIVED] IK must invert FK everywhere inside the workspace.
        model = RobotModel()
        rng = np.random.default_rng(0)
        checked = 0
        while checked < 1000:
            p = rng.uniform(-0.7, 0.7, size=3)
            p[2] = -abs(p[2]) - 0.05  # below the hip
            r = np.linalg.norm(p)
            if not 0.05 < r < model.reach - 1e-6:
                continue
            leg = int(rng.integers(4))
            target = model.hip_offsets[leg] + p
            back = fk_leg(ik_leg(target, leg, model), leg, model)
            assert np.linalg.norm(back - target) <= 1e-9
            checked += 1

    def test_full_extension_knee_zero(self):
        # [DERIVED] a straight-down target at full reach needs a straight leg.
        model = RobotModel()
        target = model.hip_offsets[0] + np.array([0.0, 0.0, -model.reach])
        roll, pitch, knee = ik_leg(target, 0, model)
        assert abs(knee) <= 1e-9
        assert abs(roll) <= 1e-9 and abs(pitch) <= 1e-9

    def test_half_reach_interior_angle(self):
        # [DERIVED] equal links at distance l: equilateral triangle, so the
        # interior knee angle is 60 degrees and knee = pi - pi/3.
        model = RobotModel(upper=0.3, lower=0.3)
        target = model.hip_offsets[1] + np.array([0.0, 0.0, -0.3])
        knee = ik_leg(target, 1, model)[2]
        assert abs(knee - (np.pi - np.pi / 3)) <= 1e-9

    def test_out_of_reach_rejected_with_deficit(self):
        model = RobotModel()
        target = model.hip_offsets[2] + np.array([0.0, 0.0, -(model.reach + 0.05)])
        with pytest.raises(ReachError, match="deficit"):
            ik_leg(target, 2, model)

    def test_clamped_ik_accepts_out_of_reach(self):
        model = RobotModel()
        target = model.hip_offsets[0] + np.array([0.0, 0.0, -(model.reach + 0.3)])
        angles = ik_leg_clamped(target, 0, model)
        back = fk_leg(angles, 0, model)
        # clamped radially: direction preserved, radius at the workspace edge
        p = back - model.hip_offsets[0]
        assert np.linalg.norm(p) <= model.reach
        assert abs(p[0]) <= 1e-9 and abs(p[1]) <= 1e-9

    def test_bad_link_lengths_rejected(self):
        with pytest.raises(ValueError, match="link lengths"):
            RobotModel(upper=0.0)


class TestTerrain:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            generate_terrain(TerrainSpec("lava", 0.5, 0))

    def test_bad_difficulty_rejected(self):
        with pytest.raises(ValueError, match="difficulty"):
            generate_terrain(TerrainSpec("rough", 1.5, 0))

    def test_flat_is_zero_everywhere(self):
        hf = flat_terrain()
        rng = np.random.default_rng(1)
        xy = rng.uniform(-5, 5, size=(50, 2))
        assert np.all(hf.sample(xy[:, 0], xy[:, 1]) == 0.0)

    def test_rough_amplitude_bound(self):
        from contextgait.sim.terrain import ROUGH_MAX_AMPLITUDE

        hf = generate_terrain(TerrainSpec("rough", 0.5, 3))
        assert np.abs(hf.heights).max() <= 0.5 * ROUGH_MAX_AMPLITUDE

    def test_box_heights_nonnegative_and_bounded(self):
        from contextgait.sim.terrain import BOX_MAX_HEIGHT

        hf = generate_terrain(TerrainSpec("box", 0.8, 3))
        assert hf.heights.min() >= 0.0
        assert hf.heights.max() <= 0.8 * BOX_MAX_HEIGHT

    def test_slope_grade(self):
        # [DERIVED] height difference over a 1 m run equals tan(grade).
        from contextgait.sim.terrain import SLOPE_MAX_GRADE

        hf = generate_terrain(TerrainSpec("slope_up", 1.0, 0))
        rise = hf.sample(1.0, 0.0) - hf.sample(0.0, 0.0)
        assert abs(rise - np.tan(SLOPE_MAX_GRADE)) <= 1e-6

    def test_same_seed_same_field(self):
        a = generate_terrain(TerrainSpec("rough", 0.7, 11))
        b = generate_terrain(TerrainSpec("rough", 0.7, 11))
        assert np.array_equal(a.heights, b.heights)

    def test_bilinear_interpolates_linearly(self):
        # [DERIVED] a planar grid must be reproduced exactly in between nodes.
        xs = np.linspace(-1, 1, 21)
        heights = np.tile(0.3 * xs, (21, 1))
        hf = Heightfield(heights, (2.0, 2.0), 0.1)
        for x in (-0.73, 0.0, 0.41):
            assert abs(hf.sample(x, 0.13) - 0.3 * x) <= 1e-9

    def test_nonfinite_heights_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Heightfield(np.array([[0.0, np.nan], [0.0, 0.0]]), (1.0, 1.0), 1.0)

    def test_mesh_features_shape_and_flat_zero(self):
        hf = flat_terrain()
        f = hf.mesh_features(0.0, 0.0)
        assert f.shape == (128,)
        assert np.all(f == 0.0)


class TestGaitEngine:
    def test_trot_diagonal_pairs(self):
        # [DERIVED] trot: FR+HL share a phase, FL+HR the opposite one.
        eng = GaitEngine(flat_terrain())
        first = eng.stance_mask(0.1)   # phase ~1/6
        second = eng.stance_mask(0.4)  # phase ~2/3
        assert first.tolist() == [True, False, False, True]
        assert second.tolist() == [False, True, True, False]

    def test_plane_fit_recovers_ramp(self):
        # [DERIVED] contacts on h = g*y must give roll = arctan(g) exactly.
        g = 0.2
        ys = np.linspace(-6, 6, 241)
        heights = np.tile(g * ys[:, None], (1, 241))
        hf = Heightfield(heights, (12.0, 12.0), 0.05)
        eng = GaitEngine(hf)
        pitch_t, roll_t, support = eng._plane_fit()
        assert abs(roll_t - np.arctan(g)) <= 1e-6
        assert abs(pitch_t) <= 1e-6
        assert abs(support - g * eng.pos[1]) <= 1e-6

    def test_nonfinite_command_rejected(self):
        eng = GaitEngine(flat_terrain())
        with pytest.raises(ValueError, match="non-finite"):
            eng.step(BaseCommand(np.nan, 0.0, 0.0, 0.5), 0.0)

    def test_zero_slip_flat_is_vibration_free(self):
        # [DERIVED] no slip and a level support plane leave orientation at rest.
        ctrl = ConstantController(BaseCommand(0.5, 0.0, 0.0, 0.5))
        trace = run_rollout(ctrl, flat_terrain(), goal=(1e6, 0.0), timeout=3.0,
                            deltaq_target=0.0, seed=0)
        assert rms_vibration(trace)["total"] == 0.0

    def test_measured_slip_matches_target(self):
        # [DERIVED] per-step stance-masked slip equals the requested amount
        # away from touchdown resets; the median step is clean.
        target = 0.05
        ctrl = ConstantController(BaseCommand(0.5, 0.0, 0.0, 0.5))
        trace = run_rollout(ctrl, flat_terrain(), goal=(1e6, 0.0), timeout=3.0,
                            deltaq_target=target, seed=0)
        steps = [delta_q(trace.proprio_state(i - 1), trace.proprio_state(i))
                 for i in range(2, len(trace.time))]
        assert abs(np.median(steps) - target) <= 0.1 * target

    def test_vibration_grows_with_slip(self):
        ctrl = BaseCommand(0.5, 0.0, 0.0, 0.5)
        totals = []
        for dq in (0.0, 0.02, 0.05):
            trace = run_rollout(ConstantController(ctrl), flat_terrain(),
                                goal=(1e6, 0.0), timeout=3.0,
                                deltaq_target=dq, seed=0)
            totals.append(rms_vibration(trace)["total"])
        assert totals[0] < totals[1] < totals[2]


class TestRollout:
    def test_displacement_matches_command(self):
        # [DERIVED] the base integrates commanded velocity exactly.
        ctrl = ConstantController(BaseCommand(1.0, 0.0, 0.0, 0.5))
        trace = run_rollout(ctrl, flat_terrain(), goal=(1e6, 0.0),
                            timeout=10.0, deltaq_target=0.0, seed=0)
        disp = np.linalg.norm(trace.base_position[-1, :2]
                              - trace.base_position[0, :2])
        assert abs(disp - 10.0) <= 0.1

    def test_goal_at_start_is_immediate(self):
        ctrl = ConstantController(BaseCommand(1.0, 0.0, 0.0, 0.5))
        trace = run_rollout(ctrl, flat_terrain(), goal=(0.0, 0.0),
                            timeout=5.0, deltaq_target=0.0, seed=0)
        assert trace.goal_reached
        assert trace.elapsed == 0.0
        assert len(trace.time) == 1

    def test_five_meter_elapsed_time(self):
        # [DERIVED] at 1 m/s the goal ring (radius 0.3 m) around x=5 is
        # crossed after 4.7 m of travel.
        cfg = SimConfig()
        ctrl = ConstantController(BaseCommand(1.0, 0.0, 0.0, 0.5))
        trace = run_rollout(ctrl, flat_terrain(), goal=(5.0, 0.0),
                            timeout=20.0, deltaq_target=0.0, seed=0, cfg=cfg)
        assert trace.goal_reached
        expected = (5.0 - cfg.goal_radius) / 1.0
        assert abs(trace.elapsed - expected) <= 0.2

    def test_same_seed_bitwise_identical(self):
        spec = TerrainSpec("rough", 0.6, 5)
        kw = dict(goal=(3.0, 0.0), timeout=6.0, deltaq_target=0.04, seed=9)
        a = run_rollout(ConstantController(BaseCommand(0.8, 0, 0, 0.5)), spec, **kw)
        b = run_rollout(ConstantController(BaseCommand(0.8, 0, 0, 0.5)), spec, **kw)
        assert np.array_equal(a.base_orientation, b.base_orientation)
        assert np.array_equal(a.proprio, b.proprio)
        assert a.elapsed == b.elapsed

    def test_trace_shapes_consistent(self):
        ctrl = ConstantController(BaseCommand(0.5, 0.0, 0.0, 0.5))
        t = run_rollout(ctrl, flat_terrain(), goal=(1.0, 0.0), timeout=5.0,
                        deltaq_target=0.0, seed=0)
        n = len(t.time)
        assert t.base_position.shape == (n, 3)
        assert t.base_orientation.shape == (n, 3)
        assert t.orientation_rates.shape == (n, 3)
        assert t.proprio.shape == (n, 40)
        assert t.commands.shape == (n, 4)


class TestSweep:
    def test_row_count_and_minimum(self):
        speeds, grid = [0.4, 0.8], [0.0, 0.02, 0.05]
        rows = deltaq_vibration_sweep(speeds, grid, seeds=[0, 1], duration=2.0)
        assert len(rows) == len(speeds) * len(grid)
        for speed in speeds:
            sub = [r for r in rows if r["speed"] == speed]
            best = min(sub, key=lambda r: r["rms_total"])
            assert best["deltaq"] == 0.0

    def test_monotone_in_slip(self):
        # [DERIVED] more slip, more vibration: perfect rank correlation.
        rows = deltaq_vibration_sweep([0.6], [0.0, 0.0125, 0.025, 0.0375, 0.05],
                                      seeds=[0], duration=2.0)
        totals = [r["rms_total"] for r in rows]
        assert totals == sorted(totals)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            deltaq_vibration_sweep([], [0.0], [0])
