"""Control loop tests.

The segment-distance oracle below is pure sampling (a coarse point grid
refined once around the best cell) and shares no algebra with the
closest-point implementation it checks.
"""

import json
import math

import numpy as np
import pytest

from minilead.errors import ConfigError, ContractViolation
from minilead.teleop import (
    FLAG_ENV_COLLISION,
    FLAG_LEADER_STALE,
    FLAG_NEAR_SINGULARITY,
    FLAG_SELF_COLLISION,
    LinkCapsule,
    Phase,
    SafetyStatus,
    TeleopConfig,
    builtin_capsule_path,
    capsules_in_world,
    initial_state,
    intra_arm_distance,
    load_capsules,
    load_teleop_config,
    rate_limit,
    reset_fault,
    safety_check,
    segment_distance,
    self_collision_distance,
    smooth,
    step,
    sync_blend,
    unwrap_nearest,
)

DT = 0.01


def sampled_segment_distance(p0, p1, q0, q1, n=100):
    """Min distance over an n x n point grid, refined once near the best cell."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    q0, q1 = np.asarray(q0, float), np.asarray(q1, float)

    def grid_min(s_lo, s_hi, t_lo, t_hi):
        s = np.linspace(s_lo, s_hi, n)
        t = np.linspace(t_lo, t_hi, n)
        pts_a = p0 + s[:, None] * (p1 - p0)
        pts_b = q0 + t[:, None] * (q1 - q0)
        d2 = ((pts_a[:, None, :] - pts_b[None, :, :]) ** 2).sum(axis=2)
        i, j = np.unravel_index(np.argmin(d2), d2.shape)
        return math.sqrt(d2[i, j]), s[i], t[j]

    d, s_best, t_best = grid_min(0.0, 1.0, 0.0, 1.0)
    half = 1.5 / n
    d2, _, _ = grid_min(max(s_best - half, 0.0), min(s_best + half, 1.0),
                        max(t_best - half, 0.0), min(t_best + half, 1.0))
    return min(d, d2)


@pytest.fixture(scope="module")
def ur5_capsules():
    return load_capsules(builtin_capsule_path("ur5"))


@pytest.fixture(scope="module")
def planar_capsules():
    return (
        LinkCapsule(link_index=1, p0=(-1.0, 0.0, 0.0), p1=(0.0, 0.0, 0.0), radius=0.1),
        LinkCapsule(link_index=2, p0=(-1.0, 0.0, 0.0), p1=(0.0, 0.0, 0.0), radius=0.1),
    )


class TestSegmentDistance:
    def test_matches_sampling_oracle(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(1000):
            p0, p1, q0, q1 = rng.uniform(-1.0, 1.0, size=(4, 3))
            got = segment_distance(p0, p1, q0, q1)
            want = sampled_segment_distance(p0, p1, q0, q1)
            worst = max(worst, abs(got - want))
        assert worst < 1e-3

    def test_coincident_segments(self):
        assert segment_distance((0, 0, 0), (1, 0, 0), (0, 0, 0), (1, 0, 0)) == 0.0

    def test_crossing_segments(self):
        d = segment_distance((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0))
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_parallel_unit_apart(self):
        d = segment_distance((0, 0, 0), (1, 0, 0), (0, 0, 1), (1, 0, 1))
        assert d == pytest.approx(1.0, abs=1e-12)

    def test_both_degenerate_points(self):
        assert segment_distance((1, 2, 3), (1, 2, 3), (1, 2, 7), (1, 2, 7)) == 4.0

    def test_one_degenerate_point(self):
        # Point above the middle of a unit segment.
        d = segment_distance((0.5, 0, 2), (0.5, 0, 2), (0, 0, 0), (1, 0, 0))
        assert d == pytest.approx(2.0, abs=1e-12)

    def test_closest_at_endpoints(self):
        d = segment_distance((0, 0, 0), (1, 0, 0), (2, 1, 0), (3, 1, 0))
        assert d == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            p0, p1, q0, q1 = rng.uniform(-1.0, 1.0, size=(4, 3))
            assert segment_distance(p0, p1, q0, q1) == pytest.approx(
                segment_distance(q0, q1, p0, p1), abs=1e-12)


class TestSelfCollisionDistance:
    def test_coincident_capsules_overlap(self):
        a = [((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.05, 1)]
        assert self_collision_distance(a, a) == 0.0

    def test_parallel_capsules_gap(self):
        a = [((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.05, 1)]
        b = [((0.0, 0.0, 1.0), (1.0, 0.0, 1.0), 0.05, 1)]
        assert self_collision_distance(a, b) == pytest.approx(0.9, abs=1e-12)

    def test_min_over_pairs(self):
        a = [((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.1, 1),
             ((0.0, 0.0, 5.0), (1.0, 0.0, 5.0), 0.1, 2)]
        b = [((0.0, 0.0, 1.0), (1.0, 0.0, 1.0), 0.1, 1)]
        assert self_collision_distance(a, b) == pytest.approx(0.8, abs=1e-12)


class TestCapsulePlacement:
    def test_planar_endpoints_by_trig(self, planar2, planar_capsules):
        q = np.array([np.pi / 6.0, np.pi / 4.0])
        placed = capsules_in_world(planar2, q, planar_capsules)
        elbow = np.array([math.cos(q[0]), math.sin(q[0]), 0.0])
        tip = elbow + np.array([math.cos(q[0] + q[1]), math.sin(q[0] + q[1]), 0.0])
        np.testing.assert_allclose(placed[0][0], np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(placed[0][1], elbow, atol=1e-12)
        np.testing.assert_allclose(placed[1][0], elbow, atol=1e-12)
        np.testing.assert_allclose(placed[1][1], tip, atol=1e-12)

    def test_base_transform_applied(self, planar2, planar_capsules):
        base = np.eye(4)
        base[:3, 3] = [2.0, 3.0, 4.0]
        q = np.array([0.3, -0.5])
        plain = capsules_in_world(planar2, q, planar_capsules)
        moved = capsules_in_world(planar2, q, planar_capsules, base=base)
        for (a0, a1, _, _), (b0, b1, _, _) in zip(plain, moved):
            np.testing.assert_allclose(b0 - a0, [2.0, 3.0, 4.0], atol=1e-12)
            np.testing.assert_allclose(b1 - a1, [2.0, 3.0, 4.0], atol=1e-12)

    def test_builtin_endpoints_sit_on_joint_origins(self, ur5, ur5_capsules):
        # Every shipped capsule spans actual joint origins, whatever the pose.
        from minilead.kinematics import forward_kinematics
        rng = np.random.default_rng(11)
        for _ in range(10):
            q = rng.uniform(-np.pi, np.pi, size=6)
            _, frames = forward_kinematics(ur5, q)
            origins = [np.zeros(3)] + [f[:3, 3] for f in frames]
            for p0, p1, _, _ in capsules_in_world(ur5, q, ur5_capsules):
                for endpoint in (p0, p1):
                    gaps = [np.linalg.norm(endpoint - o) for o in origins]
                    assert min(gaps) < 1e-9

    def test_capsule_beyond_dof_rejected(self, planar2):
        caps = (LinkCapsule(link_index=5, p0=(0, 0, 0), p1=(1, 0, 0), radius=0.1),)
        with pytest.raises(ConfigError):
            capsules_in_world(planar2, np.zeros(2), caps)

    def test_loader_round_trip(self, tmp_path):
        path = tmp_path / "caps.json"
        path.write_text(json.dumps([
            {"link_index": 1, "p0": [0, 0, 0], "p1": [1, 0, 0], "radius": 0.2},
        ]))
        caps = load_capsules(path)
        assert caps[0].radius == 0.2
        assert caps[0].p1 == (1.0, 0.0, 0.0)

    @pytest.mark.parametrize("payload", [
        [],
        {"link_index": 1},
        [{"link_index": 1, "p0": [0, 0, 0], "p1": [1, 0, 0]}],
        [{"link_index": 1, "p0": [0, 0, 0], "p1": [1, 0, 0], "radius": 0.2, "x": 1}],
        [{"link_index": 0, "p0": [0, 0, 0], "p1": [1, 0, 0], "radius": 0.2}],
        [{"link_index": 1, "p0": [0, 0, 0], "p1": [1, 0, 0], "radius": 0.0}],
    ])
    def test_loader_rejects_bad_files(self, tmp_path, payload):
        path = tmp_path / "caps.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigError):
            load_capsules(path)

    def test_unknown_builtin_name(self):
        with pytest.raises(ConfigError, match="ur5"):
            builtin_capsule_path("nosuch")


class TestIntraArmDistance:
    def test_adjacent_links_skipped(self, planar2, planar_capsules):
        # Only pair is adjacent, so nothing is checked.
        placed = capsules_in_world(planar2, np.zeros(2), planar_capsules)
        assert intra_arm_distance(placed) == math.inf

    def test_working_pose_clear(self, ur5, ur5_capsules):
        q = np.array([0.0, -1.2, 1.5, -0.3, 1.57, 0.0])
        placed = capsules_in_world(ur5, q, ur5_capsules)
        d = intra_arm_distance(placed)
        assert 0.05 < d < 0.5

    def test_folded_wrist_contact(self, ur5, ur5_capsules):
        q = np.array([0.0, -1.5708, 2.9, 0.0, 3.1, 0.0])
        placed = capsules_in_world(ur5, q, ur5_capsules)
        assert intra_arm_distance(placed) == 0.0


class TestSmooth:
    def test_alpha_one_passes_raw(self):
        np.testing.assert_array_equal(smooth([0.0, 2.0], [1.0, 3.0], 1.0), [1.0, 3.0])

    def test_fixed_point(self):
        q = np.array([0.4, -0.2, 1.1])
        np.testing.assert_allclose(smooth(q, q, 0.8), q, atol=1e-15)

    def test_arithmetic(self):
        assert smooth([0.0], [1.0], 0.8)[0] == pytest.approx(0.8, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            smooth([0.0, 1.0], [1.0], 0.8)


class TestRateLimit:
    def test_target_within_bound_reached_exactly(self):
        out = rate_limit([0.0], [0.005], [1.0], DT)
        assert out[0] == 0.005

    def test_step_clamped(self):
        out = rate_limit([0.0], [0.5], [1.0], DT)
        assert out[0] == pytest.approx(0.01, abs=1e-15)

    def test_negative_direction(self):
        out = rate_limit([0.0], [-0.5], [1.0], DT)
        assert out[0] == pytest.approx(-0.01, abs=1e-15)

    def test_per_joint_bounds(self):
        out = rate_limit([0.0, 0.0], [1.0, 1.0], [1.0, 200.0], DT)
        np.testing.assert_allclose(out, [0.01, 1.0], atol=1e-15)

    def test_convergence_tick_count(self):
        # 0.5 rad at 1 rad/s and 10 ms ticks needs exactly ceil(50) ticks.
        cmd = np.array([0.0])
        ticks = 0
        while abs(cmd[0] - 0.5) > 1e-12:
            cmd = rate_limit(cmd, [0.5], [1.0], DT)
            ticks += 1
            assert ticks < 100
        assert ticks == math.ceil(0.5 / (1.0 * DT))

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ContractViolation):
            rate_limit([0.0], [1.0], [1.0], 0.0)


class TestSyncBlend:
    def test_elapsed_zero_holds_follower(self):
        cmd, synced = sync_blend([0.0], [1.0], 0.0, TeleopConfig())
        assert cmd[0] == 0.0
        assert not synced

    def test_midpoint(self):
        cfg = TeleopConfig(sync_ramp_s=2.0)
        cmd, _ = sync_blend([0.0], [1.0], 1.0, cfg)
        assert cmd[0] == pytest.approx(0.5, abs=1e-15)

    def test_ramp_complete_tracks_leader(self):
        cmd, _ = sync_blend([0.0], [1.0], 5.0, TeleopConfig(sync_ramp_s=2.0))
        assert cmd[0] == 1.0

    def test_synced_when_close(self):
        cfg = TeleopConfig(sync_eps_rad=0.02)
        _, synced = sync_blend([0.0, 0.0], [0.019, -0.019], 0.0, cfg)
        assert synced

    def test_not_synced_at_exact_eps(self):
        cfg = TeleopConfig(sync_eps_rad=0.02)
        _, synced = sync_blend([0.0], [0.02], 0.0, cfg)
        assert not synced

    def test_equal_pose_synced_immediately(self):
        q = [0.3, -0.4]
        cmd, synced = sync_blend(q, q, 0.0, TeleopConfig())
        assert synced
        np.testing.assert_array_equal(cmd, q)


class TestUnwrapNearest:
    def test_full_turn_removed(self):
        out = unwrap_nearest([0.05], [6.3])
        assert out[0] == pytest.approx(6.3 - 2.0 * math.pi, abs=1e-12)

    def test_negative_turn_removed(self):
        out = unwrap_nearest([0.0], [-7.0])
        assert out[0] == pytest.approx(-7.0 + 2.0 * math.pi, abs=1e-12)

    def test_small_change_untouched(self):
        np.testing.assert_array_equal(unwrap_nearest([1.0], [1.2]), [1.2])

    def test_always_within_half_turn(self):
        rng = np.random.default_rng(5)
        prev = rng.uniform(-30.0, 30.0, size=200)
        raw = rng.uniform(-30.0, 30.0, size=200)
        out = unwrap_nearest(prev, raw)
        assert np.all(np.abs(out - prev) <= math.pi + 1e-9)
        # Same angle, different representative.
        np.testing.assert_allclose(
            np.mod(out - raw, 2.0 * math.pi), 0.0, atol=1e-6)


class TestSafetyCheck:
    def test_clear_pose_no_flags(self, ur5, ur5_capsules):
        q = np.array([0.0, -1.2, 1.5, -0.3, 1.57, 0.0])
        status = safety_check(ur5, None, q, None, TeleopConfig(), 0.0,
                              capsules=ur5_capsules)
        assert not any(status.near_joint_limit)
        assert not status.near_singularity
        assert not status.self_collision_risk
        assert not status.env_collision_risk
        assert not status.leader_stale
        assert not status.faulting
        assert status.flags_u32 == 0
        assert status.min_capsule_distance > 0.05
        assert status.manipulability > 1e-3

    def test_near_joint_limit_flag(self, planar2):
        q = np.array([0.0, planar2.q_max[1] - 0.01])
        status = safety_check(planar2, None, q, None, TeleopConfig(), 0.0)
        assert status.near_joint_limit == (False, True)

    def test_limit_margin_is_strict(self, planar2):
        # 0.25 subtracts exactly at this magnitude, so distance == margin.
        q = np.array([0.0, planar2.q_max[1] - 0.25])
        status = safety_check(planar2, None, q, None,
                              TeleopConfig(limit_margin_rad=0.25), 0.0)
        assert status.near_joint_limit == (False, False)

    def test_lower_limit_flagged_too(self, planar2):
        q = np.array([planar2.q_min[0] + 0.01, 0.0])
        status = safety_check(planar2, None, q, None, TeleopConfig(), 0.0)
        assert status.near_joint_limit == (True, False)

    def test_leader_stale_strictly_greater(self, planar2):
        q = np.zeros(2)
        cfg = TeleopConfig(leader_stale_ms=200.0)
        assert not safety_check(planar2, None, q, None, cfg, 200.0).leader_stale
        assert safety_check(planar2, None, q, None, cfg, 200.1).leader_stale

    def test_singular_pose_flagged(self, ur5):
        q = np.array([0.0, -1.5708, 0.0, 0.0, 0.0, 0.0])
        status = safety_check(ur5, None, q, None, TeleopConfig(), 0.0)
        assert status.near_singularity
        assert status.manipulability < 1e-3

    def test_low_dof_never_singular(self, planar2):
        status = safety_check(planar2, None, np.zeros(2), None, TeleopConfig(), 0.0)
        assert status.manipulability == math.inf
        assert not status.near_singularity

    def test_table_below_reach_is_clear(self, ur5, ur5_capsules):
        q = np.array([0.0, -1.2, 1.5, -0.3, 1.57, 0.0])
        cfg = TeleopConfig(table_z_m=-0.2)
        status = safety_check(ur5, None, q, None, cfg, 0.0, capsules=ur5_capsules)
        assert not status.env_collision_risk

    def test_dipping_below_table_flags(self, ur5, ur5_capsules):
        cfg = TeleopConfig(table_z_m=0.0)
        status = safety_check(ur5, None, np.zeros(6), None, cfg, 0.0,
                              capsules=ur5_capsules)
        assert status.env_collision_risk
        assert not status.faulting  # warn only, never a fault

    def test_partner_needs_capsules(self, ur5, ur5_capsules):
        q = np.zeros(6)
        with pytest.raises(ConfigError):
            safety_check(ur5, ur5, q, q, TeleopConfig(), 0.0)
        with pytest.raises(ConfigError):
            safety_check(ur5, ur5, q, q, TeleopConfig(), 0.0, capsules=ur5_capsules)

    def test_flags_u32_layout(self):
        status = SafetyStatus(
            near_joint_limit=(False, True, False, False, False, True),
            near_singularity=True,
            self_collision_risk=False,
            env_collision_risk=True,
            leader_stale=True,
            min_capsule_distance=1.0,
            manipulability=0.5,
        )
        want = (FLAG_LEADER_STALE | FLAG_NEAR_SINGULARITY | FLAG_ENV_COLLISION
                | (1 << 9) | (1 << 13))
        assert status.flags_u32 == want
        assert not status.flags_u32 & FLAG_SELF_COLLISION


class TestMirroredArms:
    """Two identical arms facing each other across a shared table."""

    BASE_B = np.array([
        [-1.0, 0.0, 0.0, 0.8],
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])

    def test_far_pose_clear(self, ur5, ur5_capsules):
        q = np.array([2.0, -0.5, 0.5, 0.0, 0.0, 0.0])
        status = safety_check(ur5, ur5, q, q, TeleopConfig(), 0.0,
                              capsules=ur5_capsules, partner_capsules=ur5_capsules,
                              partner_base=self.BASE_B)
        assert not status.self_collision_risk
        # The reported minimum includes the intra-arm wrist floor; the
        # cross-arm gap itself is wide here.
        assert status.min_capsule_distance > 0.05
        placed_a = capsules_in_world(ur5, q, ur5_capsules)
        placed_b = capsules_in_world(ur5, q, ur5_capsules, base=self.BASE_B)
        assert self_collision_distance(placed_a, placed_b) > 0.3

    def test_risk_trips_before_contact(self, ur5, ur5_capsules):
        q = np.array([2.761, -0.5, 0.5, 0.0, 0.0, 0.0])
        status = safety_check(ur5, ur5, q, q, TeleopConfig(), 0.0,
                              capsules=ur5_capsules, partner_capsules=ur5_capsules,
                              partner_base=self.BASE_B)
        assert status.self_collision_risk
        assert 0.0 < status.min_capsule_distance < 0.05

    def test_overlap_reaches_zero(self, ur5, ur5_capsules):
        q = np.array([3.0, -0.5, 0.5, 0.0, 0.0, 0.0])
        status = safety_check(ur5, ur5, q, q, TeleopConfig(), 0.0,
                              capsules=ur5_capsules, partner_capsules=ur5_capsules,
                              partner_base=self.BASE_B)
        assert status.self_collision_risk
        assert status.min_capsule_distance == 0.0

    def test_distance_matches_sampling_oracle(self, ur5, ur5_capsules):
        q = np.array([2.761, -0.5, 0.5, 0.0, 0.0, 0.0])
        placed_a = capsules_in_world(ur5, q, ur5_capsules)
        placed_b = capsules_in_world(ur5, q, ur5_capsules, base=self.BASE_B)
        want = math.inf
        for a in placed_a:
            for b in placed_b:
                gap = sampled_segment_distance(a[0], a[1], b[0], b[1]) - a[2] - b[2]
                want = min(want, max(gap, 0.0))
        status = safety_check(ur5, ur5, q, q, TeleopConfig(), 0.0,
                              capsules=ur5_capsules, partner_capsules=ur5_capsules,
                              partner_base=self.BASE_B)
        # Intra-arm distance is larger here, so the cross-arm gap governs.
        assert status.min_capsule_distance == pytest.approx(want, abs=1e-3)


def run_loop(model, config, leader_qs, *, ages=None, q0=None, dt=DT, **step_kwargs):
    """Drive step() with a follower that tracks each command perfectly."""
    state = initial_state()
    follower_q = np.zeros(model.dof) if q0 is None else np.asarray(q0, float)
    commands, statuses, phases = [], [], []
    for k, leader_q in enumerate(leader_qs):
        age = 0.0 if ages is None else ages[k]
        state, cmd, status = step(state, leader_q, follower_q, dt, config, model,
                                  leader_age_ms=age, **step_kwargs)
        commands.append(np.array(cmd))
        statuses.append(status)
        phases.append(state.phase)
        follower_q = np.array(cmd)
    return state, commands, statuses, phases


def assert_motion_invariants(model, config, commands, q0, dt=DT):
    prev = np.asarray(q0, float)
    bound = model.v_max * config.v_max_scale * dt
    for cmd in commands:
        assert np.all(cmd >= model.q_min - 1e-12)
        assert np.all(cmd <= model.q_max + 1e-12)
        assert np.all(np.abs(cmd - prev) <= bound + 1e-12)
        prev = cmd


class TestStep:
    def test_equal_pose_active_first_tick(self, planar2):
        state = initial_state()
        q = np.array([0.3, -0.4])
        state, cmd, status = step(state, q, q, DT, TeleopConfig(), planar2)
        assert state.phase is Phase.ACTIVE
        np.testing.assert_allclose(cmd, q, atol=1e-9)
        assert not status.faulting

    def test_first_tick_holds_follower_when_far(self, planar2):
        state = initial_state()
        leader = np.array([1.0, 1.0])
        follower = np.array([0.0, 0.0])
        state, cmd, _ = step(state, leader, follower, DT, TeleopConfig(), planar2)
        assert state.phase is Phase.SYNCING
        np.testing.assert_array_equal(cmd, follower)

    def test_sync_reaches_active_without_jumps(self, planar2):
        cfg = TeleopConfig()
        leader = np.array([0.8, -0.6])
        n = 600
        _, commands, _, phases = run_loop(planar2, cfg, [leader] * n)
        assert phases[-1] is Phase.ACTIVE
        assert_motion_invariants(planar2, cfg, commands, np.zeros(2))
        np.testing.assert_allclose(commands[-1], leader, atol=1e-6)
        # Phase never regresses from Active.
        first_active = phases.index(Phase.ACTIVE)
        assert all(p is Phase.ACTIVE for p in phases[first_active:])

    def test_tracking_random_walk_keeps_invariants(self, planar2):
        cfg = TeleopConfig()
        rng = np.random.default_rng(9)
        leader = np.zeros(2)
        script = []
        for _ in range(400):
            leader = np.clip(leader + rng.uniform(-0.05, 0.05, size=2),
                             planar2.q_min + 0.1, planar2.q_max - 0.1)
            script.append(leader.copy())
        _, commands, _, _ = run_loop(planar2, cfg, script)
        assert_motion_invariants(planar2, cfg, commands, np.zeros(2))

    def test_full_turn_jump_absorbed(self, planar2):
        # Encoder rollover: identical angle, different representative.
        cfg = TeleopConfig()
        script = [np.array([0.5, 0.0])] * 50
        script += [np.array([0.5 + 2.0 * math.pi, 0.0])] * 50
        _, commands, _, _ = run_loop(planar2, cfg, script)
        assert_motion_invariants(planar2, cfg, commands, np.zeros(2))
        assert abs(commands[-1][0] - 0.5) < 1e-3

    def test_out_of_limit_leader_clamped(self, planar2):
        cfg = TeleopConfig()
        script = [np.array([3.5, 0.0])] * 800  # beyond q_max[0] = pi
        _, commands, _, _ = run_loop(planar2, cfg, script)
        assert_motion_invariants(planar2, cfg, commands, np.zeros(2))
        assert commands[-1][0] <= planar2.q_max[0]
        assert commands[-1][0] == pytest.approx(planar2.q_max[0], abs=1e-6)

    def test_v_max_scale_slows_motion(self, planar2):
        script = [np.array([1.0, 0.0])] * 20
        _, full, _, _ = run_loop(planar2, TeleopConfig(), script)
        _, half, _, _ = run_loop(planar2, TeleopConfig(v_max_scale=0.5), script)
        assert half[-1][0] < full[-1][0]
        assert_motion_invariants(planar2, TeleopConfig(v_max_scale=0.5), half,
                                 np.zeros(2))

    def test_nonpositive_dt_rejected(self, planar2):
        with pytest.raises(ContractViolation):
            step(initial_state(), np.zeros(2), np.zeros(2), 0.0,
                 TeleopConfig(), planar2)


class TestFaults:
    def test_stale_leader_faults_and_holds(self, planar2):
        cfg = TeleopConfig()
        q = np.array([0.2, -0.1])
        state = initial_state()
        follower = q.copy()
        for _ in range(10):
            state, cmd, _ = step(state, q, follower, DT, cfg, planar2)
            follower = np.array(cmd)
        assert state.phase is Phase.ACTIVE

        state, held, status = step(state, q, follower, DT, cfg, planar2,
                                   leader_age_ms=250.0)
        assert state.phase is Phase.FAULTED
        assert status.leader_stale
        np.testing.assert_array_equal(held, follower)

        # Leader moves while faulted: command must not follow.
        moving = q + 0.5
        for _ in range(20):
            state, cmd, status = step(state, moving, follower, DT, cfg, planar2,
                                      leader_age_ms=250.0)
            np.testing.assert_array_equal(cmd, held)
        assert state.phase is Phase.FAULTED

    def test_fault_latches_after_leader_returns(self, planar2):
        cfg = TeleopConfig()
        q = np.zeros(2)
        state = initial_state()
        state, _, _ = step(state, q, q, DT, cfg, planar2)
        state, held, _ = step(state, q, q, DT, cfg, planar2, leader_age_ms=300.0)
        assert state.phase is Phase.FAULTED

        state, cmd, status = step(state, q, q, DT, cfg, planar2, leader_age_ms=0.0)
        assert state.phase is Phase.FAULTED  # stays until operator reset
        assert not status.leader_stale
        np.testing.assert_array_equal(cmd, held)

    def test_reset_returns_to_syncing_and_resumes(self, planar2):
        cfg = TeleopConfig()
        leader = np.array([0.5, 0.5])
        state = initial_state()
        follower = np.zeros(2)
        for _ in range(30):
            state, cmd, _ = step(state, leader, follower, DT, cfg, planar2)
            follower = np.array(cmd)
        state, _, _ = step(state, leader, follower, DT, cfg, planar2,
                           leader_age_ms=999.0)
        assert state.phase is Phase.FAULTED

        state = reset_fault(state)
        assert state.phase is Phase.SYNCING
        assert state.phase_entered_s == state.t_s

        commands = []
        for _ in range(700):
            state, cmd, _ = step(state, leader, follower, DT, cfg, planar2)
            commands.append(np.array(cmd))
            follower = np.array(cmd)
        assert state.phase is Phase.ACTIVE
        np.testing.assert_allclose(commands[-1], leader, atol=1e-6)

    def test_reset_is_noop_outside_faulted(self, planar2):
        state = initial_state()
        assert reset_fault(state) is state
        state, _, _ = step(state, np.zeros(2), np.zeros(2), DT, TeleopConfig(),
                           planar2)
        assert reset_fault(state) is state

    def test_time_accumulates_while_faulted(self, planar2):
        state = initial_state()
        q = np.zeros(2)
        state, _, _ = step(state, q, q, DT, TeleopConfig(), planar2,
                           leader_age_ms=500.0)
        assert state.phase is Phase.FAULTED
        t_before = state.t_s
        state, _, _ = step(state, q, q, DT, TeleopConfig(), planar2,
                           leader_age_ms=500.0)
        assert state.t_s == pytest.approx(t_before + DT, abs=1e-15)

    def test_self_collision_faults(self, ur5, ur5_capsules):
        fold = np.array([0.0, -1.5708, 2.9, 0.0, 3.1, 0.0])
        state = initial_state()
        state, cmd, status = step(state, fold, fold, DT, TeleopConfig(), ur5,
                                  capsules=ur5_capsules)
        assert status.self_collision_risk
        assert state.phase is Phase.FAULTED
        np.testing.assert_array_equal(cmd, fold)  # held at the follower pose

    def test_singularity_warns_by_default_faults_when_asked(self, ur5):
        straight = np.array([0.0, -1.5708, 0.0, 0.0, 0.0, 0.0])
        state, _, status = step(initial_state(), straight, straight, DT,
                                TeleopConfig(), ur5)
        assert status.near_singularity
        assert state.phase is Phase.ACTIVE

        state, _, _ = step(initial_state(), straight, straight, DT,
                           TeleopConfig(singularity_hard_stop=True), ur5)
        assert state.phase is Phase.FAULTED


class TestDeterminism:
    def test_sinusoid_replay_bitwise_identical(self, planar2):
        cfg = TeleopConfig()
        t = np.arange(1000) * DT
        script = [np.array([0.6 * math.sin(2.0 * math.pi * 0.5 * ti),
                            0.4 * math.sin(2.0 * math.pi * 0.3 * ti + 1.0)])
                  for ti in t]
        ages = [0.0 if k % 97 else 50.0 for k in range(len(script))]

        def run():
            state = initial_state()
            follower = np.zeros(2)
            out = []
            for leader_q, age in zip(script, ages):
                state, cmd, status = step(state, leader_q, follower, DT, cfg,
                                          planar2, leader_age_ms=age)
                out.append((np.array(cmd), status, state))
                follower = np.array(cmd)
            return out

        first, second = run(), run()
        for (cmd_a, status_a, state_a), (cmd_b, status_b, state_b) in zip(first,
                                                                          second):
            assert np.array_equal(cmd_a, cmd_b)  # bitwise, no tolerance
            assert status_a == status_b
            assert state_a == state_b


class TestTeleopConfig:
    def test_defaults(self):
        cfg = TeleopConfig()
        assert cfg.rate_hz == 100.0
        assert cfg.ema_alpha == 0.8
        assert cfg.sync_ramp_s == 2.0
        assert cfg.sync_eps_rad == 0.02
        assert cfg.v_max_scale == 1.0
        assert cfg.manip_threshold == 1e-3
        assert cfg.limit_margin_rad == 0.05
        assert cfg.leader_stale_ms == 200.0
        assert cfg.capsule_file is None
        assert cfg.table_z_m is None
        assert not cfg.singularity_hard_stop

    @pytest.mark.parametrize("kwargs", [
        {"rate_hz": 0.0},
        {"ema_alpha": 0.0},
        {"ema_alpha": 1.5},
        {"v_max_scale": 0.0},
        {"sync_ramp_s": -1.0},
        {"leader_stale_ms": 0.0},
        {"collision_clearance_m": -0.1},
    ])
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            TeleopConfig(**kwargs)

    def test_loader_accepts_subset(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"ema_alpha": 0.5, "leader_stale_ms": 100}))
        cfg = load_teleop_config(path)
        assert cfg.ema_alpha == 0.5
        assert cfg.leader_stale_ms == 100
        assert cfg.rate_hz == 100.0

    def test_loader_rejects_unknown_field(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"ema_alpa": 0.5}))
        with pytest.raises(ConfigError, match="ema_alpa"):
            load_teleop_config(path)

    def test_loader_rejects_non_object(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_teleop_config(path)

    def test_loader_rejects_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_teleop_config(path)
