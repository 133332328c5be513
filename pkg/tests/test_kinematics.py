"""FK/Jacobian/IK tests.

Oracles:
  - planar 2R closed-form FK,
  - explicit 4x4 matrix-chain product for the 6-DOF fixture,
  - central finite differences for the Jacobian.
"""

import numpy as np
import pytest

from shadowkit.errors import JointOutOfRange
from shadowkit.geometry import Transform, compose, invert
from shadowkit.kinematics import (FkResult, IkParams, JointState, clamp, fk,
                                  ik_solve, jacobian, mid_range_state,
                                  pose_error, reexpress_ee)
from shadowkit.robot_model import arm_only, parse_urdf
from shadowkit.toy_transfer import SOURCE_ARM, build_embodiment

from test_robot_model import SIX_DOF_URDF


@pytest.fixture(scope="module")
def six():
    return arm_only(parse_urdf(SIX_DOF_URDF))


@pytest.fixture(scope="module")
def planar2r():
    return build_embodiment(SOURCE_ARM)


L1, L2 = SOURCE_ARM.link_lengths
TCP = SOURCE_ARM.tcp_offset


def planar_fk_oracle(q1, q2):
    """Closed-form planar 2R chain with tool extension."""
    x = L1 * np.cos(q1) + (L2 + TCP) * np.cos(q1 + q2)
    y = L1 * np.sin(q1) + (L2 + TCP) * np.sin(q1 + q2)
    return np.array([x, y, 0.0])


def matrix_chain_oracle(model, qvals):
    """Walk the 6-DOF serial chain with raw homogeneous matrices."""
    m = np.eye(4)
    for i, q in enumerate(qvals):
        j = model.joint(f"j{i}")
        m = m @ j.origin.as_matrix()
        rot = Transform.from_axis_angle(j.axis, q).as_matrix()
        m = m @ rot
    return m


class TestFk:
    def test_planar_closed_form(self, planar2r):
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = rng.uniform(-3.0, 3.0, size=2)
            got = fk(planar2r, JointState(q)).ee.translation
            assert np.allclose(got, planar_fk_oracle(*q), atol=1e-12)

    def test_six_dof_vs_matrix_chain(self, six):
        rng = np.random.default_rng(1)
        for _ in range(100):
            q = rng.uniform(-2.8, 2.8, size=6)
            got = fk(six, JointState(q)).flange.as_matrix()
            want = matrix_chain_oracle(six.arm, q)
            assert np.allclose(got, want, atol=1e-10)

    def test_zero_config_straight(self, planar2r):
        ee = fk(planar2r, JointState(np.zeros(2))).ee.translation
        assert np.allclose(ee, [L1 + L2 + TCP, 0, 0], atol=1e-15)

    def test_limits_enforced(self, planar2r):
        with pytest.raises(JointOutOfRange):
            fk(planar2r, JointState(np.array([5.0, 0.0])))
        # opt-out works
        fk(planar2r, JointState(np.array([5.0, 0.0])), check_limits=False)

    def test_wrong_dof_rejected(self, planar2r):
        with pytest.raises(JointOutOfRange):
            fk(planar2r, JointState(np.zeros(3)))

    def test_ee_includes_mount_and_tcp(self, six):
        q = JointState(np.zeros(6))
        res = fk(six, q)
        want = compose(res.flange, compose(six.mount, six.tcp))
        assert np.allclose(res.ee.as_matrix(), want.as_matrix(), atol=1e-12)

    def test_all_links_posed(self, six):
        res = fk(six, JointState(np.zeros(6)))
        assert set(res.link_poses) == {l.name for l in six.arm.links}


class TestJacobian:
    @pytest.mark.parametrize("fixture", ["six", "planar2r"])
    def test_matches_central_differences(self, fixture, request):
        e = request.getfixturevalue(fixture)
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(100):
            q = rng.uniform(-2.0, 2.0, size=e.dof)
            J = jacobian(e, JointState(q))
            for i in range(e.dof):
                dq = np.zeros(e.dof)
                dq[i] = h
                hi = fk(e, JointState(q + dq), check_limits=False)
                lo = fk(e, JointState(q - dq), check_limits=False)
                dp = (hi.ee.translation - lo.ee.translation) / (2 * h)
                drot = pose_error(hi.ee, lo.ee)[3:] / (2 * h)
                assert np.abs(J[:3, i] - dp).max() < 1e-5
                assert np.abs(J[3:, i] - drot).max() < 1e-5

    def test_planar_shape_and_axis(self, planar2r):
        J = jacobian(planar2r, JointState(np.zeros(2)))
        assert J.shape == (6, 2)
        # revolute about z: angular rows are exactly the z axis
        assert np.allclose(J[3:, 0], [0, 0, 1])
        assert np.allclose(J[:3, 0], [0, L1 + L2 + TCP, 0], atol=1e-12)


class TestIk:
    def test_convergence_rate(self, six):
        rng = np.random.default_rng(3)
        params = IkParams()
        ok = 0
        for _ in range(500):
            q_true = rng.uniform(-2.0, 2.0, size=6)
            target = fk(six, JointState(q_true)).ee
            seed = mid_range_state(six)
            res = ik_solve(six, target, seed, params)
            if res.converged and res.residual_pos < 1e-4 \
                    and res.residual_rot < 1e-3 and res.iters <= 200:
                ok += 1
        assert ok >= 495  # >= 99%

    def test_already_at_target_zero_iters(self, six):
        q = JointState(np.full(6, 0.3))
        target = fk(six, q).ee
        res = ik_solve(six, target, q)
        assert res.converged and res.iters == 0

    def test_respects_limits(self, planar2r):
        target = Transform(translation=np.array([10.0, 0, 0]))  # unreachable
        res = ik_solve(planar2r, target,
                       JointState(np.zeros(2)),
                       IkParams(max_iters=50, rot_weight=0.0))
        assert not res.converged
        lims = planar2r.joint_limits()
        assert np.all(res.q.values >= lims[:, 0] - 1e-12)
        assert np.all(res.q.values <= lims[:, 1] + 1e-12)

    def test_position_only_mode(self, planar2r):
        # A 2-link planar arm cannot meet an arbitrary orientation; the
        # position-only task must still converge to machine precision.
        q_true = JointState(np.array([1.2, -0.7]))
        pos = fk(planar2r, q_true).ee.translation
        target = Transform(translation=pos)  # identity orientation
        res = ik_solve(planar2r, target, JointState(np.array([1.0, -1.0])),
                       IkParams(damping=0.01, tol_pos=1e-9, tol_rot=1e-8,
                                max_iters=300, rot_weight=0.0))
        assert res.converged
        assert res.residual_pos < 1e-9

    def test_deterministic(self, six):
        target = fk(six, JointState(np.full(6, 0.5))).ee
        seed = mid_range_state(six)
        a = ik_solve(six, target, seed)
        b = ik_solve(six, target, seed)
        assert np.array_equal(a.q.values, b.q.values)
        assert a.iters == b.iters

    def test_warm_start_no_worse_on_trajectory(self, six):
        """Seeding frame t with frame t-1's solution should not increase
        the mean iteration count versus cold starts."""
        rng = np.random.default_rng(4)
        q = np.zeros(6)
        warm_iters, cold_iters = [], []
        seed = mid_range_state(six)
        warm = seed
        for _ in range(40):
            q = np.clip(q + rng.uniform(-0.05, 0.05, size=6), -2.8, 2.8)
            target = fk(six, JointState(q)).ee
            res_w = ik_solve(six, target, warm)
            warm = res_w.q
            warm_iters.append(res_w.iters)
            cold_iters.append(ik_solve(six, target, seed).iters)
        assert np.mean(warm_iters) <= np.mean(cold_iters)

    def test_zero_dof_arm(self):
        e = arm_only(parse_urdf('<robot name="r"><link name="base"/></robot>'))
        res = ik_solve(e, Transform(translation=np.array([1.0, 0, 0])),
                       JointState(np.zeros(0)), IkParams(max_iters=5))
        assert not res.converged


class TestPoseError:
    def test_zero_for_equal_poses(self):
        t = Transform.from_axis_angle([0, 1, 0], 0.4, translation=(1, 2, 3))
        assert np.allclose(pose_error(t, t), np.zeros(6), atol=1e-12)

    def test_pure_translation(self):
        a = Transform(translation=np.array([1.0, 0, 0]))
        b = Transform.identity()
        assert np.allclose(pose_error(a, b), [1, 0, 0, 0, 0, 0])

    def test_pure_rotation_magnitude(self):
        a = Transform.from_axis_angle([0, 0, 1], 0.3)
        err = pose_error(a, Transform.identity())
        assert np.allclose(err, [0, 0, 0, 0, 0, 0.3], atol=1e-12)


class TestClampAndState:
    def test_clamp(self, planar2r):
        q = clamp(planar2r, JointState(np.array([5.0, -5.0]), aperture=2.0))
        assert np.allclose(q.values, [3.0, -3.0])
        assert q.aperture == 1.0

    def test_mid_range(self, six):
        assert np.allclose(mid_range_state(six).values, np.zeros(6))


class TestReexpress:
    def test_identity_calibs(self):
        ee = Transform.from_axis_angle([1, 0, 0], 0.2, translation=(1, 2, 3))
        out = reexpress_ee(ee, Transform.identity(), Transform.identity())
        assert np.allclose(out.as_matrix(), ee.as_matrix(), atol=1e-12)

    def test_camera_point_invariant(self):
        """The physical EE point must land on the same camera-frame point
        whichever base frame expresses it."""
        rng = np.random.default_rng(5)
        for _ in range(20):
            qa = rng.normal(size=4)
            qb = rng.normal(size=4)
            calib_src = Transform(qa / np.linalg.norm(qa), rng.normal(size=3))
            calib_tgt = Transform(qb / np.linalg.norm(qb), rng.normal(size=3))
            ee = Transform(translation=rng.normal(size=3))
            out = reexpress_ee(ee, calib_src, calib_tgt)
            p_cam_src = calib_src.apply(ee.translation)
            p_cam_tgt = calib_tgt.apply(out.translation)
            assert np.allclose(p_cam_src, p_cam_tgt, atol=1e-10)

    def test_roundtrip(self):
        rng = np.random.default_rng(6)
        qa = rng.normal(size=4)
        calib_src = Transform(qa / np.linalg.norm(qa), rng.normal(size=3))
        calib_tgt = Transform(translation=rng.normal(size=3))
        ee = Transform(translation=rng.normal(size=3))
        back = reexpress_ee(reexpress_ee(ee, calib_src, calib_tgt),
                            calib_tgt, calib_src)
        assert np.allclose(back.as_matrix(), ee.as_matrix(), atol=1e-12)
