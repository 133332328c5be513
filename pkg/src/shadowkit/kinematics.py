"""Forward kinematics, geometric Jacobians, and damped-least-squares IK.

The IK solver is a kinematic stand-in for an operational-space
controller: it drives the embodiment's end-effector control point to a
Cartesian target pose. Damped least squares keeps it deterministic and
dependency-free. ``rot_weight`` scales the orientation task; 0 gives a
position-only solve (used by the planar toy world, whose arms have no
orientation freedom to spare).

Internally FK runs on flat chains of 4x4 matrices, precomputed once per
embodiment; the Transform-based interface is preserved at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import JointOutOfRange
from .geometry import (Transform, compose, invert, quat_from_matrix,
                       quat_to_matrix)
from .robot_model import Embodiment

_LIMIT_SLACK = 1e-9


@dataclass(frozen=True)
class JointState:
    """Actuated joint values plus a normalized gripper aperture in [0,1]."""

    values: np.ndarray
    aperture: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "aperture", float(self.aperture))


@dataclass(frozen=True)
class IkParams:
    damping: float = 0.05
    tol_pos: float = 1e-4
    tol_rot: float = 1e-3
    max_iters: int = 200
    step_scale: float = 0.5
    rot_weight: float = 1.0   # 0 -> position-only task

    def __post_init__(self):
        if self.damping <= 0 or self.tol_pos <= 0 or self.tol_rot <= 0:
            raise ValueError("damping and tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rot_weight < 0:
            raise ValueError("rot_weight must be >= 0")


@dataclass(frozen=True)
class FkResult:
    link_poses: dict            # link name -> Transform in base frame
    ee: Transform
    flange: Transform


@dataclass(frozen=True)
class IkResult:
    q: JointState
    converged: bool
    iters: int
    residual_pos: float
    residual_rot: float


# ---------------------------------------------------------------------------
# Flattened chain representation

class _Chain:
    """Topologically ordered joints of one model as matrix chains."""

    __slots__ = ("link_names", "parent_idx", "origins", "axes", "kinds",
                 "qname_for_joint", "joint_names", "root_name")

    def __init__(self, model):
        order = [model.root_link]
        joints = []
        i = 0
        while i < len(order):
            for j in model.children_of(order[i]):
                joints.append((j, order.index(j.parent_link)))
                order.append(j.child_link)
            i += 1
        self.root_name = model.root_link
        self.link_names = order[1:]
        self.parent_idx = np.array([p for _, p in joints], dtype=np.int64)
        self.origins = np.stack([j.origin.as_matrix() for j, _ in joints]) \
            if joints else np.zeros((0, 4, 4))
        self.axes = np.stack([j.axis for j, _ in joints]) \
            if joints else np.zeros((0, 3))
        self.kinds = [j.kind for j, _ in joints]
        self.joint_names = [j.name for j, _ in joints]


def _chain_of(model) -> _Chain:
    chain = getattr(model, "_chain_cache", None)
    if chain is None:
        chain = _Chain(model)
        object.__setattr__(model, "_chain_cache", chain)
    return chain


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def _chain_matrices(chain: _Chain, values_by_name: dict) -> np.ndarray:
    """(L+1, 4, 4) pose matrices: root first, then chain.link_names order."""
    n = len(chain.kinds)
    mats = np.empty((n + 1, 4, 4))
    mats[0] = np.eye(4)
    for i in range(n):
        m = mats[chain.parent_idx[i]] @ chain.origins[i]
        kind = chain.kinds[i]
        if kind != "fixed":
            v = values_by_name[chain.joint_names[i]]
            if kind == "revolute":
                m = m.copy()
                m[:3, :3] = m[:3, :3] @ _axis_rotation(chain.axes[i], v)
            else:  # prismatic
                m = m.copy()
                m[:3, 3] = m[:3, 3] + m[:3, :3] @ (chain.axes[i] * v)
        mats[i + 1] = m
    return mats


def _check_limits(e: Embodiment, q: JointState):
    if len(q.values) != e.dof:
        raise JointOutOfRange(
            f"expected {e.dof} joint values, got {len(q.values)}")
    lims = _limits_of(e)
    if len(lims) and ((q.values < lims[:, 0] - _LIMIT_SLACK).any()
                      or (q.values > lims[:, 1] + _LIMIT_SLACK).any()):
        bad = np.where((q.values < lims[:, 0] - _LIMIT_SLACK)
                       | (q.values > lims[:, 1] + _LIMIT_SLACK))[0]
        raise JointOutOfRange(
            f"joint(s) {[e.actuated_joint_names[i] for i in bad]} out of range")


def _limits_of(e: Embodiment) -> np.ndarray:
    lims = getattr(e, "_limits_cache", None)
    if lims is None:
        lims = e.joint_limits()
        lims.flags.writeable = False
        object.__setattr__(e, "_limits_cache", lims)
    return lims


def clamp(e: Embodiment, q: JointState) -> JointState:
    lims = _limits_of(e)
    v = np.clip(q.values, lims[:, 0], lims[:, 1]) if len(lims) else q.values
    return JointState(v, min(max(q.aperture, 0.0), 1.0))


def _ee_tool_matrix(e: Embodiment) -> np.ndarray:
    m = getattr(e, "_tool_cache", None)
    if m is None:
        m = compose(e.mount, e.tcp).as_matrix()
        object.__setattr__(e, "_tool_cache", m)
    return m


def _arm_matrices(e: Embodiment, q: JointState):
    chain = _chain_of(e.arm)
    values = dict(zip(e.actuated_joint_names, q.values))
    mats = _chain_matrices(chain, values)
    flange_idx = 1 + chain.link_names.index(e.flange_link) \
        if e.flange_link != chain.root_name else 0
    return chain, mats, mats[flange_idx]


def fk(e: Embodiment, q: JointState, check_limits: bool = True) -> FkResult:
    """Pose of every link and the end-effector control point, base frame."""
    if check_limits:
        _check_limits(e, q)
    chain, mats, flange_m = _arm_matrices(e, q)
    poses = {chain.root_name: _to_transform(mats[0])}
    for name, m in zip(chain.link_names, mats[1:]):
        poses[name] = _to_transform(m)
    flange = poses[e.flange_link]
    if not e.gripper.is_empty:
        ap = min(max(q.aperture, 0.0), 1.0)
        gchain = _chain_of(e.gripper)
        gvals = {}
        for j in e.gripper.actuated_joints():
            lo, hi = j.limits
            gvals[j.name] = lo + ap * (hi - lo)
        base_m = flange_m @ e.mount.as_matrix()
        gmats = _chain_matrices(gchain, gvals)
        poses[gchain.root_name] = _to_transform(base_m @ gmats[0])
        for name, m in zip(gchain.link_names, gmats[1:]):
            poses[name] = _to_transform(base_m @ m)
    ee_m = flange_m @ _ee_tool_matrix(e)
    return FkResult(poses, _to_transform(ee_m), flange)


def _to_transform(m: np.ndarray) -> Transform:
    return Transform(quat_from_matrix(m[:3, :3]), m[:3, 3])


def _ee_and_jacobian(e: Embodiment, qvals: np.ndarray):
    """(R_ee, p_ee, J) without building Transform objects."""
    chain = _chain_of(e.arm)
    values = dict(zip(e.actuated_joint_names, qvals))
    mats = _chain_matrices(chain, values)
    flange_idx = 1 + chain.link_names.index(e.flange_link) \
        if e.flange_link != chain.root_name else 0
    ee_m = mats[flange_idx] @ _ee_tool_matrix(e)
    p_ee = ee_m[:3, 3]

    # Joints on the root->flange chain move the EE; others contribute 0.
    on_chain = set()
    idx = flange_idx
    while idx > 0:
        on_chain.add(idx - 1)
        idx = chain.parent_idx[idx - 1]
    joint_pos = {name: i for i, name in enumerate(chain.joint_names)}

    J = np.zeros((6, len(qvals)))
    for col, name in enumerate(e.actuated_joint_names):
        ci = joint_pos[name]
        if ci not in on_chain:
            continue
        frame = mats[chain.parent_idx[ci]] @ chain.origins[ci]
        z = frame[:3, :3] @ chain.axes[ci]
        if chain.kinds[ci] == "revolute":
            J[:3, col] = np.cross(z, p_ee - frame[:3, 3])
            J[3:, col] = z
        else:
            J[:3, col] = z
    return ee_m[:3, :3], p_ee, J


def jacobian(e: Embodiment, q: JointState, check_limits: bool = True) -> np.ndarray:
    """Geometric Jacobian (6 x n) about the EE control point.

    Rows 0-2: linear velocity (m per rad or m/m); rows 3-5: angular.
    """
    if check_limits:
        _check_limits(e, q)
    return _ee_and_jacobian(e, q.values)[2]


def _rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    q = quat_from_matrix(R)
    if q[0] < 0:
        q = -q
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(s, q[0])
    return q[1:] * (angle / s)


def pose_error(target: Transform, current: Transform) -> np.ndarray:
    """6-vector twist error: position difference and axis-angle of the
    relative rotation target * current^-1."""
    dp = target.translation - current.translation
    rot = _rotation_log(quat_to_matrix(target.rotation)
                        @ quat_to_matrix(current.rotation).T)
    return np.concatenate([dp, rot])


# Fractional parts of sqrt(primes): a fixed low-discrepancy sequence used
# to reseed stalled solves deterministically (Richtmyer/Kronecker rule).
_RESEED_ALPHA = np.array([0.41421356, 0.73205081, 0.23606798, 0.64575131,
                          0.31662479, 0.60555128, 0.12310563, 0.35889894,
                          0.79583152, 0.38516481, 0.56776436, 0.08276253])
_STALL_WINDOW = 10     # non-improving iterations before a restart
_STALL_RTOL = 2e-2     # relative improvement that counts as progress
_RESEED_POOL = 64      # restart candidates scored per restart (FK only)


def ik_solve(e: Embodiment, target: Transform, seed: JointState,
             p: IkParams = IkParams()) -> IkResult:
    """Damped-least-squares IK toward a base-frame target pose.

    The damping adapts Levenberg-Marquardt style around ``p.damping``:
    a full step is taken when it reduces the error (damping relaxes),
    otherwise the step is rescaled by ``p.step_scale`` and the damping
    grows. When the error stops improving (typically a wrong-basin stall
    against a joint limit) the solve reseeds from the best of a fixed
    low-discrepancy candidate pool, still counting against the same
    iteration budget, so the solver is deterministic yet escapes local
    minima. Joints are clamped to limits every step. Non-convergence is
    reported in the result, never raised.
    """
    q = clamp(e, seed)
    lims = _limits_of(e)
    tgt_R = quat_to_matrix(target.rotation)
    tgt_p = target.translation
    vals = q.values
    alpha = _RESEED_ALPHA[:e.dof] if e.dof <= len(_RESEED_ALPHA) \
        else np.resize(_RESEED_ALPHA, e.dof)
    w = p.rot_weight
    lam = p.damping
    best_err = np.inf
    best = (vals, np.inf, np.inf)
    since_improved = 0
    restarts = 0
    rp = rr = np.inf
    iters = 0
    for iters in range(p.max_iters + 1):
        R, pos, J = _ee_and_jacobian(e, vals)
        err = np.empty(6)
        err[:3] = tgt_p - pos
        err[3:] = _rotation_log(tgt_R @ R.T)
        rp = float(np.linalg.norm(err[:3]))
        rr = float(np.linalg.norm(err[3:]))
        if rp < p.tol_pos and (w == 0.0 or rr < p.tol_rot):
            return IkResult(JointState(vals, q.aperture), True, iters, rp, rr)
        if iters == p.max_iters or e.dof == 0:
            break
        total = rp + (rr if w > 0 else 0.0)
        if total < best_err * (1.0 - _STALL_RTOL):
            best_err = total
            best = (vals, rp, rr)
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= _STALL_WINDOW and len(lims):
                restarts += 1
                best_cand, best_cand_err = vals, np.inf
                for j in range(_RESEED_POOL):
                    frac = ((restarts * _RESEED_POOL + j) * alpha) % 1.0
                    cand = lims[:, 0] + frac * (lims[:, 1] - lims[:, 0])
                    cand_err = _weighted_err_norm(e, cand, tgt_p, tgt_R, w)
                    if cand_err < best_cand_err:
                        best_cand, best_cand_err = cand, cand_err
                vals = best_cand
                since_improved = 0
                lam = p.damping
                continue
        if w != 1.0:
            err[3:] *= w
            J = J.copy()
            J[3:] *= w
        JJt = J @ J.T + lam * lam * np.eye(6)
        dq = J.T @ np.linalg.solve(JJt, err)
        cand = np.clip(vals + dq, lims[:, 0], lims[:, 1])
        if _weighted_err_norm(e, cand, tgt_p, tgt_R, w) < np.linalg.norm(err):
            vals = cand
            lam = max(0.5 * lam, 1e-4)
        else:
            vals = np.clip(vals + p.step_scale * dq, lims[:, 0], lims[:, 1])
            lam = min(3.0 * lam, 10.0)
    vals, rp, rr = best if best_err < np.inf else (vals, rp, rr)
    return IkResult(JointState(vals, q.aperture), False, iters, rp, rr)


def _weighted_err_norm(e: Embodiment, vals: np.ndarray, tgt_p: np.ndarray,
                       tgt_R: np.ndarray, rot_weight: float) -> float:
    chain = _chain_of(e.arm)
    mats = _chain_matrices(chain, dict(zip(e.actuated_joint_names, vals)))
    flange_idx = 1 + chain.link_names.index(e.flange_link) \
        if e.flange_link != chain.root_name else 0
    ee_m = mats[flange_idx] @ _ee_tool_matrix(e)
    dp = tgt_p - ee_m[:3, 3]
    drot = _rotation_log(tgt_R @ ee_m[:3, :3].T) * rot_weight
    return float(np.sqrt(dp @ dp + drot @ drot))


def mid_range_state(e: Embodiment, aperture: float = 0.0) -> JointState:
    lims = e.joint_limits()
    mid = lims.mean(axis=1) if len(lims) else np.zeros(0)
    return JointState(mid, aperture)


def reexpress_ee(ee_in_source_base: Transform, calib_src: Transform,
                 calib_tgt: Transform) -> Transform:
    """Re-express an EE pose from the source base frame into the target
    base frame via the shared camera frame (calibs are T_base->camera)."""
    return compose(invert(calib_tgt), compose(calib_src, ee_in_source_base))
