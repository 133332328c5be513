"""Rigid transforms, pinhole projection, and calibration-noise injection.

Conventions:
  - Quaternions are (w, x, y, z), kept unit-norm after every operation.
  - An extrinsic transform maps points expressed in a robot base frame
    into the camera frame (T_base->camera).
  - Units are meters and radians throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera

_EPS = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Transform:
    """Rigid SE(3) pose: rotation quaternion (w,x,y,z) + translation (m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if n < _EPS:
            raise ValueError("zero-norm quaternion")
        if abs(n - 1.0) > 1e-12:
            q = q / n
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", _freeze(q))
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Transform":
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n < _EPS:
            return Transform(np.array([1.0, 0, 0, 0]), translation)
        axis = axis / n
        half = 0.5 * angle
        q = np.concatenate([[np.cos(half)], np.sin(half) * axis])
        return Transform(q, translation)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Transform":
        m = np.asarray(m, dtype=np.float64)
        return Transform(quat_from_matrix(m[:3, :3]), m[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform point(s): shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix().T + self.translation

    def axis_angle(self):
        """Rotation as (unit axis, angle in [0, pi])."""
        q = self.rotation if self.rotation[0] >= 0 else -self.rotation
        s = np.linalg.norm(q[1:])
        angle = 2.0 * np.arctan2(s, q[0])
        axis = q[1:] / s if s > _EPS else np.array([1.0, 0, 0])
        return axis, angle


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability.
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def compose(a: Transform, b: Transform) -> Transform:
    """Result applies b first, then a."""
    q = quat_mul(a.rotation, b.rotation)
    t = a.translation + quat_to_matrix(a.rotation) @ b.translation
    return Transform(q, t)


def invert(t: Transform) -> Transform:
    qinv = t.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return Transform(qinv, -(quat_to_matrix(qinv) @ t.translation))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


def project(p_cam, k: CameraIntrinsics):
    """Pinhole projection of a camera-frame point to pixel (u, v)."""
    x, y, z = np.asarray(p_cam, dtype=np.float64)
    if z <= 1e-9:
        raise BehindCamera(f"point depth {z} not renderable")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def unproject(u: float, v: float, depth: float, k: CameraIntrinsics) -> np.ndarray:
    """Pixel + depth back to a camera-frame point (internal plumbing)."""
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth])


@dataclass(frozen=True)
class CalibrationNoiseSpec:
    """Fixed-miscalibration model: 0-mean Gaussian translation noise per
    axis and a random-axis rotation with Gaussian angle magnitude."""

    sigma_translation: float = 0.0
    sigma_rotation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_translation < 0 or self.sigma_rotation < 0:
            raise ValueError("noise sigmas must be non-negative")


def perturb_extrinsics(t: Transform, noise: CalibrationNoiseSpec) -> Transform:
    if noise.sigma_translation == 0.0 and noise.sigma_rotation == 0.0:
        return t
    rng = np.random.default_rng(noise.seed)
    dt = rng.normal(0.0, noise.sigma_translation, size=3) if noise.sigma_translation > 0 else np.zeros(3)
    if noise.sigma_rotation > 0:
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < _EPS:
            axis = rng.normal(size=3)
        angle = rng.normal(0.0, noise.sigma_rotation)
        dq = Transform.from_axis_angle(axis, angle)
        q = quat_mul(dq.rotation, t.rotation)
    else:
        q = t.rotation
    return Transform(q, t.translation + dt)


def transform_to_dict(t: Transform) -> dict:
    return {"quaternion": list(map(float, t.rotation)),
            "translation": list(map(float, t.translation))}


def transform_from_dict(d: dict) -> Transform:
    return Transform(np.asarray(d["quaternion"], dtype=np.float64),
                     np.asarray(d["translation"], dtype=np.float64))
