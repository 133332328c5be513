"""Byte-boundary layer over shadowkit for data-loading code.

Everything crosses the boundary as plain bytes or scalars so callers
never need shadowkit's array types. Buffers are copied at the boundary;
nothing is shared. Handles are immutable after construction and safe to
share between data-loader workers.

Core exceptions (all subclasses of ``shadowkit.errors.ShadowkitError``)
propagate unchanged, so the core error name is always visible to the
caller; size and shape problems raised here use ``BoundaryError``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from shadowkit import __version__ as _core_version
from shadowkit.compose import EditConfig, Frame, Image, edit_frame as _edit_frame
from shadowkit.errors import BoundaryError
from shadowkit.geometry import CalibrationNoiseSpec
from shadowkit.kinematics import JointState, mid_range_state
from shadowkit.pipeline import load_calibration, load_dataset, run_edit
from shadowkit.render import DepthBuffer, render_robot
from shadowkit.robot_model import arm_only, parse_urdf

__version__ = _core_version

__all__ = ["BoundFrameBuffer", "EditHandle", "edit_frame", "edit_dataset",
           "render_mask", "BoundaryError", "__version__"]


@dataclass(frozen=True)
class BoundFrameBuffer:
    """Row-major interleaved pixel buffer. Owns its bytes (copied in)."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise BoundaryError(
                f"buffer holds {len(self.data)} bytes, expected {expected} "
                f"({self.width}x{self.height}x{self.channels})")

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(
            self.height, self.width, self.channels).copy()

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BoundFrameBuffer":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, arr.tobytes())


class EditHandle:
    """Edit configuration resolved from manifest + calibration paths.

    Holds the loaded robots, extrinsics, and intrinsics for one
    direction/mode pair. Immutable once constructed.
    """

    def __init__(self, manifest_path: str, direction: str = "train",
                 mode: str = "shadow", assets: Optional[str] = None,
                 fill_color: tuple = (0, 0, 0)):
        dataset = load_dataset(manifest_path, asset_root=assets)
        m = dataset.manifest
        if direction == "train":
            active, virtual = m.source_robot, m.target_robot
        elif direction == "eval":
            active, virtual = m.target_robot, m.source_robot
        else:
            raise BoundaryError(f"direction must be train or eval, "
                                f"got {direction!r}")
        self.direction = direction
        self.config = EditConfig(mode=mode, fill_color=tuple(fill_color))
        self.intrinsics = dataset.calibration.intrinsics
        self.active = dataset.embodiments[active]
        self.virtual = dataset.embodiments[virtual]
        self.calib_active = dataset.calibration.extrinsics[active]
        self.calib_virtual = dataset.calibration.extrinsics[virtual]
        self._frozen = True

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise AttributeError("EditHandle is immutable")
        super().__setattr__(name, value)


def _as_image(image, handle: EditHandle) -> Image:
    if isinstance(image, BoundFrameBuffer):
        buf = image
    else:
        k = handle.intrinsics
        buf = BoundFrameBuffer(k.width, k.height, 3, bytes(image))
    if buf.channels != 3:
        raise BoundaryError(f"expected 3 channels, got {buf.channels}")
    return Image(buf.width, buf.height, buf.to_array())


def _as_depth(scene_depth, width: int, height: int) -> Optional[DepthBuffer]:
    if scene_depth is None:
        return None
    if isinstance(scene_depth, (bytes, bytearray, memoryview)):
        vals = np.frombuffer(scene_depth, dtype=np.float64)
    else:
        vals = np.asarray(scene_depth, dtype=np.float64).ravel()
    if vals.size != width * height:
        raise BoundaryError(f"depth holds {vals.size} values, expected "
                            f"{width * height} ({width}x{height})")
    return DepthBuffer(width, height, vals.reshape(height, width))


def edit_frame(image, joints: Sequence[float], handle: EditHandle,
               aperture: float = 0.0, scene_depth=None,
               ik_seed: Optional[Sequence[float]] = None) -> dict:
    """Edit one observation. ``image`` is a BoundFrameBuffer or raw RGB
    bytes at the calibrated resolution; ``scene_depth`` is optional
    float64 meters (bytes or sequence), infinity where empty.

    Returns a dict with ``edited`` (BoundFrameBuffer), ``active_mask``
    and ``virtual_mask`` (one 0/255 byte per pixel), ``ik_converged``,
    and ``virtual_q`` (the virtual robot's joint vector).

    When ``ik_seed`` is omitted the virtual arm is seeded mid-range,
    matching the batch editor's behavior on the first frame of a
    trajectory.
    """
    img = _as_image(image, handle)
    frame = Frame(img, JointState(np.asarray(joints, dtype=np.float64),
                                  float(aperture)),
                  _as_depth(scene_depth, img.width, img.height))
    if ik_seed is None:
        seed = mid_range_state(handle.virtual)
    else:
        seed = JointState(np.asarray(ik_seed, dtype=np.float64))
    res = _edit_frame(frame, handle.active, handle.virtual,
                      handle.calib_active, handle.calib_virtual,
                      handle.intrinsics, handle.config, seed)
    return {
        "edited": BoundFrameBuffer.from_array(res.edited.pixels),
        "active_mask": (res.active_mask.bits.astype(np.uint8) * 255).tobytes(),
        "virtual_mask": (res.virtual_mask.bits.astype(np.uint8) * 255).tobytes(),
        "ik_converged": res.ik_converged,
        "virtual_q": tuple(map(float, res.virtual_q.values)),
    }


def edit_dataset(manifest_path: str, direction: str, mode: str, out_dir: str,
                 jobs: int = 1, assets: Optional[str] = None,
                 noise: Optional[tuple] = None) -> dict:
    """Edit every frame of a dataset, writing the edited tree to
    ``out_dir``. ``noise`` is an optional (sigma_translation_m,
    sigma_rotation_deg, seed) miscalibration. Returns the run report as
    a plain dict."""
    dataset = load_dataset(manifest_path, asset_root=assets)
    spec = None
    if noise is not None:
        sig_t, sig_r_deg, seed = noise
        spec = CalibrationNoiseSpec(float(sig_t), math.radians(float(sig_r_deg)),
                                    int(seed))
    report = run_edit(dataset, direction, EditConfig(mode=mode), spec,
                      out_dir, parallelism=jobs)
    return report.to_dict()


def render_mask(urdf_path: str, joints: Sequence[float], calib_path: str,
                robot_name: str, assets: Optional[str] = None) -> BoundFrameBuffer:
    """Render a robot segmentation mask (one 0/255 byte per pixel) for an
    arm URDF at the given joint vector, using the named extrinsics from
    the calibration file."""
    with open(urdf_path) as f:
        model = parse_urdf(f.read(),
                           asset_root=assets or os.path.dirname(urdf_path))
    emb = arm_only(model)
    calibration = load_calibration(calib_path)
    if robot_name not in calibration.extrinsics:
        raise BoundaryError(f"no extrinsics for {robot_name!r}")
    q = JointState(np.asarray(joints, dtype=np.float64))
    mask, _ = render_robot(emb, q, calibration.intrinsics,
                           calibration.extrinsics[robot_name])
    return BoundFrameBuffer.from_array(mask.bits.astype(np.uint8) * 255)
