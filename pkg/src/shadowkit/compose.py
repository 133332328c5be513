"""The Shadow edit: black out the active robot, overlay the virtual
counterpart robot's mask at the matching end-effector pose.

Train direction: the source robot is active and the target robot is
rendered virtually; eval direction is the converse. ``black_only`` skips
the virtual overlay (the ablation); ``none`` returns the raw image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch
from .geometry import CameraIntrinsics, Transform
from .kinematics import (Embodiment, IkParams, JointState, fk, ik_solve,
                         reexpress_ee)
from .render import (PINHOLE, DepthBuffer, Mask, occlusion_filter,
                     render_robot, segment_robot)

MODE_SHADOW = "shadow"
MODE_BLACK_ONLY = "black_only"
MODE_NONE = "none"
MODES = (MODE_SHADOW, MODE_BLACK_ONLY, MODE_NONE)


@dataclass(frozen=True)
class Image:
    """8-bit RGB image, row-major (H, W, 3)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.uint8)
        if p.shape != (self.height, self.width, 3):
            raise DimensionMismatch(
                f"pixels {p.shape} vs {self.height}x{self.width}x3")
        object.__setattr__(self, "pixels", p)

    @staticmethod
    def filled(width: int, height: int, rgb=(255, 255, 255)) -> "Image":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = rgb
        return Image(width, height, px)


@dataclass(frozen=True)
class EditConfig:
    fill_color: tuple = (0, 0, 0)
    mode: str = MODE_SHADOW
    occlusion_tolerance: float = 0.005
    ik_params: IkParams = field(default_factory=IkParams)
    projection: str = PINHOLE

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class Frame:
    image: Image
    joints: JointState
    scene_depth: Optional[DepthBuffer] = None
    time_index: int = 0
    trajectory_id: str = ""


@dataclass(frozen=True)
class CompositeResult:
    edited: Image
    active_mask: Mask
    virtual_mask: Mask
    virtual_q: JointState
    ik_converged: bool


def _fill(pixels: np.ndarray, mask: Mask, color):
    pixels[mask.bits] = color


def edit_frame(frame: Frame, active: Embodiment, virtual: Embodiment,
               calib_active: Transform, calib_virtual: Transform,
               k: CameraIntrinsics, cfg: EditConfig,
               ik_seed: JointState,
               virtual_q_override: Optional[JointState] = None) -> CompositeResult:
    """Apply one mask edit to one frame.

    The active robot is segmented model-based at the frame's measured
    joints and blacked out; in shadow mode the virtual robot is rendered
    at the same physical EE pose (via IK) and its mask overlaid. IK
    non-convergence is reported in the result, not raised.
    """
    W, H = k.width, k.height
    if (frame.image.width, frame.image.height) != (W, H):
        raise DimensionMismatch("frame image does not match camera intrinsics")
    empty = Mask.empty(W, H)
    if cfg.mode == MODE_NONE:
        return CompositeResult(frame.image, empty, empty,
                               JointState(np.zeros(virtual.dof)), True)

    active_mask, active_depth = render_robot(
        active, frame.joints, k, calib_active, projection=cfg.projection)
    if frame.scene_depth is not None:
        active_mask = occlusion_filter(active_mask, active_depth,
                                       frame.scene_depth,
                                       cfg.occlusion_tolerance)
    pixels = frame.image.pixels.copy()
    _fill(pixels, active_mask, cfg.fill_color)

    virtual_mask = empty
    virtual_q = JointState(np.zeros(virtual.dof))
    converged = True
    if cfg.mode == MODE_SHADOW:
        if virtual_q_override is not None:
            # Caller-imposed virtual pose (e.g. pipeline reuses the previous
            # frame's solution after an IK failure).
            converged = False
            virtual_q = JointState(virtual_q_override.values,
                                   frame.joints.aperture)
        else:
            ee = fk(active, frame.joints).ee
            target = reexpress_ee(ee, calib_active, calib_virtual)
            sol = ik_solve(virtual, target, ik_seed, cfg.ik_params)
            converged = sol.converged
            virtual_q = JointState(sol.q.values, frame.joints.aperture)
        virtual_mask, virtual_depth = render_robot(
            virtual, virtual_q, k, calib_virtual, projection=cfg.projection,
            check_limits=False)
        if frame.scene_depth is not None:
            virtual_mask = occlusion_filter(virtual_mask, virtual_depth,
                                            frame.scene_depth,
                                            cfg.occlusion_tolerance)
        _fill(pixels, virtual_mask, cfg.fill_color)

    return CompositeResult(Image(W, H, pixels), active_mask, virtual_mask,
                           virtual_q, converged)


def edit_train(frame: Frame, source_emb: Embodiment, target_emb: Embodiment,
               calib_source: Transform, calib_target: Transform,
               k: CameraIntrinsics, cfg: EditConfig,
               ik_seed: JointState,
               virtual_q_override: Optional[JointState] = None) -> CompositeResult:
    """Training-time edit: source robot is physically present, target
    robot is rendered virtually."""
    return edit_frame(frame, source_emb, target_emb, calib_source,
                      calib_target, k, cfg, ik_seed, virtual_q_override)


def edit_eval(frame: Frame, source_emb: Embodiment, target_emb: Embodiment,
              calib_source: Transform, calib_target: Transform,
              k: CameraIntrinsics, cfg: EditConfig,
              ik_seed: JointState,
              virtual_q_override: Optional[JointState] = None) -> CompositeResult:
    """Evaluation-time edit: target robot is physically present, source
    robot is rendered virtually."""
    return edit_frame(frame, target_emb, source_emb, calib_target,
                      calib_source, k, cfg, ik_seed, virtual_q_override)
