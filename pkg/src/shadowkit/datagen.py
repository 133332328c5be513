"""Synthetic disk datasets for pipeline tests and demos.

Generates a small tabletop dataset in the on-disk layout the pipeline
consumes: two planar robots (URDF), a pinhole camera looking down at the
table, scripted joint trajectories, and frames rendered with the same
rasterizer the edit uses (so model-based segmentation is exact).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .compose import Image
from .geometry import CameraIntrinsics, Transform, compose, transform_to_dict
from .kinematics import JointState, fk
from .pipeline import (Calibration, Dataset, load_dataset, save_calibration,
                       save_depth, save_image)
from .render import PINHOLE, rasterize, render_robot
from .robot_model import parse_urdf
from .toy_transfer import (ARM_Z, BACKGROUND_RGB, BLOCK_RGB, BLOCK_Z,
                           CAM_FROM_WORLD, PlanarEmbodiment, SOURCE_ARM,
                           TABLE_Z, TARGET_ARM, WORKSPACE, _square_tris,
                           planar_to_urdf)

PINHOLE_INTRINSICS = CameraIntrinsics(fx=100.0, fy=100.0, cx=0.0, cy=64.0,
                                      width=64, height=64)


def _base_extrinsic(spec: PlanarEmbodiment) -> Transform:
    base_in_world = Transform(translation=(spec.base_xy[0], spec.base_xy[1], ARM_Z))
    return compose(CAM_FROM_WORLD, base_in_world)


def _scene_render(block_xy, k: CameraIntrinsics):
    half = WORKSPACE / 2
    table = _square_tris(half, half, half, TABLE_Z)
    block = _square_tris(block_xy[0], block_xy[1], 0.04, BLOCK_Z)
    block_mask, _ = rasterize(block, k, projection=PINHOLE)
    _, depth = rasterize(np.concatenate([table, block]), k, projection=PINHOLE)
    return block_mask, depth


def make_disk_dataset(out_dir: str, n_trajectories: int = 3,
                      n_frames: int = 10, seed: int = 0,
                      has_depth: bool = True,
                      k: CameraIntrinsics = PINHOLE_INTRINSICS) -> Dataset:
    """Write a complete synthetic dataset and return it loaded."""
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    specs = {"source": SOURCE_ARM, "target": TARGET_ARM}
    for name, spec in specs.items():
        with open(os.path.join(out_dir, f"{name}.urdf"), "w") as f:
            f.write(planar_to_urdf(spec))
    source = parse_urdf(planar_to_urdf(SOURCE_ARM))
    calib = Calibration(k, {name: _base_extrinsic(spec)
                            for name, spec in specs.items()})
    save_calibration(calib, os.path.join(out_dir, "calib.json"))

    from .robot_model import arm_only
    emb = arm_only(source, Transform(translation=(SOURCE_ARM.link_lengths[-1]
                                                  + SOURCE_ARM.tcp_offset, 0, 0)))
    extr = calib.extrinsics["source"]
    traj_dirs = []
    for ti in range(n_trajectories):
        tdir = f"traj_{ti:03d}"
        traj_dirs.append(tdir)
        os.makedirs(os.path.join(out_dir, tdir), exist_ok=True)
        q0 = rng.uniform(0.6, 1.4, size=emb.dof)
        drift = rng.uniform(-0.02, 0.02, size=emb.dof)
        block_xy = rng.uniform(0.2, 0.44, size=2)
        lines = []
        for t in range(n_frames):
            q = JointState(q0 + drift * t)
            block_mask, scene_depth = _scene_render(block_xy, k)
            arm_mask, _ = render_robot(emb, q, k, extr)
            pixels = np.empty((k.height, k.width, 3), dtype=np.uint8)
            pixels[:] = BACKGROUND_RGB
            pixels[block_mask.bits] = BLOCK_RGB
            pixels[arm_mask.bits] = SOURCE_ARM.color
            save_image(Image(k.width, k.height, pixels),
                       os.path.join(out_dir, tdir, f"frame_{t:04d}.png"))
            if has_depth:
                save_depth(scene_depth,
                           os.path.join(out_dir, tdir, f"depth_{t:04d}.png"))
            pose = fk(emb, q).ee
            lines.append(json.dumps({
                "time_index": t, "joints": q.values.tolist(), "aperture": 0.0,
                "action": {"ee_pose": transform_to_dict(pose),
                           "aperture_command": 0.0}}, sort_keys=True))
        with open(os.path.join(out_dir, tdir, "states.jsonl"), "w") as f:
            f.write("\n".join(lines) + "\n")

    manifest = {
        "name": "synthetic-tabletop", "source_robot": "source",
        "target_robot": "target", "calibration": "calib.json",
        "trajectories": traj_dirs, "image_format": "png",
        "has_depth": has_depth,
        "robots": {
            name: {"arm_urdf": f"{name}.urdf",
                   "mount": transform_to_dict(
                       Transform(translation=(spec.link_lengths[-1], 0, 0))),
                   "tcp": transform_to_dict(
                       Transform(translation=(spec.tcp_offset, 0, 0))),
                   "flange_link": f"link{len(spec.link_lengths) - 1}"}
            for name, spec in specs.items()},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return load_dataset(os.path.join(out_dir, "manifest.json"))
