"""Batch dataset ingestion, editing, and export.

Dataset layout on disk:
    dataset/
      manifest.json      robot names, robot model references, trajectory list
      calib.json         camera intrinsics + per-robot extrinsics
      traj_<id>/
        frame_<t>.png    RGB observation
        depth_<t>.png    optional 16-bit scene depth, millimeters (0 = empty)
        states.jsonl     one line per frame: joints, aperture, action

Edited output mirrors this layout, adds mask sidecars
(mask_active_<t>.png, mask_virtual_<t>.png) and a run report.
"""

from __future__ import annotations

import json
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image as PILImage

from .compose import (MODE_NONE, MODE_SHADOW, CompositeResult, EditConfig,
                      Frame, Image, edit_frame)
from .errors import ImageDecodeError, MissingFile, SchemaError
from .geometry import (CalibrationNoiseSpec, CameraIntrinsics, Transform,
                       perturb_extrinsics, transform_from_dict,
                       transform_to_dict)
from .kinematics import JointState, mid_range_state
from .render import DepthBuffer, Mask
from .robot_model import (Embodiment, RobotModel, attach_gripper, parse_urdf)

DIRECTION_TRAIN = "train"
DIRECTION_EVAL = "eval"


# ---------------------------------------------------------------------------
# PNG helpers

def save_image(img: Image, path: str):
    PILImage.fromarray(img.pixels, mode="RGB").save(path)


def load_image(path: str) -> Image:
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise MissingFile(path)
    except Exception as e:
        raise ImageDecodeError(f"{path}: {e}") from e
    h, w = arr.shape[:2]
    return Image(w, h, arr)


def save_mask(mask: Mask, path: str):
    PILImage.fromarray(mask.bits).convert("1").save(path)


def load_mask(path: str) -> Mask:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("1"), dtype=bool)
    return Mask(arr.shape[1], arr.shape[0], arr)


def save_depth(depth: DepthBuffer, path: str):
    """16-bit PNG, millimeters, 0 where empty."""
    mm = np.where(np.isfinite(depth.values),
                  np.clip(np.round(depth.values * 1000.0), 0, 65535), 0)
    PILImage.fromarray(mm.astype(np.uint16)).save(path)


def load_depth(path: str) -> DepthBuffer:
    with PILImage.open(path) as im:
        mm = np.asarray(im, dtype=np.float64)
    vals = np.where(mm > 0, mm / 1000.0, np.inf)
    return DepthBuffer(mm.shape[1], mm.shape[0], vals)


# ---------------------------------------------------------------------------
# Manifest + calibration

@dataclass(frozen=True)
class Calibration:
    intrinsics: CameraIntrinsics
    extrinsics: dict  # robot name -> Transform (base -> camera)


def load_calibration(path: str) -> Calibration:
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path) as f:
        d = json.load(f)
    try:
        k = CameraIntrinsics(**d["intrinsics"])
        extr = {name: transform_from_dict(v) for name, v in d["extrinsics"].items()}
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{path}: {e}") from e
    return Calibration(k, extr)


def save_calibration(calib: Calibration, path: str):
    d = {"intrinsics": {"fx": calib.intrinsics.fx, "fy": calib.intrinsics.fy,
                        "cx": calib.intrinsics.cx, "cy": calib.intrinsics.cy,
                        "width": calib.intrinsics.width,
                        "height": calib.intrinsics.height},
         "extrinsics": {n: transform_to_dict(t)
                        for n, t in calib.extrinsics.items()}}
    with open(path, "w") as f:
        json.dump(d, f, indent=1, sort_keys=True)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    source_robot: str
    target_robot: str
    calibration_path: str
    trajectory_dirs: tuple
    image_format: str
    has_depth: bool
    robots: dict  # name -> embodiment spec dict (urdf paths, mount, tcp)


@dataclass(frozen=True)
class TrajectoryRecord:
    trajectory_id: str
    frames: tuple              # Frame objects
    actions: tuple             # (ee_pose Transform, aperture_command float)

    def __post_init__(self):
        if len(self.frames) != len(self.actions):
            raise SchemaError("frame/action count mismatch")
        ts = [f.time_index for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise SchemaError("time_index not strictly increasing")

    @property
    def length(self) -> int:
        return len(self.frames)


class Dataset:
    """Schema-validated dataset with lazily loaded trajectories."""

    def __init__(self, root: str, manifest: DatasetManifest,
                 calibration: Calibration, embodiments: dict):
        self.root = root
        self.manifest = manifest
        self.calibration = calibration
        self.embodiments = embodiments  # robot name -> Embodiment

    @property
    def n_trajectories(self) -> int:
        return len(self.manifest.trajectory_dirs)

    def trajectory(self, traj_dir: str) -> TrajectoryRecord:
        return load_trajectory(os.path.join(self.root, traj_dir),
                               self.manifest.has_depth)

    def trajectories(self):
        for d in self.manifest.trajectory_dirs:
            yield self.trajectory(d)


def _load_embodiment(spec: dict, asset_root: str) -> Embodiment:
    arm_path = os.path.join(asset_root, spec["arm_urdf"])
    if not os.path.exists(arm_path):
        raise MissingFile(arm_path)
    with open(arm_path) as f:
        arm = parse_urdf(f.read(), asset_root=asset_root)
    gripper = RobotModel.empty()
    if spec.get("gripper_urdf"):
        gpath = os.path.join(asset_root, spec["gripper_urdf"])
        if not os.path.exists(gpath):
            raise MissingFile(gpath)
        with open(gpath) as f:
            gripper = parse_urdf(f.read(), asset_root=asset_root)
    mount = transform_from_dict(spec["mount"]) if "mount" in spec else Transform.identity()
    tcp = transform_from_dict(spec["tcp"]) if "tcp" in spec else Transform.identity()
    return attach_gripper(arm, gripper, mount, tcp,
                          finger_joint_names=tuple(spec.get("finger_joints", ())),
                          flange_link=spec.get("flange_link", ""))


def load_dataset(manifest_path: str, asset_root: Optional[str] = None) -> Dataset:
    """Load and validate a dataset manifest; trajectories stay lazy but
    every referenced file is checked for existence."""
    if not os.path.exists(manifest_path):
        raise MissingFile(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    asset_root = asset_root or root
    with open(manifest_path) as f:
        d = json.load(f)
    try:
        manifest = DatasetManifest(
            name=d["name"], source_robot=d["source_robot"],
            target_robot=d["target_robot"],
            calibration_path=d.get("calibration", "calib.json"),
            trajectory_dirs=tuple(d.get("trajectories", ())),
            image_format=d.get("image_format", "png"),
            has_depth=bool(d.get("has_depth", False)),
            robots=d["robots"])
    except KeyError as e:
        raise SchemaError(f"manifest missing key {e}") from e
    calib = load_calibration(os.path.join(root, manifest.calibration_path))
    for name in (manifest.source_robot, manifest.target_robot):
        if name not in manifest.robots:
            raise SchemaError(f"robot {name!r} not described in manifest")
        if name not in calib.extrinsics:
            raise SchemaError(f"robot {name!r} missing from calibration")
    embodiments = {name: _load_embodiment(spec, asset_root)
                   for name, spec in manifest.robots.items()}
    for tdir in manifest.trajectory_dirs:
        spath = os.path.join(root, tdir, "states.jsonl")
        if not os.path.exists(spath):
            raise MissingFile(spath)
        with open(spath) as f:
            for i, _ in enumerate(f):
                fpath = os.path.join(root, tdir, f"frame_{i:04d}.png")
                if not os.path.exists(fpath):
                    raise MissingFile(fpath)
                if manifest.has_depth:
                    dpath = os.path.join(root, tdir, f"depth_{i:04d}.png")
                    if not os.path.exists(dpath):
                        raise MissingFile(dpath)
    return Dataset(root, manifest, calib, embodiments)


def load_trajectory(traj_dir: str, has_depth: bool) -> TrajectoryRecord:
    traj_id = os.path.basename(traj_dir.rstrip("/"))
    spath = os.path.join(traj_dir, "states.jsonl")
    if not os.path.exists(spath):
        raise MissingFile(spath)
    frames, actions = [], []
    with open(spath) as f:
        for i, line in enumerate(f):
            try:
                rec = json.loads(line)
                joints = JointState(np.asarray(rec["joints"], dtype=np.float64),
                                    rec.get("aperture", 0.0))
                act = rec["action"]
                action = (transform_from_dict(act["ee_pose"]),
                          float(act.get("aperture_command", 0.0)))
            except (KeyError, ValueError) as e:
                raise SchemaError(f"{spath} line {i}: {e}") from e
            img = load_image(os.path.join(traj_dir, f"frame_{i:04d}.png"))
            depth = None
            if has_depth:
                depth = load_depth(os.path.join(traj_dir, f"depth_{i:04d}.png"))
            frames.append(Frame(img, joints, depth,
                                rec.get("time_index", i), traj_id))
            actions.append(action)
    return TrajectoryRecord(traj_id, tuple(frames), tuple(actions))


def save_trajectory(record: TrajectoryRecord, traj_dir: str):
    os.makedirs(traj_dir, exist_ok=True)
    lines = []
    for i, (frame, (pose, ap_cmd)) in enumerate(zip(record.frames, record.actions)):
        save_image(frame.image, os.path.join(traj_dir, f"frame_{i:04d}.png"))
        if frame.scene_depth is not None:
            save_depth(frame.scene_depth, os.path.join(traj_dir, f"depth_{i:04d}.png"))
        lines.append(json.dumps({
            "time_index": frame.time_index,
            "joints": frame.joints.values.tolist(),
            "aperture": frame.joints.aperture,
            "action": {"ee_pose": transform_to_dict(pose),
                       "aperture_command": ap_cmd},
        }, sort_keys=True))
    with open(os.path.join(traj_dir, "states.jsonl"), "w") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# Batch edit

@dataclass
class EditReport:
    processed: int = 0
    edited: int = 0
    skipped: int = 0
    ik_failures: int = 0
    ik_failure_indices: dict = field(default_factory=dict)  # traj -> [t]
    frame_ms_mean: float = 0.0
    frame_ms_p95: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"processed": self.processed, "edited": self.edited,
                "skipped": self.skipped, "ik_failures": self.ik_failures,
                "ik_failure_indices": self.ik_failure_indices,
                "frame_ms_mean": self.frame_ms_mean,
                "frame_ms_p95": self.frame_ms_p95,
                "config": self.config}


def _edit_trajectory(dataset: Dataset, traj_dir: str, direction: str,
                     cfg: EditConfig, calib_active: Transform,
                     calib_virtual: Transform, active: Embodiment,
                     virtual: Embodiment, out_dir: str):
    """Edit one trajectory sequentially (IK warm start chains in order)."""
    record = dataset.trajectory(traj_dir)
    out_traj = os.path.join(out_dir, os.path.basename(traj_dir.rstrip("/")))
    os.makedirs(out_traj, exist_ok=True)
    k = dataset.calibration.intrinsics
    seed = mid_range_state(virtual)
    prev_q = None
    kept_lines = []
    failures = []
    timings = []
    out_index = 0
    for t, (frame, (pose, ap_cmd)) in enumerate(zip(record.frames, record.actions)):
        t0 = time.perf_counter()
        try:
            result = edit_frame(frame, active, virtual, calib_active,
                                calib_virtual, k, cfg, seed)
        except ImageDecodeError:
            failures.append(t)
            continue
        if cfg.mode == MODE_SHADOW and not result.ik_converged:
            failures.append(t)
            if direction == DIRECTION_TRAIN:
                timings.append(1000 * (time.perf_counter() - t0))
                continue  # skip-frame policy drops the training sample
            if prev_q is not None:
                # Eval policy: freeze the virtual robot at its last good pose.
                result = edit_frame(frame, active, virtual, calib_active,
                                    calib_virtual, k, cfg, seed,
                                    virtual_q_override=prev_q)
        if result.ik_converged:
            prev_q = result.virtual_q
            seed = result.virtual_q
        save_image(result.edited, os.path.join(out_traj, f"frame_{out_index:04d}.png"))
        save_mask(result.active_mask,
                  os.path.join(out_traj, f"mask_active_{out_index:04d}.png"))
        save_mask(result.virtual_mask,
                  os.path.join(out_traj, f"mask_virtual_{out_index:04d}.png"))
        if frame.scene_depth is not None:
            save_depth(frame.scene_depth,
                       os.path.join(out_traj, f"depth_{out_index:04d}.png"))
        kept_lines.append(json.dumps({
            "time_index": frame.time_index,
            "joints": frame.joints.values.tolist(),
            "aperture": frame.joints.aperture,
            "action": {"ee_pose": transform_to_dict(pose),
                       "aperture_command": ap_cmd},
        }, sort_keys=True))
        out_index += 1
        timings.append(1000 * (time.perf_counter() - t0))
    with open(os.path.join(out_traj, "states.jsonl"), "w") as f:
        f.write("\n".join(kept_lines) + ("\n" if kept_lines else ""))
    return {"processed": record.length, "edited": out_index,
            "skipped": record.length - out_index, "failures": failures,
            "timings": timings, "traj": record.trajectory_id}


def run_edit(dataset: Dataset, direction: str, cfg: EditConfig,
             noise: Optional[CalibrationNoiseSpec], out_dir: str,
             parallelism: int = 1) -> EditReport:
    """Apply the edit to every frame of the dataset and write the edited
    dataset plus a JSON report to ``out_dir``."""
    if direction not in (DIRECTION_TRAIN, DIRECTION_EVAL):
        raise SchemaError(f"direction must be train or eval, got {direction!r}")
    m = dataset.manifest
    if direction == DIRECTION_TRAIN:
        active_name, virtual_name = m.source_robot, m.target_robot
    else:
        active_name, virtual_name = m.target_robot, m.source_robot
    calib_active = dataset.calibration.extrinsics[active_name]
    calib_virtual = dataset.calibration.extrinsics[virtual_name]
    if noise is not None:
        # One fixed miscalibration per run, shared by both extrinsics
        # (one camera is wrong, not two).
        calib_active = perturb_extrinsics(calib_active, noise)
        calib_virtual = perturb_extrinsics(calib_virtual, noise)
    active = dataset.embodiments[active_name]
    virtual = dataset.embodiments[virtual_name]

    os.makedirs(out_dir, exist_ok=True)
    shutil.copy(os.path.join(dataset.root, m.calibration_path),
                os.path.join(out_dir, os.path.basename(m.calibration_path)))
    with open(os.path.join(dataset.root, "manifest.json")) as f:
        manifest_raw = f.read()
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        f.write(manifest_raw)

    jobs = max(1, parallelism)
    args = [(dataset, tdir, direction, cfg, calib_active, calib_virtual,
             active, virtual, out_dir) for tdir in m.trajectory_dirs]
    if jobs == 1:
        results = [_edit_trajectory(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda a: _edit_trajectory(*a), args))

    report = EditReport(config={
        "direction": direction, "mode": cfg.mode,
        "fill_color": list(cfg.fill_color),
        "occlusion_tolerance": cfg.occlusion_tolerance,
        "noise": None if noise is None else {
            "sigma_translation": noise.sigma_translation,
            "sigma_rotation": noise.sigma_rotation, "seed": noise.seed},
        "parallelism": parallelism})
    all_timings = []
    for r in sorted(results, key=lambda r: r["traj"]):
        report.processed += r["processed"]
        report.edited += r["edited"]
        report.skipped += r["skipped"]
        if r["failures"]:
            report.ik_failures += len(r["failures"])
            report.ik_failure_indices[r["traj"]] = r["failures"]
        all_timings.extend(r["timings"])
    if all_timings:
        report.frame_ms_mean = float(np.mean(all_timings))
        report.frame_ms_p95 = float(np.percentile(all_timings, 95))
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
    return report
