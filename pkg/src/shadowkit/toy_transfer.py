"""Desk-scale transfer harness: two visually distinct planar arms, a
push-to-goal task, scripted demos, a small behavior-cloned policy, and
an evaluation grid over edit modes.

The world is a top-down orthographic view of a tabletop. The block is
kinematic: it is carried while the end-effector is within the engage
radius and the engage command is on. Success is the block reaching the
goal before the horizon runs out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .compose import (MODE_BLACK_ONLY, MODE_NONE, MODE_SHADOW, EditConfig,
                      Frame, Image, edit_frame)
from .errors import DegenerateSample, ExpertFailed
from .geometry import (CalibrationNoiseSpec, CameraIntrinsics, Transform,
                       compose, perturb_extrinsics)
from .kinematics import (Embodiment, IkParams, JointState, fk, ik_solve)
from .render import ORTHOGRAPHIC, DepthBuffer, Mask, rasterize, render_robot
from .robot_model import (JointSpec, Link, RobotModel, attach_gripper,
                          box_mesh)
from .pipeline import TrajectoryRecord

# World geometry: 0.64 m square workspace viewed top-down at 0.01 m/px.
WORKSPACE = 0.64
PIXELS_PER_M = 100.0
IMAGE_SIZE = 64
OBS_SIZE = 32
CAMERA_HEIGHT = 1.0
TABLE_Z = 0.0
GOAL_Z = 0.001
BLOCK_Z = 0.02
ARM_Z = 0.04
ARM_THICKNESS = 0.01

BACKGROUND_RGB = (235, 235, 235)
GOAL_RGB = (120, 120, 120)
BLOCK_RGB = (220, 50, 50)

# Planar arms have no spare orientation DOF, so all toy-world solves
# are position-only (rot_weight=0); tolerances are tight enough that a
# feasible warm-started solve lands at machine precision. Reachable
# targets converge well under the iteration cap; a tight cap keeps
# miscalibrated (infeasible) solves from dominating rollout time.
TOY_IK = IkParams(damping=0.01, tol_pos=1e-9, tol_rot=1e-8,
                  max_iters=80, step_scale=0.5, rot_weight=0.0)


@dataclass(frozen=True)
class PlanarEmbodiment:
    name: str
    link_lengths: tuple
    link_width: float
    color: tuple                  # RGB
    joint_limits: tuple = ()      # per-joint (lo, hi); defaults to +-3 rad
    tcp_offset: float = 0.03      # along last link, beyond its end
    base_xy: tuple = (0.32, 0.06)

    def __post_init__(self):
        if len(self.link_lengths) < 2:
            raise ValueError("planar embodiment needs >=2 links")
        if self.link_width <= 0:
            raise ValueError("link width must be positive")
        if not self.joint_limits:
            object.__setattr__(self, "joint_limits",
                               tuple((-3.0, 3.0) for _ in self.link_lengths))


SOURCE_ARM = PlanarEmbodiment(
    name="source", link_lengths=(0.22, 0.18), link_width=0.05,
    color=(250, 150, 50), tcp_offset=0.03, base_xy=(0.32, 0.06))

TARGET_ARM = PlanarEmbodiment(
    name="target", link_lengths=(0.16, 0.14, 0.12), link_width=0.02,
    color=(90, 40, 160), tcp_offset=0.05, base_xy=(0.26, 0.08))


def build_embodiment(p: PlanarEmbodiment) -> Embodiment:
    """Planar arm as a kinematic tree: revolute z joints, box links."""
    links = [Link("base")]
    joints = []
    parent = "base"
    offset = 0.0
    for i, (length, (lo, hi)) in enumerate(zip(p.link_lengths, p.joint_limits)):
        link_name = f"link{i}"
        mesh = box_mesh(length, p.link_width, ARM_THICKNESS)
        links.append(Link(link_name,
                          ((mesh, Transform(translation=(length / 2, 0, 0))),)))
        joints.append(JointSpec(f"joint{i}", "revolute", parent, link_name,
                                Transform(translation=(offset, 0, 0)),
                                np.array([0.0, 0.0, 1.0]), (lo, hi)))
        parent = link_name
        offset = length
    arm = RobotModel(p.name, tuple(links), tuple(joints), "base")
    mount = Transform(translation=(p.link_lengths[-1], 0, 0))
    tcp = Transform(translation=(p.tcp_offset, 0, 0))
    return attach_gripper(arm, RobotModel.empty(), mount, tcp,
                          flange_link=f"link{len(p.link_lengths) - 1}")


def planar_to_urdf(p: PlanarEmbodiment) -> str:
    """URDF text for a planar arm (used by the disk-dataset fixtures)."""
    parts = [f'<robot name="{p.name}">', '  <link name="base"/>']
    offset = 0.0
    parent = "base"
    for i, (length, (lo, hi)) in enumerate(zip(p.link_lengths, p.joint_limits)):
        parts.append(
            f'  <link name="link{i}"><visual>'
            f'<origin xyz="{length / 2} 0 0"/>'
            f'<geometry><box size="{length} {p.link_width} {ARM_THICKNESS}"/>'
            f'</geometry></visual></link>')
        parts.append(
            f'  <joint name="joint{i}" type="revolute">'
            f'<parent link="{parent}"/><child link="link{i}"/>'
            f'<origin xyz="{offset} 0 0"/><axis xyz="0 0 1"/>'
            f'<limit lower="{lo}" upper="{hi}"/></joint>')
        parent = f"link{i}"
        offset = length
    parts.append('</robot>')
    return "\n".join(parts)


@dataclass(frozen=True)
class ToyScene:
    block_xy: tuple
    goal_xy: tuple
    half_size: float = 0.04
    bounds: tuple = ((0.0, 0.0), (WORKSPACE, WORKSPACE))

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.bounds
        for name, (x, y) in (("block", self.block_xy), ("goal", self.goal_xy)):
            if not (x0 <= x <= x1 and y0 <= y <= y1):
                raise ValueError(f"{name} outside workspace")


# Camera: rotate pi about the x axis so +z world (up) maps to -z camera,
# then translate so depth = CAMERA_HEIGHT - z_world.
CAM_FROM_WORLD = Transform(np.array([0.0, 1.0, 0.0, 0.0]),
                           (0.0, 0.0, CAMERA_HEIGHT))
TOY_INTRINSICS = CameraIntrinsics(fx=PIXELS_PER_M, fy=PIXELS_PER_M,
                                  cx=0.0, cy=float(IMAGE_SIZE),
                                  width=IMAGE_SIZE, height=IMAGE_SIZE)


def base_extrinsic(p: PlanarEmbodiment) -> Transform:
    base_in_world = Transform(translation=(p.base_xy[0], p.base_xy[1], ARM_Z))
    return compose(CAM_FROM_WORLD, base_in_world)


def _square_tris(cx: float, cy: float, half: float, z: float) -> np.ndarray:
    v = np.array([[cx - half, cy - half, z], [cx + half, cy - half, z],
                  [cx + half, cy + half, z], [cx - half, cy + half, z]])
    v = CAM_FROM_WORLD.apply(v)
    return np.stack([v[[0, 1, 2]], v[[0, 2, 3]]])


def render_toy(scene: ToyScene, e: Embodiment, q: JointState,
               extr: Transform = None,
               k: CameraIntrinsics = TOY_INTRINSICS,
               arm_color=None):
    """Render (image, arm mask, scene depth) for one toy state.

    ``extr`` is the arm's base-to-camera transform (identity base at the
    camera if omitted, only sensible for empty embodiments)."""
    (x0, y0), (x1, y1) = scene.bounds
    table = _square_tris((x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0) / 2, TABLE_Z)
    goal = _square_tris(*scene.goal_xy, scene.half_size, GOAL_Z)
    block = _square_tris(*scene.block_xy, scene.half_size, BLOCK_Z)

    goal_mask, _ = rasterize(goal, k, projection=ORTHOGRAPHIC)
    block_mask, _ = rasterize(block, k, projection=ORTHOGRAPHIC)
    _, scene_depth = rasterize(np.concatenate([table, goal, block]), k,
                               projection=ORTHOGRAPHIC)
    if e.is_empty:
        arm_mask = Mask.empty(k.width, k.height)
    else:
        arm_mask, _ = render_robot(e, q, k, extr, projection=ORTHOGRAPHIC)
    pixels = np.empty((k.height, k.width, 3), dtype=np.uint8)
    pixels[:] = BACKGROUND_RGB
    pixels[goal_mask.bits] = GOAL_RGB
    pixels[block_mask.bits] = BLOCK_RGB
    pixels[arm_mask.bits] = arm_color if arm_color is not None else (0, 0, 0)
    return Image(k.width, k.height, pixels), arm_mask, scene_depth


# ---------------------------------------------------------------------------
# The world bundle

@dataclass(frozen=True)
class ToyWorld:
    source_spec: PlanarEmbodiment
    target_spec: PlanarEmbodiment
    source: Embodiment
    target: Embodiment
    k: CameraIntrinsics
    extrinsics: dict  # name -> Transform

    def embodiment(self, name: str) -> Embodiment:
        return {"source": self.source, "target": self.target}[name]

    def spec(self, name: str) -> PlanarEmbodiment:
        return {"source": self.source_spec, "target": self.target_spec}[name]

    def other(self, name: str) -> str:
        return "target" if name == "source" else "source"


def default_world(source_spec: PlanarEmbodiment = SOURCE_ARM,
                  target_spec: PlanarEmbodiment = TARGET_ARM) -> ToyWorld:
    source = build_embodiment(source_spec)
    target = build_embodiment(target_spec)
    extr = {"source": base_extrinsic(source_spec),
            "target": base_extrinsic(target_spec)}
    return ToyWorld(source_spec, target_spec, source, target,
                    TOY_INTRINSICS, extr)


# ---------------------------------------------------------------------------
# Kinematic simulation

@dataclass(frozen=True)
class ToySimConfig:
    max_step: float = 0.03
    engage_radius: float = 0.06
    horizon: int = 80
    servo_iters: int = 40


HOME_Q = {2: (1.9, -1.1), 3: (1.9, -0.9, -0.6)}


def home_state(e: Embodiment) -> JointState:
    return JointState(np.array(HOME_Q[e.dof], dtype=np.float64))


class ToySim:
    """Kinematic planar world: arm joints + a block carried while engaged."""

    def __init__(self, world: ToyWorld, embodiment_name: str,
                 scene: ToyScene, cfg: ToySimConfig = ToySimConfig()):
        self.world = world
        self.name = embodiment_name
        self.spec = world.spec(embodiment_name)
        self.emb = world.embodiment(embodiment_name)
        self.scene = scene
        self.cfg = cfg
        self.q = home_state(self.emb)
        self.block_xy = np.array(scene.block_xy, dtype=np.float64)
        self.engaged = False
        self.carry_offset = np.zeros(2)
        self.succeeded = False
        self.t = 0
        self._check_success()

    def ee_world_xy(self) -> np.ndarray:
        ee = fk(self.emb, self.q, check_limits=False).ee
        base = self.spec.base_xy
        return ee.translation[:2] + np.array(base)

    def _servo(self, target_world_xy: np.ndarray):
        base = np.array(self.spec.base_xy)
        tgt_local = np.array([target_world_xy[0] - base[0],
                              target_world_xy[1] - base[1], 0.0])
        cur = fk(self.emb, self.q, check_limits=False).ee
        target = Transform(cur.rotation, tgt_local)
        params = replace(TOY_IK, tol_pos=1e-7, tol_rot=10.0,
                         max_iters=self.cfg.servo_iters, step_scale=0.8)
        sol = ik_solve(self.emb, target, self.q, params)
        self.q = JointState(sol.q.values, self.q.aperture)

    def step(self, action):
        """action = (dx, dy, engage); displacements in meters."""
        dx, dy, engage = float(action[0]), float(action[1]), float(action[2])
        d = np.array([dx, dy])
        n = np.linalg.norm(d)
        if n > self.cfg.max_step:
            d = d * (self.cfg.max_step / n)
        (x0, y0), (x1, y1) = self.scene.bounds
        target = np.clip(self.ee_world_xy() + d, (x0, y0), (x1, y1))
        self._servo(target)
        ee = self.ee_world_xy()
        on = engage > 0.5
        if on and not self.engaged:
            if np.linalg.norm(ee - self.block_xy) <= self.cfg.engage_radius:
                self.engaged = True
                self.carry_offset = self.block_xy - ee
        elif not on:
            self.engaged = False
        if self.engaged:
            self.block_xy = np.clip(ee + self.carry_offset, (x0, y0), (x1, y1))
        self.q = JointState(self.q.values, 1.0 if self.engaged else 0.0)
        self.t += 1
        self._check_success()

    def _check_success(self):
        if np.linalg.norm(self.block_xy - np.array(self.scene.goal_xy)) \
                <= self.scene.half_size:
            self.succeeded = True

    def frame(self, trajectory_id: str = "") -> Frame:
        scene_now = replace(self.scene, block_xy=tuple(self.block_xy))
        img, _, depth = render_toy(scene_now, self.emb, self.q,
                                   self.world.extrinsics[self.name],
                                   self.world.k, arm_color=self.spec.color)
        return Frame(img, self.q, depth, self.t, trajectory_id)


# ---------------------------------------------------------------------------
# Scripted expert

def scripted_expert(world: ToyWorld, scene: ToyScene, seed: int,
                    embodiment_name: str = "source",
                    cfg: ToySimConfig = ToySimConfig(),
                    action_jitter: float = 0.008):
    """IK-waypoint push-to-goal expert: approach the block, engage, carry
    it to the goal, release. Returns (TrajectoryRecord, success).

    Execution is jittered but the recorded action is the expert's
    *intended* absolute EE pose, so the demos carry corrective labels
    from slightly off-nominal states (DART-style noise injection).
    Raises ExpertFailed when the horizon runs out."""
    rng = np.random.default_rng(seed)
    sim = ToySim(world, embodiment_name, scene, cfg)
    traj_id = f"expert_{seed}"
    frames, actions = [], []
    while sim.t < cfg.horizon:
        frames.append(sim.frame(traj_id))
        if sim.succeeded and not sim.engaged:
            # Block already at goal (possibly from frame 0): one no-op.
            sim.step((0.0, 0.0, 0.0))
            actions.append((_ee_pose(sim), 0.0))
            break
        ee = sim.ee_world_xy()
        if not sim.engaged:
            d = sim.block_xy - ee
            engage = 1.0 if np.linalg.norm(d) <= cfg.engage_radius * 0.5 else 0.0
        else:
            d = np.array(scene.goal_xy) - sim.block_xy
            engage = 0.0 if np.linalg.norm(d) <= scene.half_size * 0.5 else 1.0
        n = np.linalg.norm(d)
        if n > cfg.max_step:
            d = d * (cfg.max_step / n)
        intended = _ee_pose(sim)
        intended = Transform(intended.rotation,
                             intended.translation + np.array([d[0], d[1], 0.0]))
        jittered = d + rng.uniform(-action_jitter, action_jitter, size=2)
        sim.step((float(jittered[0]), float(jittered[1]), engage))
        actions.append((intended, engage))
        if sim.succeeded and not sim.engaged:
            break
    if not sim.succeeded:
        raise ExpertFailed("horizon exhausted before the block reached the goal")
    record = TrajectoryRecord(traj_id, tuple(frames), tuple(actions))
    return record, sim.succeeded


def _ee_pose(sim: ToySim) -> Transform:
    return fk(sim.emb, sim.q, check_limits=False).ee


def sample_scene(rng: np.random.Generator) -> ToyScene:
    block = (rng.uniform(0.18, 0.46), rng.uniform(0.26, 0.42))
    return ToyScene(block_xy=block, goal_xy=(0.38, 0.42))


# ---------------------------------------------------------------------------
# Observations

def to_grayscale(img: Image) -> np.ndarray:
    p = img.pixels.astype(np.float64)
    g = (0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]) / 255.0
    return g


def downsample(g: np.ndarray, out_size: int = OBS_SIZE) -> np.ndarray:
    f = g.shape[0] // out_size
    return g.reshape(out_size, f, out_size, f).mean(axis=(1, 3))


def obs_vector(prev_img: Image, cur_img: Image) -> np.ndarray:
    a = downsample(to_grayscale(prev_img))
    b = downsample(to_grayscale(cur_img))
    return np.concatenate([a.ravel(), b.ravel()]) - 0.5


# ---------------------------------------------------------------------------
# Behavior-cloned policy

@dataclass
class MlpPolicy:
    """Tiny MLP: tanh hidden layers, linear output (dx, dy, engage)."""

    weights: list
    biases: list

    def forward(self, x: np.ndarray):
        acts = [x]
        h = x
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < len(self.weights) - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def predict(self, obs: np.ndarray) -> np.ndarray:
        out, _ = self.forward(obs.reshape(1, -1))
        return out[0]

    def n_params(self) -> int:
        return sum(W.size for W in self.weights) + sum(b.size for b in self.biases)


@dataclass(frozen=True)
class BcConfig:
    hidden: tuple = (128,)
    learning_rate: float = 0.02
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 64
    seed: int = 0
    observation_horizon: int = 2   # frames stacked into one observation


def init_policy(input_dim: int, hidden: tuple, output_dim: int,
                rng: np.random.Generator) -> MlpPolicy:
    sizes = (input_dim,) + tuple(hidden) + (output_dim,)
    weights, biases = [], []
    for a, b in zip(sizes, sizes[1:]):
        scale = 1.0 / math.sqrt(a)
        weights.append(rng.uniform(-scale, scale, size=(a, b)))
        biases.append(np.zeros(b))
    return MlpPolicy(weights, biases)


def bc_gradients(policy: MlpPolicy, X: np.ndarray, Y: np.ndarray):
    """Mean-squared-error loss and gradients for one batch."""
    out, acts = policy.forward(X)
    diff = out - Y
    loss = float((diff * diff).mean())
    dW = [None] * len(policy.weights)
    db = [None] * len(policy.biases)
    g = 2.0 * diff / diff.size
    for i in reversed(range(len(policy.weights))):
        dW[i] = acts[i].T @ g
        db[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ policy.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, dW, db


def train_bc(samples, config: BcConfig = BcConfig()):
    """Behavior cloning by mini-batch SGD with momentum.

    ``samples`` is a list of (obs_vector, action_vector) pairs. Returns
    (policy, final_training_loss). Deterministic given the seed.
    """
    X = np.stack([s[0] for s in samples])
    Y = np.stack([s[1] for s in samples])
    rng = np.random.default_rng(config.seed)
    policy = init_policy(X.shape[1], config.hidden, Y.shape[1], rng)
    vW = [np.zeros_like(W) for W in policy.weights]
    vb = [np.zeros_like(b) for b in policy.biases]
    n = len(X)
    loss = math.inf
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss_b, dW, db = bc_gradients(policy, X[idx], Y[idx])
            losses.append(loss_b)
            for i in range(len(policy.weights)):
                vW[i] = config.momentum * vW[i] - config.learning_rate * dW[i]
                vb[i] = config.momentum * vb[i] - config.learning_rate * db[i]
                policy.weights[i] = policy.weights[i] + vW[i]
                policy.biases[i] = policy.biases[i] + vb[i]
        loss = float(np.mean(losses))
    return policy, loss


# ---------------------------------------------------------------------------
# Editing demos / rollout observations

def _edit_cfg(mode: str) -> EditConfig:
    return EditConfig(mode=mode, ik_params=TOY_IK, projection=ORTHOGRAPHIC)


class RolloutEditor:
    """Applies the configured edit to a stream of frames, chaining the IK
    warm start, for one embodiment acting with one mode/direction."""

    def __init__(self, world: ToyWorld, active_name: str, mode: str,
                 noise: Optional[CalibrationNoiseSpec] = None):
        self.world = world
        self.mode = mode
        self.active = world.embodiment(active_name)
        self.virtual = world.embodiment(world.other(active_name))
        calib_a = world.extrinsics[active_name]
        calib_v = world.extrinsics[world.other(active_name)]
        if noise is not None:
            calib_a = perturb_extrinsics(calib_a, noise)
            calib_v = perturb_extrinsics(calib_v, noise)
        self.calib_a, self.calib_v = calib_a, calib_v
        self.seed = home_state(self.virtual)
        self.cfg = _edit_cfg(mode)

    def edit(self, frame: Frame) -> Image:
        if self.mode == MODE_NONE:
            return frame.image
        result = edit_frame(frame, self.active, self.virtual, self.calib_a,
                            self.calib_v, self.world.k, self.cfg, self.seed)
        if result.ik_converged:
            self.seed = result.virtual_q
        return result.edited


def edited_demo_samples(world: ToyWorld, demos, mode: str,
                        cfg: ToySimConfig = ToySimConfig()):
    """Turn source-robot demo records into (obs, action) BC samples.

    The regression target is the EE displacement implied by the recorded
    absolute pose, normalized by the step budget, plus the engage scalar.
    """
    source = world.embodiment("source")
    samples = []
    for record in demos:
        editor = RolloutEditor(world, "source", mode)
        edited = [editor.edit(f) for f in record.frames]
        for t, (pose, engage) in enumerate(record.actions):
            prev = edited[t - 1] if t > 0 else edited[t]
            obs = obs_vector(prev, edited[t])
            ee_now = fk(source, record.frames[t].joints,
                        check_limits=False).ee.translation[:2]
            disp = pose.translation[:2] - ee_now
            target = np.array([disp[0] / cfg.max_step,
                               disp[1] / cfg.max_step, engage])
            samples.append((obs, np.clip(target, -1.5, 1.5)))
    return samples


# ---------------------------------------------------------------------------
# Evaluation

@dataclass(frozen=True)
class EvalResult:
    successes: int
    episodes: int

    @property
    def rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0


def evaluate(world: ToyWorld, policy: Optional[MlpPolicy],
             embodiment_name: str, mode: str, episodes: int, seed: int,
             cfg: ToySimConfig = ToySimConfig(),
             noise: Optional[CalibrationNoiseSpec] = None,
             record_strip: bool = False):
    """Closed-loop rollout of a policy on one embodiment under one edit
    mode. Editing direction follows the embodiment: the source robot gets
    the train-time edit, the target robot the eval-time edit."""
    rng = np.random.default_rng(seed)
    successes = 0
    strip = []
    for ep in range(episodes):
        scene = sample_scene(rng)
        sim = ToySim(world, embodiment_name, scene, cfg)
        editor = RolloutEditor(world, embodiment_name, mode, noise)
        prev = None
        for _ in range(cfg.horizon):
            frame = sim.frame()
            edited = editor.edit(frame)
            if record_strip and ep == 0 and sim.t % 10 == 0:
                strip.append(edited)
            obs = obs_vector(prev if prev is not None else edited, edited)
            prev = edited
            if policy is None:
                action = (0.0, 0.0, 0.0)
            else:
                out = policy.predict(obs)
                action = (out[0] * cfg.max_step, out[1] * cfg.max_step, out[2])
            sim.step(action)
            if sim.succeeded and not sim.engaged:
                break
        if sim.succeeded:
            successes += 1
    result = EvalResult(successes, episodes)
    return (result, strip) if record_strip else result


def evaluate_expert(world: ToyWorld, embodiment_name: str, episodes: int,
                    seed: int, cfg: ToySimConfig = ToySimConfig()) -> EvalResult:
    """Run the scripted expert open-loop as its own sanity check."""
    rng = np.random.default_rng(seed)
    successes = 0
    for ep in range(episodes):
        scene = sample_scene(rng)
        try:
            _record, ok = scripted_expert(world, scene,
                                          int(rng.integers(2**31)),
                                          embodiment_name, cfg)
            successes += int(ok)
        except ExpertFailed:
            pass
    return EvalResult(successes, episodes)


# ---------------------------------------------------------------------------
# Statistics

def two_proportion_z_test(s1: int, n1: int, s2: int, n2: int) -> dict:
    """Pooled two-proportion z test; two-sided p via the normal CDF."""
    if n1 == 0 or n2 == 0:
        raise DegenerateSample("empty sample")
    if not (0 <= s1 <= n1 and 0 <= s2 <= n2):
        raise ValueError("successes must lie in [0, n]")
    p1, p2 = s1 / n1, s2 / n2
    pooled = (s1 + s2) / (n1 + n2)
    denom = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if denom == 0.0:
        return {"z": 0.0, "p_two_sided": 1.0}
    z = (p1 - p2) / denom
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return {"z": z, "p_two_sided": p}


# ---------------------------------------------------------------------------
# The experiment

@dataclass(frozen=True)
class ToyExperimentConfig:
    n_demos: int = 150
    episodes_per_cell: int = 50
    seed: int = 0
    sim: ToySimConfig = field(default_factory=ToySimConfig)
    bc: BcConfig = field(default_factory=BcConfig)
    modes: tuple = (MODE_NONE, MODE_BLACK_ONLY, MODE_SHADOW)
    noise_levels: tuple = ()   # extra shadow-on-target cells, (sigma_t, sigma_r)


@dataclass
class ToyExperimentReport:
    cells: dict = field(default_factory=dict)   # "emb/mode" -> result dict
    noise_cells: dict = field(default_factory=dict)
    z_tests: dict = field(default_factory=dict)
    training_losses: dict = field(default_factory=dict)
    episodes_per_cell: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return {"cells": self.cells, "noise_cells": self.noise_cells,
                "z_tests": self.z_tests,
                "training_losses": self.training_losses,
                "episodes_per_cell": self.episodes_per_cell,
                "seed": self.seed}

    def table(self) -> str:
        lines = ["mode         on source   on target",
                 "----         ---------   ---------"]
        modes = sorted({key.split("/")[1] for key in self.cells})
        for mode in (MODE_NONE, MODE_BLACK_ONLY, MODE_SHADOW):
            if mode not in modes:
                continue
            src = self.cells.get(f"source/{mode}", {}).get("rate", float("nan"))
            tgt = self.cells.get(f"target/{mode}", {}).get("rate", float("nan"))
            lines.append(f"{mode:<12} {src:>9.2f}   {tgt:>9.2f}")
        for key, cell in sorted(self.noise_cells.items()):
            lines.append(f"shadow+noise {key:<24} {cell['rate']:>6.2f}")
        for name, zt in sorted(self.z_tests.items()):
            lines.append(f"z[{name}] = {zt['z']:.3f}, p = {zt['p_two_sided']:.2e}")
        return "\n".join(lines)


def generate_demos(world: ToyWorld, n_demos: int, seed: int,
                   cfg: ToySimConfig = ToySimConfig()):
    rng = np.random.default_rng(seed)
    demos = []
    attempts = 0
    while len(demos) < n_demos and attempts < n_demos * 5:
        attempts += 1
        scene = sample_scene(rng)
        try:
            record, ok = scripted_expert(world, scene,
                                         int(rng.integers(2**31)),
                                         "source", cfg)
        except ExpertFailed:
            continue
        if ok:
            demos.append(record)
    return demos


def run_experiment(config: ToyExperimentConfig = ToyExperimentConfig(),
                   world: Optional[ToyWorld] = None,
                   collect_strips: bool = False):
    """Train one policy per edit mode on source demos and evaluate each
    on both embodiments; optionally sweep calibration noise on the
    shadow/target cell. Fully seeded and deterministic."""
    world = world or default_world()
    report = ToyExperimentReport(episodes_per_cell=config.episodes_per_cell,
                                 seed=config.seed)
    strips = {}
    demos = generate_demos(world, config.n_demos, config.seed, config.sim)
    policies = {}
    for mode in config.modes:
        samples = edited_demo_samples(world, demos, mode, config.sim)
        if samples:
            policy, loss = train_bc(samples, config.bc)
        else:
            policy, loss = None, float("nan")
        policies[mode] = policy
        report.training_losses[mode] = loss
        for emb_name in ("source", "target"):
            cell_seed = config.seed + 1000 * (1 + config.modes.index(mode)) \
                + (0 if emb_name == "source" else 500)
            out = evaluate(world, policy, emb_name, mode,
                           config.episodes_per_cell, cell_seed, config.sim,
                           record_strip=collect_strips)
            res, strip = out if collect_strips else (out, [])
            if collect_strips:
                strips[f"{emb_name}/{mode}"] = strip
            report.cells[f"{emb_name}/{mode}"] = {
                "successes": res.successes, "episodes": res.episodes,
                "rate": res.rate,
                "direction": "train" if emb_name == "source" else "eval"}
    for i, (sig_t, sig_r) in enumerate(config.noise_levels):
        noise = CalibrationNoiseSpec(sig_t, sig_r, seed=config.seed + 77 + i)
        res = evaluate(world, policies.get(MODE_SHADOW), "target", MODE_SHADOW,
                       config.episodes_per_cell, config.seed + 9000 + i,
                       config.sim, noise=noise)
        report.noise_cells[f"sigma_t={sig_t},sigma_r={sig_r}"] = {
            "successes": res.successes, "episodes": res.episodes,
            "rate": res.rate}
    if config.episodes_per_cell > 0 and \
            {MODE_SHADOW, MODE_BLACK_ONLY} <= set(config.modes):
        sh = report.cells[f"target/{MODE_SHADOW}"]
        bl = report.cells[f"target/{MODE_BLACK_ONLY}"]
        report.z_tests["shadow_vs_black_only_on_target"] = two_proportion_z_test(
            sh["successes"], sh["episodes"], bl["successes"], bl["episodes"])
    if config.episodes_per_cell > 0 and \
            {MODE_SHADOW, MODE_NONE} <= set(config.modes):
        sh = report.cells[f"target/{MODE_SHADOW}"]
        nn = report.cells[f"target/{MODE_NONE}"]
        report.z_tests["shadow_vs_naive_on_target"] = two_proportion_z_test(
            sh["successes"], sh["episodes"], nn["successes"], nn["episodes"])
    if collect_strips:
        return report, strips
    return report


def save_report(report: ToyExperimentReport, out_dir: str):
    import os
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "table.txt"), "w") as f:
        f.write(report.table() + "\n")
