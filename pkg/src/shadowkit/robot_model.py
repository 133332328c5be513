"""Robot descriptions: URDF subset, STL/OBJ meshes, kinematic trees.

Only visual geometry is kept; box/cylinder/sphere primitives are
tessellated to triangle meshes so rendering has a single path.
Collision geometry, dynamics, transmissions, and sensors are ignored.
"""

from __future__ import annotations

import math
import os
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadFaceIndex, CyclicKinematics, MalformedXml,
                     MissingMeshFile, TruncatedFile, UnsupportedJointType)
from .geometry import Transform, compose, transform_from_dict, transform_to_dict

CYLINDER_SEGMENTS = 32
SPHERE_SEGMENTS = 32


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray   # (V, 3) float64, meters
    triangles: np.ndarray  # (T, 3) int64 indices

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if np.isnan(v).any():
            raise ValueError("NaN vertex coordinate")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise BadFaceIndex("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @staticmethod
    def empty() -> "TriangleMesh":
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str                 # revolute | prismatic | fixed
    parent_link: str
    child_link: str
    origin: Transform
    axis: np.ndarray
    limits: tuple             # (lo, hi), radians or meters

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic", "fixed"):
            raise UnsupportedJointType(self.kind)
        a = np.asarray(self.axis, dtype=np.float64).reshape(3)
        if self.kind != "fixed":
            n = np.linalg.norm(a)
            if abs(n - 1.0) > 1e-9:
                if n < 1e-12:
                    raise ValueError(f"joint {self.name}: zero axis")
                a = a / n
        lo, hi = self.limits
        if lo > hi:
            raise ValueError(f"joint {self.name}: limits lo > hi")
        a.flags.writeable = False
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "limits", (float(lo), float(hi)))


@dataclass(frozen=True)
class Link:
    name: str
    meshes: tuple = ()  # tuple of (TriangleMesh, local Transform)


@dataclass(frozen=True)
class RobotModel:
    name: str
    links: tuple
    joints: tuple
    root_link: str
    parse_warnings: tuple = ()

    def __post_init__(self):
        _validate_tree(self.links, self.joints, self.root_link)

    @staticmethod
    def empty(name: str = "empty") -> "RobotModel":
        return RobotModel(name, (Link("base"),), (), "base")

    def link(self, name: str) -> Link:
        for l in self.links:
            if l.name == name:
                return l
        raise KeyError(name)

    def joint(self, name: str) -> JointSpec:
        for j in self.joints:
            if j.name == name:
                return j
        raise KeyError(name)

    def children_of(self, link_name: str):
        return [j for j in self.joints if j.parent_link == link_name]

    def leaf_links(self):
        parents = {j.parent_link for j in self.joints}
        return [l.name for l in self.links if l.name not in parents]

    def actuated_joints(self):
        return [j for j in self.joints if j.kind != "fixed"]

    @property
    def is_empty(self) -> bool:
        return not self.joints and all(not l.meshes for l in self.links)


def _validate_tree(links, joints, root_link):
    names = [l.name for l in links]
    if len(set(names)) != len(names):
        raise MalformedXml("duplicate link names")
    if root_link not in names:
        raise MalformedXml(f"root link {root_link!r} not among links")
    parent_of = {}
    for j in joints:
        if j.parent_link not in names or j.child_link not in names:
            raise MalformedXml(f"joint {j.name} references unknown link")
        if j.child_link in parent_of:
            raise CyclicKinematics(f"link {j.child_link} has two parents")
        parent_of[j.child_link] = j.parent_link
    if root_link in parent_of:
        raise CyclicKinematics(f"root link {root_link} has a parent")
    # Every non-root link must reach the root without revisiting a link.
    for name in names:
        seen = set()
        cur = name
        while cur != root_link:
            if cur in seen:
                raise CyclicKinematics(f"cycle through link {cur}")
            seen.add(cur)
            if cur not in parent_of:
                raise CyclicKinematics(f"link {cur} disconnected from root")
            cur = parent_of[cur]


# ---------------------------------------------------------------------------
# Mesh parsing

def parse_stl(data: bytes) -> TriangleMesh:
    """Parse binary or ASCII STL into a welded triangle mesh."""
    if _looks_ascii_stl(data):
        return _parse_stl_ascii(data.decode("ascii", errors="replace"))
    return _parse_stl_binary(data)


def _looks_ascii_stl(data: bytes) -> bool:
    head = data[:512].lstrip()
    if not head.startswith(b"solid"):
        return False
    return b"facet" in data or b"endsolid" in data


def _parse_stl_ascii(text: str) -> TriangleMesh:
    verts = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[0] == "vertex":
            try:
                verts.append(tuple(float(x) for x in parts[1:4]))
            except ValueError as e:
                raise TruncatedFile(f"bad vertex line: {line!r}") from e
    if len(verts) % 3 != 0:
        raise TruncatedFile("ASCII STL vertex count not a multiple of 3")
    return _weld(verts)


def _parse_stl_binary(data: bytes) -> TriangleMesh:
    if len(data) < 84:
        raise TruncatedFile("binary STL shorter than header")
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        raise TruncatedFile(f"binary STL declares {count} facets, data truncated")
    verts = []
    off = 84
    for _ in range(count):
        vals = struct.unpack_from("<12f", data, off)
        verts.append(vals[3:6])
        verts.append(vals[6:9])
        verts.append(vals[9:12])
        off += 50
    return _weld(verts)


def _weld(flat_verts) -> TriangleMesh:
    index = {}
    vertices = []
    tris = []
    tri = []
    for v in flat_verts:
        key = (float(v[0]), float(v[1]), float(v[2]))
        i = index.get(key)
        if i is None:
            i = len(vertices)
            index[key] = i
            vertices.append(key)
        tri.append(i)
        if len(tri) == 3:
            tris.append(tuple(tri))
            tri = []
    return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3))


def parse_obj(text: str) -> TriangleMesh:
    """Parse OBJ v/f statements; polygon faces are fan-triangulated."""
    vertices = []
    tris = []
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise TruncatedFile(f"line {ln}: vertex with <3 coordinates")
            vertices.append(tuple(float(x) for x in parts[1:4]))
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                first = tok.split("/")[0]
                try:
                    i = int(first)
                except ValueError as e:
                    raise BadFaceIndex(f"line {ln}: bad index {tok!r}") from e
                if i == 0:
                    raise BadFaceIndex(f"line {ln}: OBJ indices are 1-based")
                i = i - 1 if i > 0 else len(vertices) + i
                if i < 0 or i >= len(vertices):
                    raise BadFaceIndex(f"line {ln}: index {tok} out of range")
                idx.append(i)
            if len(idx) < 3:
                raise BadFaceIndex(f"line {ln}: face with <3 vertices")
            for a in range(1, len(idx) - 1):
                tris.append((idx[0], idx[a], idx[a + 1]))
    return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3))


# ---------------------------------------------------------------------------
# Primitive tessellation

def box_mesh(sx: float, sy: float, sz: float) -> TriangleMesh:
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    v = np.array([[sx_ * hx, sy_ * hy, sz_ * hz]
                  for sx_ in (-1, 1) for sy_ in (-1, 1) for sz_ in (-1, 1)])
    # indices: bit2=x, bit1=y, bit0=z
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return TriangleMesh(v, np.array(tris, dtype=np.int64))


def cylinder_mesh(radius: float, length: float, segments: int = CYLINDER_SEGMENTS) -> TriangleMesh:
    ang = 2 * math.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    top = np.column_stack([ring, np.full(segments, length / 2)])
    bot = np.column_stack([ring, np.full(segments, -length / 2)])
    verts = np.vstack([top, bot, [[0, 0, length / 2]], [[0, 0, -length / 2]]])
    ct, cb = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris.append((i, segments + i, segments + j))       # side
        tris.append((i, segments + j, j))
        tris.append((ct, i, j))                            # top cap
        tris.append((cb, segments + j, segments + i))      # bottom cap
    return TriangleMesh(verts, np.array(tris, dtype=np.int64))


def sphere_mesh(radius: float, segments: int = SPHERE_SEGMENTS) -> TriangleMesh:
    n_lat = max(segments // 2, 3)
    verts = [(0.0, 0.0, radius)]
    for i in range(1, n_lat):
        phi = math.pi * i / n_lat
        for j in range(segments):
            th = 2 * math.pi * j / segments
            verts.append((radius * math.sin(phi) * math.cos(th),
                          radius * math.sin(phi) * math.sin(th),
                          radius * math.cos(phi)))
    verts.append((0.0, 0.0, -radius))
    last = len(verts) - 1
    tris = []
    for j in range(segments):
        jn = (j + 1) % segments
        tris.append((0, 1 + j, 1 + jn))
        tris.append((last, 1 + (n_lat - 2) * segments + jn,
                     1 + (n_lat - 2) * segments + j))
    for i in range(n_lat - 2):
        a = 1 + i * segments
        b = a + segments
        for j in range(segments):
            jn = (j + 1) % segments
            tris.append((a + j, b + j, b + jn))
            tris.append((a + j, b + jn, a + jn))
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64))


# ---------------------------------------------------------------------------
# URDF parsing

def _rpy_to_quat(r, p, y):
    qx = Transform.from_axis_angle((1, 0, 0), r)
    qy = Transform.from_axis_angle((0, 1, 0), p)
    qz = Transform.from_axis_angle((0, 0, 1), y)
    return compose(qz, compose(qy, qx)).rotation


def _parse_origin(el) -> Transform:
    if el is None:
        return Transform.identity()
    xyz = [float(x) for x in el.get("xyz", "0 0 0").split()]
    rpy = [float(x) for x in el.get("rpy", "0 0 0").split()]
    return Transform(_rpy_to_quat(*rpy), xyz)


def parse_urdf(text: str, asset_root: str | None = None) -> RobotModel:
    """Parse a URDF subset: links with visual geometry and joints.

    Mesh file references are resolved relative to ``asset_root`` (or the
    current directory). Unsupported elements are skipped and listed in
    ``parse_warnings``. Continuous joints become revolute with +-2pi limits.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise MalformedXml(str(e)) from e
    if root.tag != "robot":
        raise MalformedXml(f"expected <robot>, got <{root.tag}>")
    warnings = []
    links = []
    for link_el in root.findall("link"):
        name = link_el.get("name")
        if name is None:
            raise MalformedXml("link without a name")
        meshes = []
        for vis in link_el.findall("visual"):
            origin = _parse_origin(vis.find("origin"))
            geom = vis.find("geometry")
            if geom is None:
                continue
            mesh = _parse_geometry(geom, asset_root, warnings)
            if mesh is not None:
                meshes.append((mesh, origin))
        if link_el.find("collision") is not None:
            warnings.append(f"link {name}: collision geometry ignored")
        links.append(Link(name, tuple(meshes)))
    joints = []
    for joint_el in root.findall("joint"):
        joints.append(_parse_joint(joint_el, warnings))
    for el in root:
        if el.tag not in ("link", "joint", "material"):
            warnings.append(f"unsupported element <{el.tag}> ignored")
    link_names = {l.name for l in links}
    children = {j.child_link for j in joints}
    roots = sorted(link_names - children)
    if not roots:
        raise CyclicKinematics("no root link: every link has a parent")
    model = RobotModel(root.get("name", "robot"), tuple(links), tuple(joints),
                       roots[0], tuple(warnings))
    if len(roots) > 1:
        raise MalformedXml(f"multiple root links: {roots}")
    return model


def _parse_geometry(geom_el, asset_root, warnings):
    for child in geom_el:
        if child.tag == "box":
            sx, sy, sz = (float(x) for x in child.get("size", "0 0 0").split())
            return box_mesh(sx, sy, sz)
        if child.tag == "cylinder":
            return cylinder_mesh(float(child.get("radius")), float(child.get("length")))
        if child.tag == "sphere":
            return sphere_mesh(float(child.get("radius")))
        if child.tag == "mesh":
            fn = child.get("filename", "")
            fn = fn.replace("package://", "")
            path = os.path.join(asset_root or ".", fn)
            if not os.path.exists(path):
                raise MissingMeshFile(path)
            scale = np.array([float(x) for x in child.get("scale", "1 1 1").split()])
            with open(path, "rb") as f:
                data = f.read()
            if path.lower().endswith(".obj"):
                mesh = parse_obj(data.decode("utf-8", errors="replace"))
            else:
                mesh = parse_stl(data)
            if not np.allclose(scale, 1.0):
                mesh = TriangleMesh(mesh.vertices * scale, mesh.triangles)
            return mesh
        warnings.append(f"unsupported geometry <{child.tag}> ignored")
    return None


def _parse_joint(joint_el, warnings) -> JointSpec:
    name = joint_el.get("name", "?")
    kind = joint_el.get("type")
    parent = joint_el.find("parent")
    child = joint_el.find("child")
    if parent is None or child is None:
        raise MalformedXml(f"joint {name}: missing parent/child")
    origin = _parse_origin(joint_el.find("origin"))
    axis_el = joint_el.find("axis")
    axis = np.array([float(x) for x in axis_el.get("xyz").split()]) if axis_el is not None \
        else np.array([1.0, 0.0, 0.0])
    limit_el = joint_el.find("limit")
    if kind == "continuous":
        kind = "revolute"
        limits = (-2 * math.pi, 2 * math.pi)
    elif kind == "fixed":
        limits = (0.0, 0.0)
        axis = np.array([1.0, 0.0, 0.0])
    elif kind in ("revolute", "prismatic"):
        if limit_el is None:
            raise MalformedXml(f"joint {name}: {kind} joint without limits")
        limits = (float(limit_el.get("lower", "0")), float(limit_el.get("upper", "0")))
    elif kind in ("floating", "planar"):
        raise UnsupportedJointType(f"joint {name}: type {kind}")
    else:
        raise MalformedXml(f"joint {name}: unknown type {kind!r}")
    return JointSpec(name, kind, parent.get("link"), child.get("link"),
                     origin, axis, limits)


# ---------------------------------------------------------------------------
# Embodiments

@dataclass(frozen=True)
class Embodiment:
    """An arm plus attached gripper with a tool-center-point offset.

    The end-effector frame is flange * mount * tcp, where flange is the
    arm's flange link pose. ``actuated_joint_names`` orders the q vector;
    ``finger_joint_names`` are gripper joints driven by one normalized
    aperture scalar mapped linearly onto each joint's limit range.
    """

    arm: RobotModel
    gripper: RobotModel
    mount: Transform
    tcp: Transform
    actuated_joint_names: tuple
    finger_joint_names: tuple = ()
    flange_link: str = ""

    def __post_init__(self):
        arm_actuated = {j.name for j in self.arm.actuated_joints()}
        if set(self.actuated_joint_names) != arm_actuated:
            raise ValueError("actuated_joint_names must cover every non-fixed "
                             "arm joint exactly once")
        if len(set(self.actuated_joint_names)) != len(self.actuated_joint_names):
            raise ValueError("duplicate actuated joint name")
        flange = self.flange_link
        if not flange:
            leaves = self.arm.leaf_links()
            flange = leaves[-1] if leaves else self.arm.root_link
            object.__setattr__(self, "flange_link", flange)

    @property
    def dof(self) -> int:
        return len(self.actuated_joint_names)

    def joint_limits(self) -> np.ndarray:
        by_name = {j.name: j for j in self.arm.joints}
        return np.array([by_name[n].limits for n in self.actuated_joint_names])

    @property
    def is_empty(self) -> bool:
        return self.arm.is_empty and self.gripper.is_empty


def attach_gripper(arm: RobotModel, gripper: RobotModel, mount: Transform,
                   tcp: Transform, finger_joint_names=(),
                   flange_link: str = "") -> Embodiment:
    """Combine an arm and a gripper into one embodiment.

    Gripper link/joint names are prefixed with the gripper's model name
    when they collide with arm names.
    """
    arm_links = {l.name for l in arm.links}
    arm_joints = {j.name for j in arm.joints}
    collide = any(l.name in arm_links for l in gripper.links) or \
        any(j.name in arm_joints for j in gripper.joints)
    if collide and not gripper.is_empty:
        prefix = gripper.name + "/"
        rename = {l.name: prefix + l.name for l in gripper.links}
        gripper = RobotModel(
            gripper.name,
            tuple(Link(rename[l.name], l.meshes) for l in gripper.links),
            tuple(JointSpec(prefix + j.name, j.kind, rename[j.parent_link],
                            rename[j.child_link], j.origin, j.axis, j.limits)
                  for j in gripper.joints),
            rename[gripper.root_link], gripper.parse_warnings)
        finger_joint_names = tuple(prefix + n for n in finger_joint_names)
    return Embodiment(arm=arm, gripper=gripper, mount=mount, tcp=tcp,
                      actuated_joint_names=tuple(j.name for j in arm.actuated_joints()),
                      finger_joint_names=tuple(finger_joint_names),
                      flange_link=flange_link)


def arm_only(arm: RobotModel, tcp: Transform = None) -> Embodiment:
    return attach_gripper(arm, RobotModel.empty(), Transform.identity(),
                          tcp or Transform.identity())


# ---------------------------------------------------------------------------
# Serialization of the in-memory model (round-trip tested)

def mesh_to_dict(m: TriangleMesh) -> dict:
    return {"vertices": m.vertices.tolist(), "triangles": m.triangles.tolist()}


def mesh_from_dict(d: dict) -> TriangleMesh:
    return TriangleMesh(np.asarray(d["vertices"], dtype=np.float64).reshape(-1, 3),
                        np.asarray(d["triangles"], dtype=np.int64).reshape(-1, 3))


def model_to_dict(m: RobotModel) -> dict:
    return {
        "name": m.name,
        "root_link": m.root_link,
        "links": [{"name": l.name,
                   "meshes": [{"mesh": mesh_to_dict(mm), "origin": transform_to_dict(tt)}
                              for mm, tt in l.meshes]} for l in m.links],
        "joints": [{"name": j.name, "kind": j.kind, "parent": j.parent_link,
                    "child": j.child_link, "origin": transform_to_dict(j.origin),
                    "axis": j.axis.tolist(), "limits": list(j.limits)}
                   for j in m.joints],
    }


def model_from_dict(d: dict) -> RobotModel:
    links = tuple(Link(l["name"],
                       tuple((mesh_from_dict(e["mesh"]), transform_from_dict(e["origin"]))
                             for e in l["meshes"]))
                  for l in d["links"])
    joints = tuple(JointSpec(j["name"], j["kind"], j["parent"], j["child"],
                             transform_from_dict(j["origin"]),
                             np.asarray(j["axis"]), tuple(j["limits"]))
                   for j in d["joints"])
    return RobotModel(d["name"], links, joints, d["root_link"])
