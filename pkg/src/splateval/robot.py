"""Robot kinematic models: description parsing and forward kinematics.

The description format is a strict subset of the common XML robot
schema: <robot> with <link> and <joint> children; joints carry
<parent link=>, <child link=>, <origin xyz= rpy=>, <axis xyz=> and
<limit lower= upper=>; supported types are revolute, prismatic, and
fixed. Links may carry collision primitives (<sphere radius=>,
<box size=>, <capsule radius= length=>) with an optional <origin>.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform, axis_angle_quat, normalize, quat_to_mat


class RobotModelError(ValueError):
    """Malformed or inconsistent robot description."""


@dataclass(frozen=True)
class CollisionPrimitive:
    kind: str  # sphere | box | capsule
    origin: RigidTransform  # link frame -> primitive frame
    params: tuple[float, ...]  # sphere: (r,); box: (sx,sy,sz); capsule: (r, length)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from points (link frame) to the solid primitive (0 inside)."""
        local = self.origin.inverse().apply(points)
        if self.kind == "sphere":
            return np.maximum(np.linalg.norm(local, axis=-1) - self.params[0], 0.0)
        if self.kind == "box":
            half = np.asarray(self.params) / 2.0
            q = np.abs(local) - half
            return np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        if self.kind == "capsule":
            r, length = self.params
            z = np.clip(local[:, 2], -length / 2.0, length / 2.0)
            closest = np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=-1)
            return np.maximum(np.linalg.norm(local - closest, axis=-1) - r, 0.0)
        raise RobotModelError(f"unknown collision primitive kind {self.kind!r}")


@dataclass
class Link:
    name: str
    collisions: list[CollisionPrimitive] = field(default_factory=list)
    mesh_path: str | None = None  # relative path, resolved by bundle loaders


@dataclass
class Joint:
    name: str
    kind: str  # revolute | prismatic | fixed
    parent: str
    child: str
    origin: RigidTransform
    axis: np.ndarray  # unit
    lower: float
    upper: float

    def motion(self, q: float) -> RigidTransform:
        if self.kind == "revolute":
            return RigidTransform(quat_to_mat(axis_angle_quat(self.axis, q)), np.zeros(3))
        if self.kind == "prismatic":
            return RigidTransform(np.eye(3), self.axis * q)
        return RigidTransform.identity()


@dataclass
class KinematicModel:
    root: str
    links: dict[str, Link]
    joints: list[Joint]  # topological order, parents before children

    @property
    def actuated_joints(self) -> list[Joint]:
        return [j for j in self.joints if j.kind != "fixed"]

    @property
    def dof(self) -> int:
        return len(self.actuated_joints)

    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.lower for j in self.actuated_joints])
        hi = np.array([j.upper for j in self.actuated_joints])
        return lo, hi

    def link_names(self) -> list[str]:
        return list(self.links)


@dataclass(frozen=True)
class JointConfig:
    """Values for the actuated joints, in model order (radians / meters)."""

    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))

    def __len__(self) -> int:
        return len(self.q)


def _parse_origin(el) -> RigidTransform:
    if el is None:
        return RigidTransform.identity()
    xyz = np.array([float(v) for v in el.get("xyz", "0 0 0").split()])
    rpy = np.array([float(v) for v in el.get("rpy", "0 0 0").split()])
    rx = quat_to_mat(axis_angle_quat([1, 0, 0], rpy[0]))
    ry = quat_to_mat(axis_angle_quat([0, 1, 0], rpy[1]))
    rz = quat_to_mat(axis_angle_quat([0, 0, 1], rpy[2]))
    return RigidTransform(rz @ ry @ rx, xyz)


def _parse_collision(link_el, path: str) -> list[CollisionPrimitive]:
    prims = []
    for col in link_el.findall("collision"):
        origin = _parse_origin(col.find("origin"))
        geom = col.find("geometry")
        if geom is None:
            raise RobotModelError(f"{path}: collision without geometry")
        for child in geom:
            if child.tag == "sphere":
                prims.append(CollisionPrimitive("sphere", origin, (float(child.get("radius")),)))
            elif child.tag == "box":
                size = tuple(float(v) for v in child.get("size").split())
                if len(size) != 3:
                    raise RobotModelError(f"{path}: box size needs 3 values")
                prims.append(CollisionPrimitive("box", origin, size))
            elif child.tag == "capsule":
                prims.append(
                    CollisionPrimitive(
                        "capsule", origin, (float(child.get("radius")), float(child.get("length")))
                    )
                )
            else:
                raise RobotModelError(f"{path}: unsupported collision geometry <{child.tag}>")
    return prims


def parse_robot_model(descriptor: bytes | str) -> KinematicModel:
    """Parse and validate the XML robot description subset."""
    try:
        root_el = ET.fromstring(descriptor)
    except ET.ParseError as exc:
        raise RobotModelError(f"robot XML parse error: {exc}") from exc
    if root_el.tag != "robot":
        raise RobotModelError(f"expected <robot> root, got <{root_el.tag}>")

    links: dict[str, Link] = {}
    for le in root_el.findall("link"):
        name = le.get("name")
        if not name:
            raise RobotModelError("link without a name")
        if name in links:
            raise RobotModelError(f"duplicate link name {name!r}")
        mesh_el = le.find("visual/geometry/mesh")
        links[name] = Link(
            name=name,
            collisions=_parse_collision(le, f"link {name!r}"),
            mesh_path=None if mesh_el is None else mesh_el.get("filename"),
        )

    joints: list[Joint] = []
    names = set()
    for je in root_el.findall("joint"):
        name = je.get("name")
        kind = je.get("type")
        if not name:
            raise RobotModelError("joint without a name")
        if name in names:
            raise RobotModelError(f"duplicate joint name {name!r}")
        names.add(name)
        if kind not in ("revolute", "prismatic", "fixed"):
            raise RobotModelError(f"joint {name!r}: unsupported type {kind!r}")
        parent_el, child_el = je.find("parent"), je.find("child")
        if parent_el is None or child_el is None:
            raise RobotModelError(f"joint {name!r}: missing parent/child")
        parent, child = parent_el.get("link"), child_el.get("link")
        for ln in (parent, child):
            if ln not in links:
                raise RobotModelError(f"joint {name!r}: unknown link {ln!r}")
        axis = np.array([1.0, 0.0, 0.0])
        axis_el = je.find("axis")
        if axis_el is not None:
            axis = np.array([float(v) for v in axis_el.get("xyz").split()])
            norm = np.linalg.norm(axis)
            if abs(norm - 1.0) > 1e-6:
                raise RobotModelError(f"joint {name!r}: axis not unit norm (|axis|={norm:g})")
        limit_el = je.find("limit")
        if kind != "fixed" and limit_el is None:
            raise RobotModelError(f"joint {name!r}: movable joint without limits")
        lower = float(limit_el.get("lower", "0")) if limit_el is not None else 0.0
        upper = float(limit_el.get("upper", "0")) if limit_el is not None else 0.0
        if lower > upper:
            raise RobotModelError(f"joint {name!r}: lower {lower:g} > upper {upper:g}")
        joints.append(
            Joint(name, kind, parent, child, _parse_origin(je.find("origin")), normalize(axis), lower, upper)
        )

    # tree validation: every link except one root has exactly one parent joint
    children = {}
    for j in joints:
        if j.child in children:
            raise RobotModelError(f"link {j.child!r} has two parent joints ({children[j.child].name!r}, {j.name!r})")
        children[j.child] = j
    roots = [name for name in links if name not in children]
    if len(roots) != 1:
        if not roots:
            cycle = ", ".join(sorted(j.name for j in joints))
            raise RobotModelError(f"no root link: joint cycle among [{cycle}]")
        raise RobotModelError(f"multiple root links: {sorted(roots)}")
    root = roots[0]

    # reachability doubles as cycle detection, and orders joints parent-first
    ordered: list[Joint] = []
    frontier = [root]
    seen = {root}
    by_parent: dict[str, list[Joint]] = {}
    for j in joints:
        by_parent.setdefault(j.parent, []).append(j)
    while frontier:
        link = frontier.pop(0)
        for j in by_parent.get(link, []):
            if j.child in seen:
                raise RobotModelError(f"cycle through joint {j.name!r}")
            seen.add(j.child)
            ordered.append(j)
            frontier.append(j.child)
    if len(seen) != len(links):
        missing = sorted(set(links) - seen)
        raise RobotModelError(f"links unreachable from root (cycle?): {missing}")

    return KinematicModel(root=root, links=links, joints=ordered)


def forward_kinematics(model: KinematicModel, q: JointConfig) -> dict[str, RigidTransform]:
    """Per-link model-frame transforms; the root sits at the identity."""
    if len(q) != model.dof:
        raise RobotModelError(f"joint config has {len(q)} values, model has {model.dof} dof")
    values = {}
    for j, val in zip(model.actuated_joints, q.q):
        values[j.name] = float(val)
    out = {model.root: RigidTransform.identity()}
    for j in model.joints:
        motion = j.motion(values.get(j.name, 0.0))
        out[j.child] = out[j.parent].compose(j.origin).compose(motion)
    return out


def clamp_to_limits(model: KinematicModel, q: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = model.joint_limits()
    clamped = np.clip(q, lo, hi)
    return clamped, bool(np.any(clamped != q))
