"""Evaluation-scene composition: assets, placements, predicates, rubrics.

A composed scene is background splats+mesh, an articulated robot at a
base pose, object placements with optional initial-state randomization,
a named camera set (external cameras plus exactly one wrist camera bound
to a robot link), and an ordered success rubric. Everything lives in the
canonical board frame F0. Composition is pure bookkeeping: the flattened
render set is the union of the parts, nothing added or dropped.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import Sim3, apply_sim3_scene
from .articulate import ArticulatedSplat, load_bundle, pose_articulated_splat
from .geometry import RigidTransform, axis_angle_quat, mat_to_quat, quat_to_mat
from .meshing import TriangleMesh, drop_height, load_obj
from .robot import JointConfig
from .splats import Camera, SplatScene, ValidationError
from .splat_io import load_splats_file

F0 = "F0"

PREDICATE_KINDS = ("inside_region", "on_top_of", "near", "lifted", "reached", "grasped")
DEFAULT_ON_TOP_OVERLAP = 0.5
DEFAULT_ON_TOP_GAP = 0.02
DEFAULT_GRASP_WIDTH = 0.03
DEFAULT_GRASP_DIST = 0.06


class ComposeError(ValidationError):
    """Scene references or bindings do not resolve; message lists all issues."""


@dataclass
class ObjectAsset:
    asset_id: str
    splats: SplatScene  # object-local frame
    mesh: TriangleMesh  # object-local frame
    mass: float = 0.1  # kg, metadata only

    def __post_init__(self):
        if len(self.splats) and len(self.mesh.vertices):
            gap = np.linalg.norm(self.splats.means.mean(axis=0) - self.mesh.centroid())
            if gap > 0.05:
                raise ValidationError(
                    f"asset {self.asset_id!r}: splat/mesh centroids disagree by {gap:.3f} m (> 0.05)"
                )

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mesh.bounds()


@dataclass
class Randomization:
    x: tuple[float, float] = (0.0, 0.0)
    y: tuple[float, float] = (0.0, 0.0)
    z: tuple[float, float] = (0.0, 0.0)
    yaw: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("x", "y", "z", "yaw"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValidationError(f"randomization {name} range must be finite")
            if lo > hi:
                raise ValidationError(f"randomization {name} range has low > high")

    def is_zero(self) -> bool:
        return all(getattr(self, k) == (0.0, 0.0) for k in ("x", "y", "z", "yaw"))


@dataclass
class Placement:
    asset_id: str
    pose: RigidTransform  # F0
    randomization: Randomization = field(default_factory=Randomization)
    instance_id: str | None = None  # auto-derived when None


@dataclass(frozen=True)
class Predicate:
    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in PREDICATE_KINDS:
            raise ValidationError(f"unknown predicate kind {self.kind!r}")
        for key in ("distance", "height", "overlap", "gap", "width"):
            if key in self.params and self.params[key] is not None and self.params[key] <= 0:
                raise ValidationError(f"predicate {self.kind}: parameter {key} must be positive")

    def referenced_instances(self) -> list[str]:
        out = []
        for key in ("a", "b"):
            if key in self.params:
                out.append(self.params[key])
        return out

    @staticmethod
    def inside_region(a: str, box_min, box_max) -> "Predicate":
        return Predicate("inside_region", {"a": a, "box_min": list(map(float, box_min)), "box_max": list(map(float, box_max))})

    @staticmethod
    def on_top_of(a: str, b: str, overlap: float = DEFAULT_ON_TOP_OVERLAP, gap: float = DEFAULT_ON_TOP_GAP) -> "Predicate":
        return Predicate("on_top_of", {"a": a, "b": b, "overlap": overlap, "gap": gap})

    @staticmethod
    def near(a: str, b: str, distance: float) -> "Predicate":
        return Predicate("near", {"a": a, "b": b, "distance": distance})

    @staticmethod
    def lifted(a: str, height: float) -> "Predicate":
        return Predicate("lifted", {"a": a, "height": height})

    @staticmethod
    def reached(a: str, distance: float) -> "Predicate":
        return Predicate("reached", {"a": a, "distance": distance})

    @staticmethod
    def grasped(a: str, width: float = DEFAULT_GRASP_WIDTH, distance: float = DEFAULT_GRASP_DIST) -> "Predicate":
        return Predicate("grasped", {"a": a, "width": width, "distance": distance})


@dataclass
class Rubric:
    task: str
    instruction: str
    steps: list[tuple[str, Predicate]]  # (description, predicate), ordered

    def __post_init__(self):
        if not self.steps:
            raise ValidationError("rubric needs at least one step")


@dataclass
class WristBinding:
    link: str
    offset: RigidTransform  # link frame -> camera frame
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int


@dataclass
class ComposedScene:
    background_splats: SplatScene
    background_mesh: TriangleMesh
    robot: ArticulatedSplat
    robot_base: RigidTransform
    assets: dict[str, ObjectAsset]
    placements: list[Placement]
    external_cameras: dict[str, Camera]
    wrist_camera: tuple[str, WristBinding]
    rubric: Rubric
    seed: int = 0
    q_init: JointConfig | None = None  # defaults to the scan configuration
    content_hash: str = ""

    def instance_ids(self) -> list[str]:
        return [p.instance_id for p in self.placements]

    def instance_asset(self, instance_id: str) -> ObjectAsset:
        for p in self.placements:
            if p.instance_id == instance_id:
                return self.assets[p.asset_id]
        raise KeyError(f"unknown instance {instance_id!r}")

    def initial_q(self) -> JointConfig:
        return self.q_init if self.q_init is not None else self.robot.q_scan

    def robot_splats_at(self, q: JointConfig) -> SplatScene:
        model_frame = pose_articulated_splat(self.robot, q, frame_label=F0)
        return _transform_scene_rigid(model_frame, self.robot_base)

    def object_splats_at(self, poses: dict[str, RigidTransform]) -> SplatScene:
        parts = []
        for p in self.placements:
            asset = self.assets[p.asset_id]
            if not len(asset.splats):
                continue
            parts.append(_transform_scene_rigid(asset.splats, poses[p.instance_id], frame_label=F0))
        return SplatScene.concatenate(parts, frame_label=F0) if parts else SplatScene.empty(F0)

    def flatten(self, q: JointConfig, poses: dict[str, RigidTransform]) -> SplatScene:
        """Background + posed robot + posed objects, as one render set."""
        parts = [s for s in (self.background_splats, self.robot_splats_at(q), self.object_splats_at(poses)) if len(s)]
        return SplatScene.concatenate(parts, frame_label=F0)

    def instance_mesh_at(self, instance_id: str, pose: RigidTransform) -> TriangleMesh:
        mesh = self.instance_asset(instance_id).mesh
        return TriangleMesh(pose.apply(mesh.vertices), mesh.triangles.copy())

    def nominal_poses(self) -> dict[str, RigidTransform]:
        return {p.instance_id: p.pose for p in self.placements}


def _transform_scene_rigid(scene: SplatScene, t: RigidTransform, frame_label: str | None = None) -> SplatScene:
    out = apply_sim3_scene(scene, Sim3(1.0, mat_to_quat(t.rotation), t.translation),
                           frame_label=frame_label or scene.frame_label)
    return out


def compose(
    background_splats: SplatScene,
    background_mesh: TriangleMesh,
    robot: ArticulatedSplat,
    robot_base: RigidTransform,
    assets: list[ObjectAsset],
    placements: list[Placement],
    external_cameras: dict[str, Camera],
    wrist_camera: tuple[str, WristBinding],
    rubric: Rubric,
    seed: int = 0,
    q_init: JointConfig | None = None,
    content_hash: str = "",
) -> ComposedScene:
    """Validate and assemble; raises ComposeError listing every violation."""
    problems: list[str] = []
    asset_map = {a.asset_id: a for a in assets}
    if len(asset_map) != len(assets):
        problems.append("duplicate asset ids")

    # derive unique instance ids: first occurrence keeps the asset id
    seen: dict[str, int] = {}
    for p in placements:
        if p.asset_id not in asset_map:
            problems.append(f"placement references unknown asset {p.asset_id!r}")
            continue
        if p.instance_id is None:
            n = seen.get(p.asset_id, 0)
            p.instance_id = p.asset_id if n == 0 else f"{p.asset_id}_{n + 1}"
            seen[p.asset_id] = n + 1
    ids = [p.instance_id for p in placements if p.instance_id]
    if len(set(ids)) != len(ids):
        problems.append(f"duplicate instance ids: {sorted(ids)}")

    name, binding = wrist_camera
    if binding.link not in robot.model.links:
        problems.append(f"wrist camera bound to unknown link {binding.link!r}")
    if not external_cameras:
        problems.append("need at least one external camera")
    if name in external_cameras:
        problems.append(f"wrist camera name {name!r} collides with an external camera")

    for desc, pred in rubric.steps:
        for ref in pred.referenced_instances():
            if ref not in ids:
                problems.append(f"rubric step {desc!r} references unknown instance {ref!r}")

    if background_splats.frame_label not in (F0, "world"):
        problems.append(f"background splats in frame {background_splats.frame_label!r}, expected {F0}")
    if q_init is not None and len(q_init) != robot.model.dof:
        problems.append(f"q_init has {len(q_init)} values, robot has {robot.model.dof} dof")

    if problems:
        raise ComposeError("scene composition failed:\n  - " + "\n  - ".join(problems))

    bg = background_splats.copy()
    bg.frame_label = F0
    return ComposedScene(
        background_splats=bg,
        background_mesh=background_mesh,
        robot=robot,
        robot_base=robot_base,
        assets=asset_map,
        placements=placements,
        external_cameras=external_cameras,
        wrist_camera=wrist_camera,
        rubric=rubric,
        seed=seed,
        q_init=q_init,
        content_hash=content_hash,
    )


# --- initial-state sampling ---------------------------------------------------


class UnsupportedObject(ValidationError):
    """An object has no support surface beneath it."""


def _settle_instance(
    scene: ComposedScene, instance_id: str, pose: RigidTransform,
    settled: dict[str, RigidTransform],
) -> RigidTransform:
    mesh = scene.instance_mesh_at(instance_id, pose)
    lo, hi = mesh.bounds()
    bottom = lo[2]
    columns = [
        (lo[0], lo[1]), (lo[0], hi[1]), (hi[0], lo[1]), (hi[0], hi[1]),
        ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2),
    ]
    supports = [scene.background_mesh] + [
        scene.instance_mesh_at(other, p) for other, p in settled.items()
    ]
    best = None
    start = bottom + 1e-7  # just above our own bottom so we do not hit ourselves
    for x, y in columns:
        for sup in supports:
            z = drop_height(sup, x, y, start)
            if z is not None:
                best = z if best is None else max(best, z)
    if best is None:
        raise UnsupportedObject(f"instance {instance_id!r} has no support beneath it")
    dz = best - bottom
    return RigidTransform(pose.rotation.copy(), pose.translation + np.array([0.0, 0.0, dz]))


def sample_initial_state(scene: ComposedScene, episode_seed: int) -> dict[str, RigidTransform]:
    """Randomized, settled instance poses; deterministic in (scene.seed, episode_seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([scene.seed, int(episode_seed)]))
    out: dict[str, RigidTransform] = {}
    for p in scene.placements:
        r = p.randomization
        dx = rng.uniform(*r.x) if r.x != (0.0, 0.0) else 0.0
        dy = rng.uniform(*r.y) if r.y != (0.0, 0.0) else 0.0
        dz = rng.uniform(*r.z) if r.z != (0.0, 0.0) else 0.0
        dyaw = rng.uniform(*r.yaw) if r.yaw != (0.0, 0.0) else 0.0
        if r.is_zero():
            pose = p.pose
        else:
            yaw_rot = quat_to_mat(axis_angle_quat([0, 0, 1], dyaw))
            pose = RigidTransform(
                yaw_rot @ p.pose.rotation, p.pose.translation + np.array([dx, dy, dz])
            )
        out[p.instance_id] = _settle_instance(scene, p.instance_id, pose, out)
    return out


# --- predicate and rubric evaluation ------------------------------------------


@dataclass
class SceneState:
    """World poses plus gripper state, as seen by predicates."""

    instance_poses: dict[str, RigidTransform]
    initial_poses: dict[str, RigidTransform]
    gripper_pose: RigidTransform
    gripper_width: float
    attached_instance: str | None = None


def _instance_bounds(scene: ComposedScene, state: SceneState, instance_id: str):
    if instance_id not in state.instance_poses:
        raise ValidationError(f"unknown instance {instance_id!r}")
    mesh = scene.instance_mesh_at(instance_id, state.instance_poses[instance_id])
    return mesh.bounds()


def eval_predicate(scene: ComposedScene, state: SceneState, pred: Predicate) -> bool:
    """Pure geometric check of one success criterion against a world state."""
    p = pred.params
    if pred.kind == "inside_region":
        pose = state.instance_poses.get(p["a"])
        if pose is None:
            raise ValidationError(f"unknown instance {p['a']!r}")
        lo = np.asarray(p["box_min"], dtype=float)
        hi = np.asarray(p["box_max"], dtype=float)
        c = pose.translation
        return bool(np.all(c >= lo) and np.all(c <= hi))
    if pred.kind == "on_top_of":
        alo, ahi = _instance_bounds(scene, state, p["a"])
        blo, bhi = _instance_bounds(scene, state, p["b"])
        overlap_x = max(0.0, min(ahi[0], bhi[0]) - max(alo[0], blo[0]))
        overlap_y = max(0.0, min(ahi[1], bhi[1]) - max(alo[1], blo[1]))
        a_area = (ahi[0] - alo[0]) * (ahi[1] - alo[1])
        frac = (overlap_x * overlap_y) / a_area if a_area > 0 else 0.0
        gap = alo[2] - bhi[2]
        return frac >= p.get("overlap", DEFAULT_ON_TOP_OVERLAP) and abs(gap) <= p.get("gap", DEFAULT_ON_TOP_GAP)
    if pred.kind == "near":
        for key in ("a", "b"):
            if p[key] not in state.instance_poses:
                raise ValidationError(f"unknown instance {p[key]!r}")
        d = np.linalg.norm(
            state.instance_poses[p["a"]].translation - state.instance_poses[p["b"]].translation
        )
        return bool(d <= p["distance"])
    if pred.kind == "lifted":
        if p["a"] not in state.instance_poses:
            raise ValidationError(f"unknown instance {p['a']!r}")
        dz = state.instance_poses[p["a"]].translation[2] - state.initial_poses[p["a"]].translation[2]
        return bool(dz >= p["height"])
    if pred.kind == "reached":
        if p["a"] not in state.instance_poses:
            raise ValidationError(f"unknown instance {p['a']!r}")
        d = np.linalg.norm(state.instance_poses[p["a"]].translation - state.gripper_pose.translation)
        return bool(d <= p["distance"])
    if pred.kind == "grasped":
        if state.attached_instance == p["a"]:
            return True
        if p["a"] not in state.instance_poses:
            raise ValidationError(f"unknown instance {p['a']!r}")
        d = np.linalg.norm(state.instance_poses[p["a"]].translation - state.gripper_pose.translation)
        return bool(
            state.gripper_width <= p.get("width", DEFAULT_GRASP_WIDTH)
            and d <= p.get("distance", DEFAULT_GRASP_DIST)
        )
    raise ValidationError(f"unknown predicate kind {pred.kind!r}")


def rubric_progress(scene: ComposedScene, states: list[SceneState], rubric: Rubric) -> tuple[float, int]:
    """Monotone-prefix progress over a state trace: (score in [0,1], steps achieved)."""
    if not states:
        raise ValidationError("empty state trace")
    achieved = 0
    total = len(rubric.steps)
    for state in states:
        while achieved < total and eval_predicate(scene, state, rubric.steps[achieved][1]):
            achieved += 1
        if achieved == total:
            break
    return achieved / total, achieved


def score_rubric(scene: ComposedScene, states: list[SceneState], rubric: Rubric) -> float:
    return rubric_progress(scene, states, rubric)[0]


# --- scene descriptor (on-disk format) ----------------------------------------


def _pose_to_list(t: RigidTransform) -> list[float]:
    return [float(v) for v in t.as_matrix().reshape(-1)]


def _pose_from_list(vals) -> RigidTransform:
    return RigidTransform.from_matrix(np.array(vals, dtype=float).reshape(4, 4))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def scene_descriptor_dict(
    scene: ComposedScene,
    background_dir: str,
    robot_bundle_dir: str,
    asset_paths: dict[str, dict[str, str]],
    hashes: dict[str, str] | None = None,
) -> dict:
    cams = []
    for name, cam in scene.external_cameras.items():
        cams.append(
            {
                "name": name,
                "kind": "external",
                "pose": _pose_to_list(cam.pose),
                "intrinsics": [cam.fx, cam.fy, cam.cx, cam.cy],
                "resolution": [cam.width, cam.height],
            }
        )
    wname, wb = scene.wrist_camera
    cams.append(
        {
            "name": wname,
            "kind": "wrist",
            "link": wb.link,
            "offset": _pose_to_list(wb.offset),
            "intrinsics": [wb.fx, wb.fy, wb.cx, wb.cy],
            "resolution": [wb.width, wb.height],
        }
    )
    return {
        "format": "psd-1",
        "seed": scene.seed,
        "background": {"dir": background_dir},
        "robot": {
            "bundle": robot_bundle_dir,
            "base_pose": _pose_to_list(scene.robot_base),
            "q_init": None if scene.q_init is None else [float(v) for v in scene.q_init.q],
        },
        "assets": [
            {
                "id": a.asset_id,
                "mass": a.mass,
                **asset_paths.get(a.asset_id, {}),
            }
            for a in scene.assets.values()
        ],
        "placements": [
            {
                "asset": p.asset_id,
                "instance": p.instance_id,
                "pose": _pose_to_list(p.pose),
                "randomization": {
                    "x": list(p.randomization.x),
                    "y": list(p.randomization.y),
                    "z": list(p.randomization.z),
                    "yaw": list(p.randomization.yaw),
                },
            }
            for p in scene.placements
        ],
        "cameras": cams,
        "rubric": {
            "task": scene.rubric.task,
            "instruction": scene.rubric.instruction,
            "steps": [
                {"description": desc, "kind": pred.kind, "params": pred.params}
                for desc, pred in scene.rubric.steps
            ],
        },
        "hashes": hashes or {},
    }


def save_scene_descriptor(descriptor: dict, path) -> str:
    """Write the descriptor; returns its content hash (also embedded)."""
    body = dict(descriptor)
    body.pop("content_hash", None)
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canon.encode()).hexdigest()
    body["content_hash"] = digest
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True))
    return digest


def load_scene(path) -> ComposedScene:
    """Load a descriptor file and everything it references, then compose."""
    path = Path(path)
    doc = json.loads(path.read_text())
    return load_scene_dict(doc, path.parent, where=str(path))


def load_scene_dict(doc: dict, base, where: str = "<descriptor>") -> ComposedScene:
    """Compose a scene from a descriptor dict with paths relative to ``base``."""
    base = Path(base)
    path = where
    if doc.get("format") != "psd-1":
        raise ComposeError(f"{path}: not a scene descriptor (format {doc.get('format')!r})")

    def resolve(rel):
        p = Path(rel)
        return p if p.is_absolute() else base / p

    bg_dir = resolve(doc["background"]["dir"])
    background_splats = load_splats_file(bg_dir / "background.pspl")
    background_mesh = load_obj(bg_dir / "background.obj")
    robot = load_bundle(resolve(doc["robot"]["bundle"]))
    robot_base = _pose_from_list(doc["robot"]["base_pose"])
    q_init = doc["robot"].get("q_init")

    assets = []
    asset_dirs = {}
    for a in doc["assets"]:
        adir = resolve(a["dir"])
        asset_dirs[a["id"]] = adir
        assets.append(
            ObjectAsset(
                asset_id=a["id"],
                splats=load_splats_file(adir / "object.pspl"),
                mesh=load_obj(adir / "object.obj"),
                mass=a.get("mass", 0.1),
            )
        )

    placements = []
    for p in doc["placements"]:
        r = p.get("randomization") or {}
        placements.append(
            Placement(
                asset_id=p["asset"],
                pose=_pose_from_list(p["pose"]),
                randomization=Randomization(
                    x=tuple(r.get("x", (0, 0))), y=tuple(r.get("y", (0, 0))),
                    z=tuple(r.get("z", (0, 0))), yaw=tuple(r.get("yaw", (0, 0))),
                ),
                instance_id=p.get("instance"),
            )
        )

    external = {}
    wrist = None
    for c in doc["cameras"]:
        fx, fy, cx, cy = c["intrinsics"]
        w, h = c["resolution"]
        if c["kind"] == "external":
            cam = Camera(_pose_from_list(c["pose"]), fx, fy, cx, cy, int(w), int(h))
            cam.validate()
            external[c["name"]] = cam
        else:
            wrist = (
                c["name"],
                WristBinding(c["link"], _pose_from_list(c["offset"]), fx, fy, cx, cy, int(w), int(h)),
            )
    if wrist is None:
        raise ComposeError(f"{path}: descriptor has no wrist camera")

    steps = []
    for s in doc["rubric"]["steps"]:
        steps.append((s["description"], Predicate(s["kind"], s["params"])))
    rubric = Rubric(doc["rubric"]["task"], doc["rubric"]["instruction"], steps)

    digest = doc.get("content_hash", "")
    return compose(
        background_splats=background_splats,
        background_mesh=background_mesh,
        robot=robot,
        robot_base=robot_base,
        assets=assets,
        placements=placements,
        external_cameras=external,
        wrist_camera=wrist,
        rubric=rubric,
        seed=int(doc.get("seed", 0)),
        q_init=None if q_init is None else JointConfig(np.array(q_init, dtype=float)),
        content_hash=digest,
    )
