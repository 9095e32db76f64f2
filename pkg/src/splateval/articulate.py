"""Anchoring splats to robot links and reposing them by joint state.

Robot splats scanned at a known configuration are assigned to the link
whose posed collision geometry lies nearest their center (beyond a
cutoff they are dropped and reported), stored in link-local frames, and
reposed for any joint configuration by the link's forward-kinematics
transform: centers move rigidly, orientations are pre-rotated, so each
splat's covariance transforms as R S R^T with unchanged spectrum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, mat_to_quat, quat_mul
from .meshing import TriangleMesh, load_obj, save_obj
from .robot import JointConfig, KinematicModel, forward_kinematics, parse_robot_model
from .splats import SplatScene, ValidationError
from .splat_io import load_splats_file, save_splats_file

DEFAULT_ASSIGN_CUTOFF = 0.05  # meters


@dataclass
class AssignmentReport:
    counts: dict[str, int]
    dropped: int
    cutoff: float


@dataclass
class ArticulatedSplat:
    model: KinematicModel
    q_scan: JointConfig
    link_splats: dict[str, SplatScene]  # link-local frames
    link_meshes: dict[str, TriangleMesh] = field(default_factory=dict)  # link-local
    report: AssignmentReport | None = None

    def links_with_splats(self) -> list[str]:
        return [name for name, s in self.link_splats.items() if len(s)]


def _link_distances(
    points: np.ndarray,
    model: KinematicModel,
    fk: dict[str, RigidTransform],
    link_meshes: dict[str, TriangleMesh] | None,
) -> tuple[np.ndarray, list[str]]:
    """Distance of each point to each link's posed geometry (inf if none)."""
    names = []
    cols = []
    for name, link in model.links.items():
        best = np.full(len(points), np.inf)
        local = fk[name].inverse().apply(points)
        for prim in link.collisions:
            best = np.minimum(best, prim.distance(local))
        if link_meshes and name in link_meshes and len(link_meshes[name].vertices):
            verts = fk[name].apply(link_meshes[name].vertices)
            d = np.linalg.norm(points[:, None, :] - verts[None, :, :], axis=-1).min(axis=1)
            best = np.minimum(best, d)
        names.append(name)
        cols.append(best)
    return np.stack(cols, axis=1), names


def assign_splats_to_links(
    robot_splats: SplatScene,
    model: KinematicModel,
    q_scan: JointConfig,
    link_meshes: dict[str, TriangleMesh] | None = None,
    cutoff: float = DEFAULT_ASSIGN_CUTOFF,
) -> ArticulatedSplat:
    """Partition the scanned robot splats by nearest posed link geometry."""
    if len(robot_splats) == 0:
        raise ValidationError("robot splat scan is empty")
    covered = {
        name
        for name, link in model.links.items()
        if link.collisions or (link_meshes and name in link_meshes and len(link_meshes[name].vertices))
    }
    if not covered:
        raise ValidationError("no link has collision geometry or a mesh to assign against")
    fk = forward_kinematics(model, q_scan)
    dists, names = _link_distances(robot_splats.means, model, fk, link_meshes)
    nearest = np.argmin(dists, axis=1)
    nearest_d = dists[np.arange(len(robot_splats)), nearest]
    keep = nearest_d <= cutoff

    link_splats: dict[str, SplatScene] = {}
    counts: dict[str, int] = {}
    for li, name in enumerate(names):
        idx = np.flatnonzero(keep & (nearest == li))
        counts[name] = len(idx)
        sub = robot_splats.subset(idx)
        # re-express in the link-local frame via T_link(q_scan)^-1
        inv = fk[name].inverse()
        sub.means = inv.apply(sub.means)
        sub.quats = quat_mul(mat_to_quat(inv.rotation), sub.quats)
        sub.frame_label = f"link:{name}"
        link_splats[name] = sub

    report = AssignmentReport(counts=counts, dropped=int((~keep).sum()), cutoff=cutoff)
    return ArticulatedSplat(
        model=model,
        q_scan=q_scan,
        link_splats=link_splats,
        link_meshes=dict(link_meshes or {}),
        report=report,
    )


def pose_articulated_splat(
    art: ArticulatedSplat, q: JointConfig, frame_label: str = "world"
) -> SplatScene:
    """Robot splats posed at q: union over links of T_link(q) applied locally."""
    fk = forward_kinematics(art.model, q)
    parts = []
    for name, local in art.link_splats.items():
        if not len(local):
            continue
        t = fk[name]
        posed = local.copy()
        posed.means = t.apply(local.means)
        posed.quats = quat_mul(mat_to_quat(t.rotation), local.quats)
        posed.frame_label = frame_label
        parts.append(posed)
    return SplatScene.concatenate(parts, frame_label=frame_label) if parts else SplatScene.empty(frame_label)


def pose_link_meshes(art: ArticulatedSplat, q: JointConfig) -> dict[str, TriangleMesh]:
    fk = forward_kinematics(art.model, q)
    out = {}
    for name, mesh in art.link_meshes.items():
        t = fk[name]
        out[name] = TriangleMesh(
            t.apply(mesh.vertices),
            mesh.triangles.copy(),
            colors=None if mesh.colors is None else mesh.colors.copy(),
            normals=None if mesh.normals is None else mesh.normals @ t.rotation.T,
        )
    return out


# --- articulated-splat bundle on disk ----------------------------------------

BUNDLE_MANIFEST = "manifest.json"
BUNDLE_MODEL = "robot.xml"


def save_bundle(art: ArticulatedSplat, directory, robot_xml: bytes | str) -> None:
    """Directory bundle: model XML, per-link splats/meshes, and a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(robot_xml, str):
        robot_xml = robot_xml.encode("utf-8")
    (directory / BUNDLE_MODEL).write_bytes(robot_xml)
    splat_files = {}
    for name, scene in art.link_splats.items():
        if not len(scene):
            continue
        fname = f"link_{name}.pspl"
        save_splats_file(scene, directory / fname)
        splat_files[name] = fname
    mesh_files = {}
    for name, mesh in art.link_meshes.items():
        fname = f"link_{name}.obj"
        save_obj(mesh, directory / fname)
        mesh_files[name] = fname
    manifest = {
        "format": "robot-bundle-1",
        "q_scan": [float(v) for v in art.q_scan.q],
        "splats": splat_files,
        "meshes": mesh_files,
        "cutoff": None if art.report is None else art.report.cutoff,
        "dropped": None if art.report is None else art.report.dropped,
        "counts": None if art.report is None else art.report.counts,
    }
    (directory / BUNDLE_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_bundle(directory) -> ArticulatedSplat:
    directory = Path(directory)
    manifest = json.loads((directory / BUNDLE_MANIFEST).read_text())
    if manifest.get("format") != "robot-bundle-1":
        raise ValidationError(f"{directory}: not a robot bundle")
    model = parse_robot_model((directory / BUNDLE_MODEL).read_bytes())
    q_scan = JointConfig(np.array(manifest["q_scan"], dtype=float))
    link_splats = {
        name: load_splats_file(directory / fname) for name, fname in manifest["splats"].items()
    }
    for name in model.links:
        link_splats.setdefault(name, SplatScene.empty(f"link:{name}"))
    link_meshes = {name: load_obj(directory / fname) for name, fname in manifest["meshes"].items()}
    report = None
    if manifest.get("cutoff") is not None:
        report = AssignmentReport(
            counts=manifest.get("counts") or {}, dropped=manifest.get("dropped") or 0, cutoff=manifest["cutoff"]
        )
    return ArticulatedSplat(model, q_scan, link_splats, link_meshes, report)
