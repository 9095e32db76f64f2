"""Similarity-transform estimation and application.

Recovers the scale/rotation/translation taking reconstruction-frame
points into the metric board frame from matched camera centers, via the
closed-form least-squares alignment (centroids, covariance SVD with a
reflection-safe sign flip, trace-ratio scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, mat_to_quat, quat_mul, quat_to_mat
from .splats import Camera, SplatScene

CANONICAL_FRAME = "F0"


class DegenerateCorrespondences(ValueError):
    """Correspondence set does not determine a unique similarity transform."""


@dataclass(frozen=True)
class Sim3:
    """x -> scale * R(quat) @ x + translation."""

    scale: float
    quat: np.ndarray  # (4,) unit, scalar-first
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "quat", np.asarray(self.quat, dtype=float).reshape(4))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @staticmethod
    def identity() -> "Sim3":
        return Sim3(1.0, np.array([1.0, 0, 0, 0]), np.zeros(3))

    def rotation(self) -> np.ndarray:
        return quat_to_mat(self.quat)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=float) @ self.rotation().T) + self.translation

    def inverse(self) -> "Sim3":
        r_inv = self.rotation().T
        return Sim3(1.0 / self.scale, mat_to_quat(r_inv), -(r_inv @ self.translation) / self.scale)

    def compose(self, other: "Sim3") -> "Sim3":
        """self ∘ other (apply ``other`` first)."""
        return Sim3(
            self.scale * other.scale,
            quat_mul(self.quat, other.quat),
            self.scale * (self.rotation() @ other.translation) + self.translation,
        )


@dataclass
class CorrespondenceSet:
    """Matched points: p in the reconstruction frame, q in the board frame."""

    p: np.ndarray  # (N,3)
    q: np.ndarray  # (N,3)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 3)
        if len(self.p) != len(self.q):
            raise ValueError("correspondence arrays differ in length")

    def __len__(self) -> int:
        return len(self.p)


def estimate_sim3(corr: CorrespondenceSet) -> tuple[Sim3, float]:
    """Least-squares Sim(3) fit; returns (transform, rms residual).

    Raises DegenerateCorrespondences for <3 pairs or (near-)collinear
    source points, where rotation about the line is unobservable.
    """
    if len(corr) < 3:
        raise DegenerateCorrespondences(f"need at least 3 pairs, got {len(corr)}")
    p, q = corr.p, corr.q
    pc = p.mean(axis=0)
    qc = q.mean(axis=0)
    dp = p - pc
    dq = q - qc
    var_p = (dp**2).sum() / len(p)
    if var_p < 1e-18:
        raise DegenerateCorrespondences("source points are coincident")
    cov = dq.T @ dp / len(p)
    u, d, vt = np.linalg.svd(cov)
    # collinear points: two near-zero singular values relative to the largest
    if d[1] <= 1e-9 * max(d[0], 1e-30):
        raise DegenerateCorrespondences("source points are collinear")
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    scale = float((d * np.diag(s)).sum() / var_p)
    if scale <= 0:
        raise DegenerateCorrespondences("non-positive scale solution")
    t = qc - scale * rot @ pc
    x = Sim3(scale, mat_to_quat(rot), t)
    residual = float(np.sqrt(np.mean(np.sum((x.apply(p) - q) ** 2, axis=1))))
    return x, residual


def apply_sim3_scene(scene: SplatScene, x: Sim3, frame_label: str = CANONICAL_FRAME) -> SplatScene:
    """Centers map as points, orientations pre-rotate, scales multiply by s."""
    out = scene.copy()
    out.means = x.apply(scene.means)
    out.quats = quat_mul(x.quat, scene.quats)
    out.scales = scene.scales * x.scale
    out.frame_label = frame_label
    return out


def apply_sim3_camera(camera: Camera, x: Sim3) -> Camera:
    """Conjugate the pose so renders of the transformed scene are unchanged."""
    rot = x.rotation() @ camera.pose.rotation
    t = x.scale * (x.rotation() @ camera.pose.translation) + x.translation
    return Camera(RigidTransform(rot, t), camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height)


def apply_sim3_poses(poses: list[RigidTransform], x: Sim3) -> list[RigidTransform]:
    return [
        RigidTransform(x.rotation() @ p.rotation, x.scale * (x.rotation() @ p.translation) + x.translation)
        for p in poses
    ]


def apply_sim3_mesh(mesh, x: Sim3):
    from .meshing import TriangleMesh

    return TriangleMesh(
        vertices=x.apply(mesh.vertices),
        triangles=mesh.triangles.copy(),
        colors=None if mesh.colors is None else mesh.colors.copy(),
        normals=None if mesh.normals is None else mesh.normals @ x.rotation().T,
    )
