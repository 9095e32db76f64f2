"""Core scene types: planar Gaussian splats, cameras, and render buffers.

A splat is an oriented planar Gaussian disk: center, unit quaternion
orientation (the rotation's first two columns span the disk plane, the
third is the disk normal), two in-plane standard deviations in meters,
an RGB color in [0,1]^3, and an opacity in [0,1]. A scene is a flat
array-of-struct collection of splats tagged with the coordinate frame
they live in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import quat_normalize, quat_to_mat

QUAT_NORM_TOL = 1e-6


class ValidationError(ValueError):
    """Raised when a scene/camera violates its structural invariants."""


@dataclass(frozen=True)
class GaussianPrimitive:
    """One planar Gaussian disk (convenience scalar view; scenes store arrays)."""

    center: np.ndarray  # (3,) meters
    quat: np.ndarray  # (4,) unit, scalar-first
    scales: np.ndarray  # (2,) std devs along the two in-plane axes, meters
    color: np.ndarray  # (3,) RGB in [0,1]
    opacity: float  # [0,1]

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "quat", np.asarray(self.quat, dtype=float).reshape(4))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float).reshape(2))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=float).reshape(3))
        object.__setattr__(self, "opacity", float(self.opacity))
        validate_primitive(self)

    def rotation(self) -> np.ndarray:
        return quat_to_mat(self.quat)

    def normal(self) -> np.ndarray:
        return self.rotation()[:, 2]

    def tangents(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.rotation()
        return r[:, 0], r[:, 1]


def validate_primitive(p: GaussianPrimitive, index: int | None = None) -> None:
    where = "" if index is None else f" (record {index})"
    if not np.all(np.isfinite(p.center)) or not np.all(np.isfinite(p.quat)) or not np.all(np.isfinite(p.scales)):
        raise ValidationError(f"non-finite primitive field{where}")
    if abs(np.linalg.norm(p.quat) - 1.0) > 1e-3:
        raise ValidationError(f"quaternion not unit norm{where}")
    if not np.all(p.scales > 0):
        raise ValidationError(f"non-positive scale{where}")
    if not (0.0 <= p.opacity <= 1.0):
        raise ValidationError(f"opacity {p.opacity} outside [0, 1]{where}")
    if not np.all((p.color >= 0.0) & (p.color <= 1.0)):
        raise ValidationError(f"color outside [0, 1]{where}")


@dataclass
class SplatScene:
    """A collection of splats expressed in the frame named by ``frame_label``."""

    means: np.ndarray  # (N,3)
    quats: np.ndarray  # (N,4) unit
    scales: np.ndarray  # (N,2) positive
    colors: np.ndarray  # (N,3) in [0,1]
    opacities: np.ndarray  # (N,) in [0,1]
    frame_label: str = "world"

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float)).reshape(-1, 3)
        self.quats = np.atleast_2d(np.asarray(self.quats, dtype=float)).reshape(-1, 4)
        self.scales = np.atleast_2d(np.asarray(self.scales, dtype=float)).reshape(-1, 2)
        self.colors = np.atleast_2d(np.asarray(self.colors, dtype=float)).reshape(-1, 3)
        self.opacities = np.asarray(self.opacities, dtype=float).reshape(-1)
        n = len(self.means)
        for name, arr in (("quats", self.quats), ("scales", self.scales), ("colors", self.colors), ("opacities", self.opacities)):
            if len(arr) != n:
                raise ValidationError(f"{name} has {len(arr)} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.means)

    @staticmethod
    def empty(frame_label: str = "world") -> "SplatScene":
        return SplatScene(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0), frame_label
        )

    @staticmethod
    def from_primitives(prims: list[GaussianPrimitive], frame_label: str = "world") -> "SplatScene":
        if not prims:
            return SplatScene.empty(frame_label)
        return SplatScene(
            np.stack([p.center for p in prims]),
            np.stack([p.quat for p in prims]),
            np.stack([p.scales for p in prims]),
            np.stack([p.color for p in prims]),
            np.array([p.opacity for p in prims]),
            frame_label,
        )

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.means[i], self.quats[i], self.scales[i], self.colors[i], self.opacities[i])

    def primitives(self) -> list[GaussianPrimitive]:
        return [self.primitive(i) for i in range(len(self))]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.means)):
            raise ValidationError("non-finite splat center")
        norms = np.linalg.norm(self.quats, axis=1)
        if len(self) and np.max(np.abs(norms - 1.0)) > 1e-3:
            raise ValidationError("quaternion not unit norm")
        if not np.all(self.scales > 0):
            raise ValidationError("non-positive scale")
        if len(self) and (self.opacities.min() < 0 or self.opacities.max() > 1):
            raise ValidationError("opacity outside [0, 1]")
        if len(self) and (self.colors.min() < 0 or self.colors.max() > 1):
            raise ValidationError("color outside [0, 1]")

    def normalized(self) -> "SplatScene":
        out = self.copy()
        out.quats = quat_normalize(out.quats)
        return out

    def copy(self) -> "SplatScene":
        return SplatScene(
            self.means.copy(), self.quats.copy(), self.scales.copy(), self.colors.copy(),
            self.opacities.copy(), self.frame_label,
        )

    def subset(self, idx: np.ndarray) -> "SplatScene":
        return SplatScene(
            self.means[idx], self.quats[idx], self.scales[idx], self.colors[idx], self.opacities[idx],
            self.frame_label,
        )

    @staticmethod
    def concatenate(scenes: list["SplatScene"], frame_label: str | None = None) -> "SplatScene":
        scenes = [s for s in scenes if len(s)]
        if not scenes:
            return SplatScene.empty(frame_label or "world")
        labels = {s.frame_label for s in scenes}
        if frame_label is None:
            if len(labels) > 1:
                raise ValidationError(f"cannot concatenate scenes in different frames: {sorted(labels)}")
            frame_label = scenes[0].frame_label
        return SplatScene(
            np.concatenate([s.means for s in scenes]),
            np.concatenate([s.quats for s in scenes]),
            np.concatenate([s.scales for s in scenes]),
            np.concatenate([s.colors for s in scenes]),
            np.concatenate([s.opacities for s in scenes]),
            frame_label,
        )


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. ``pose`` maps camera-frame points into the world frame."""

    pose: "RigidTransform"  # world <- camera
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> None:
        from .geometry import RigidTransform  # local import to keep module load light

        if not isinstance(self.pose, RigidTransform):
            raise ValidationError("camera pose must be a RigidTransform")
        if not np.all(np.isfinite(self.pose.rotation)) or not np.all(np.isfinite(self.pose.translation)):
            raise ValidationError("non-finite camera pose")
        if not self.pose.is_rigid():
            raise ValidationError("camera rotation not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError("principal point outside image")

    def center(self) -> np.ndarray:
        return self.pose.translation

    def scaled(self, factor: int) -> "Camera":
        """Same field of view at ``factor``x the pixel resolution."""
        return Camera(
            self.pose,
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            self.width * factor,
            self.height * factor,
        )

    def ray_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """World-frame ray origin (3,) and unit directions (H, W, 3) through pixel centers."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        gx, gy = np.meshgrid(xs, ys)
        dirs = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        world = dirs @ self.pose.rotation.T
        return self.pose.translation.copy(), world


@dataclass
class RenderBuffers:
    """Per-pixel render outputs; arrays are (H, W[, C]) row-major.

    ``normal`` is the zero vector (and ``depth`` is 0) wherever ``alpha``
    is below the validity threshold used by the renderer.
    """

    color: np.ndarray  # (H,W,3)
    alpha: np.ndarray  # (H,W)
    depth: np.ndarray  # (H,W) blended ray distance, meters
    normal: np.ndarray  # (H,W,3) unit or zero

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]


# imported at end to avoid a cycle in type annotations
from .geometry import RigidTransform  # noqa: E402  (re-export for Camera users)
