"""Truncated signed distance field fusion from rendered splat depth.

For every camera we rasterize a depth map, then update each voxel that
projects into the view with a weighted running average of the clamped
signed distance along the pixel ray (positive in observed free space,
negative behind the surface). Voxels more than the truncation distance
behind the surface are left untouched, the standard fusion rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .render import RenderConfig, render
from .splats import Camera, SplatScene


@dataclass
class TSDFVolume:
    origin: np.ndarray  # (3,) world position of voxel (0,0,0) center
    voxel_size: float
    sdf: np.ndarray  # (nx,ny,nz) clamped signed distances
    weight: np.ndarray  # (nx,ny,nz) observation weights; 0 == unobserved
    truncation: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.truncation <= 0:
            raise ValueError("truncation must be positive")
        if self.sdf.shape != self.weight.shape or self.sdf.ndim != 3:
            raise ValueError("sdf/weight must be matching 3-d arrays")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.sdf.shape

    @staticmethod
    def empty(bounds_min, bounds_max, voxel_size: float, truncation: float) -> "TSDFVolume":
        bounds_min = np.asarray(bounds_min, dtype=float)
        bounds_max = np.asarray(bounds_max, dtype=float)
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if np.any(bounds_max - bounds_min <= 0):
            raise ValueError("bounds must have positive extent")
        dims = np.maximum(np.ceil((bounds_max - bounds_min) / voxel_size).astype(int) + 1, 2)
        return TSDFVolume(
            origin=bounds_min,
            voxel_size=voxel_size,
            sdf=np.zeros(tuple(dims)),
            weight=np.zeros(tuple(dims)),
            truncation=truncation,
        )

    def voxel_centers(self) -> np.ndarray:
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin + idx * self.voxel_size

    def integrate_depth(self, depth: np.ndarray, alpha: np.ndarray, camera: Camera, min_alpha: float = 0.5) -> None:
        """Fuse one rendered depth map (ray-distance convention) into the volume."""
        centers = self.voxel_centers()
        cam_inv = camera.pose.inverse()
        local = cam_inv.apply(centers)
        z = local[:, 2]
        in_front = z > 1e-9
        px = np.full(len(centers), -1.0)
        py = np.full(len(centers), -1.0)
        px[in_front] = camera.fx * local[in_front, 0] / z[in_front] + camera.cx
        py[in_front] = camera.fy * local[in_front, 1] / z[in_front] + camera.cy
        xi = np.floor(px - 0.5).astype(int)
        yi = np.floor(py - 0.5).astype(int)
        visible = in_front & (xi >= 0) & (xi < camera.width) & (yi >= 0) & (yi < camera.height)
        if not visible.any():
            return
        xi_v, yi_v = xi[visible], yi[visible]
        d_pix = depth[yi_v, xi_v]
        a_pix = alpha[yi_v, xi_v]
        d_vox = np.linalg.norm(centers[visible] - camera.center(), axis=1)
        obs = d_pix - d_vox
        valid = (a_pix >= min_alpha) & (d_pix > 0) & (obs >= -self.truncation)
        if not valid.any():
            return
        flat_idx = np.flatnonzero(visible)[valid]
        obs = np.clip(obs[valid], -self.truncation, self.truncation)
        sdf_flat = self.sdf.reshape(-1)
        w_flat = self.weight.reshape(-1)
        w_old = w_flat[flat_idx]
        sdf_flat[flat_idx] = (sdf_flat[flat_idx] * w_old + obs) / (w_old + 1.0)
        w_flat[flat_idx] = w_old + 1.0

    def save_debug_dump(self, path) -> None:
        """Raw float32 grid plus a sidecar text header."""
        path = Path(path)
        self.sdf.astype("<f4").tofile(path)
        header = path.with_suffix(path.suffix + ".hdr")
        nx, ny, nz = self.dims
        origin = " ".join(repr(float(v)) for v in self.origin)
        header.write_text(
            "tsdf-dump-1\n"
            f"origin {origin}\n"
            f"voxel_size {float(self.voxel_size)!r}\n"
            f"dims {nx} {ny} {nz}\n"
            f"truncation {float(self.truncation)!r}\n"
        )


def fuse_tsdf(
    scene: SplatScene,
    cameras: list[Camera],
    truncation: float,
    voxel_size: float,
    bounds_min,
    bounds_max,
    render_cfg: RenderConfig | None = None,
    min_alpha: float = 0.5,
) -> TSDFVolume:
    """Render depth from each camera and fuse into a fresh volume."""
    volume = TSDFVolume.empty(bounds_min, bounds_max, voxel_size, truncation)
    cfg = render_cfg or RenderConfig()
    for cam in cameras:
        buf = render(scene, cam, cfg)
        volume.integrate_depth(buf.depth, buf.alpha, cam, min_alpha=min_alpha)
    return volume
