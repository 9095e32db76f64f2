"""Perspective-correct ray-splat rasterizer.

Each splat is intersected exactly: the pixel ray is cut against the disk
plane, the hit is expressed in the disk's tangent coordinates, and the
Gaussian weight falls out of the in-plane offset. Per pixel, hits are
depth-sorted and alpha-composited front to back.

The heavy path runs in torch so the reconstruction objective can reuse
the exact same forward for autograd; public entry points speak numpy.
Footprint culling (``sigma_cutoff``) and the transmittance floor are
plain config constants so reference tests can switch them off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .geometry import normalize
from .splats import Camera, GaussianPrimitive, RenderBuffers, SplatScene, ValidationError

_EPS_DENOM = 1e-9


@dataclass(frozen=True)
class RenderConfig:
    sigma_cutoff: float | None = 3.0  # footprint cull radius in splat sigmas; None disables
    transmittance_floor: float = 1e-4  # stop compositing once transmittance drops below; 0 disables
    alpha_clamp: float = 0.999  # effective-alpha ceiling, keeps transmittance positive
    alpha_valid_min: float = 1e-6  # depth/normal defined where alpha exceeds this
    normal_alpha_min: float = 0.5  # pixels entering the normal-consistency loss


def ray_splat_intersect(
    origin: np.ndarray, direction: np.ndarray, prim: GaussianPrimitive
) -> tuple[float, float, float, float] | None:
    """Intersect one ray with one splat.

    Returns (u, v, depth, weight) with (u, v) the hit in disk tangent
    coordinates and weight = exp(-(u^2/(2 s_u^2) + v^2/(2 s_v^2))), or
    None when the ray is parallel to the disk plane or hits behind the
    origin (depth <= 0).
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    direction = normalize(np.asarray(direction, dtype=float).reshape(3))
    r = prim.rotation()
    n = r[:, 2]
    denom = float(n @ direction)
    if abs(denom) < _EPS_DENOM:
        return None
    depth = float(n @ (prim.center - origin)) / denom
    if depth <= 0.0:
        return None
    hit = origin + depth * direction
    delta = hit - prim.center
    u = float(delta @ r[:, 0])
    v = float(delta @ r[:, 1])
    su, sv = prim.scales
    weight = math.exp(-0.5 * ((u / su) ** 2 + (v / sv) ** 2))
    return u, v, depth, weight


def composite(
    samples: list[tuple], transmittance_floor: float = 1e-4
) -> tuple[np.ndarray, float, float]:
    """Front-to-back alpha compositing of depth-sorted samples.

    Each sample is (color, effective_alpha) or (color, effective_alpha,
    depth); effective alphas are expected pre-clamped to [0, 0.999].
    Returns (color, alpha, depth) with depth the alpha-normalized blend
    (0 when nothing composited).
    """
    color = np.zeros(3)
    depth_acc = 0.0
    transmittance = 1.0
    for sample in samples:
        if transmittance_floor > 0 and transmittance < transmittance_floor:
            break
        c = np.asarray(sample[0], dtype=float)
        a = float(sample[1])
        z = float(sample[2]) if len(sample) > 2 else 0.0
        w = a * transmittance
        color = color + w * c
        depth_acc += w * z
        transmittance *= 1.0 - a
    alpha = 1.0 - transmittance
    depth = depth_acc / alpha if alpha > 0 else 0.0
    return color, alpha, depth


def scene_tensors(scene: SplatScene, requires_grad: bool = False) -> dict[str, torch.Tensor]:
    """Torch views of the scene parameter arrays (float64 leaves)."""
    return {
        "means": torch.tensor(scene.means, dtype=torch.float64, requires_grad=requires_grad),
        "quats": torch.tensor(scene.quats, dtype=torch.float64, requires_grad=requires_grad),
        "scales": torch.tensor(scene.scales, dtype=torch.float64, requires_grad=requires_grad),
        "colors": torch.tensor(scene.colors, dtype=torch.float64, requires_grad=requires_grad),
        "opacities": torch.tensor(scene.opacities, dtype=torch.float64, requires_grad=requires_grad),
    }


def tensors_to_scene(params: dict[str, torch.Tensor], frame_label: str) -> SplatScene:
    return SplatScene(
        params["means"].detach().numpy().copy(),
        params["quats"].detach().numpy().copy(),
        params["scales"].detach().numpy().copy(),
        params["colors"].detach().numpy().copy(),
        params["opacities"].detach().numpy().copy(),
        frame_label,
    )


def quats_to_rotmats(quats: torch.Tensor) -> torch.Tensor:
    """(N,4) scalar-first quaternions -> (N,3,3) rotations, normalizing first."""
    q = quats / torch.linalg.norm(quats, dim=-1, keepdim=True).clamp_min(1e-12)
    w, x, y, z = q.unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(-1, 3, 3)


def camera_rays(camera: Camera) -> tuple[torch.Tensor, torch.Tensor]:
    origin, dirs = camera.ray_grid()
    return (
        torch.tensor(origin, dtype=torch.float64),
        torch.tensor(dirs.reshape(-1, 3), dtype=torch.float64),
    )


def _footprint_pairs(
    params: dict[str, torch.Tensor], camera: Camera, cfg: RenderConfig, rot: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """(splat index, flat pixel index) pairs whose bboxes may overlap.

    The projected 3-sigma ellipse lies inside the projection of its
    bounding parallelogram, so the pixel bbox of the four projected
    parallelogram corners covers the footprint. Splats straddling the
    camera plane fall back to a full-image bbox.
    """
    n = params["means"].shape[0]
    w, h = camera.width, camera.height
    device = params["means"].device
    if cfg.sigma_cutoff is None:
        sid = torch.arange(n, device=device).repeat_interleave(w * h)
        pid = torch.arange(w * h, device=device).repeat(n)
        return sid, pid

    with torch.no_grad():
        c = cfg.sigma_cutoff
        means = params["means"]
        su = (params["scales"][:, 0] * c).unsqueeze(-1)
        sv = (params["scales"][:, 1] * c).unsqueeze(-1)
        tu, tv = rot[:, :, 0], rot[:, :, 1]
        corners = torch.stack(
            [
                means + su * tu + sv * tv,
                means + su * tu - sv * tv,
                means - su * tu + sv * tv,
                means - su * tu - sv * tv,
            ],
            dim=1,
        )  # (N,4,3)
        world_to_cam_r = torch.tensor(camera.pose.rotation.T, dtype=torch.float64, device=device)
        cam_t = torch.tensor(camera.pose.translation, dtype=torch.float64, device=device)
        pts_cam = (corners - cam_t) @ world_to_cam_r.T
        z = pts_cam[..., 2]
        behind_all = (z <= 1e-9).all(dim=1)
        straddle = (z <= 1e-9).any(dim=1) & ~behind_all
        zs = z.clamp_min(1e-9)
        px = camera.fx * pts_cam[..., 0] / zs + camera.cx
        py = camera.fy * pts_cam[..., 1] / zs + camera.cy
        x0 = torch.floor(px.min(dim=1).values - 1.0).long().clamp(0, w - 1)
        x1 = torch.ceil(px.max(dim=1).values + 1.0).long().clamp(0, w - 1)
        y0 = torch.floor(py.min(dim=1).values - 1.0).long().clamp(0, h - 1)
        y1 = torch.ceil(py.max(dim=1).values + 1.0).long().clamp(0, h - 1)
        # straddling disks can project anywhere; be conservative
        x0[straddle] = 0
        y0[straddle] = 0
        x1[straddle] = w - 1
        y1[straddle] = h - 1
        offscreen = (px.min(dim=1).values > w) | (px.max(dim=1).values < 0) | (
            py.min(dim=1).values > h
        ) | (py.max(dim=1).values < 0)
        keep = ~behind_all & ~(offscreen & ~straddle)
        idx = torch.nonzero(keep, as_tuple=False).squeeze(-1)
        if idx.numel() == 0:
            empty = torch.zeros(0, dtype=torch.long, device=device)
            return empty, empty
        bw = x1[idx] - x0[idx] + 1
        bh = y1[idx] - y0[idx] + 1
        area = bw * bh
        sid = idx.repeat_interleave(area)
        base = torch.cumsum(area, 0) - area
        off = torch.arange(int(area.sum()), device=device) - base.repeat_interleave(area)
        bw_rep = bw.repeat_interleave(area)
        ox = off % bw_rep
        oy = off // bw_rep
        px_i = x0[idx].repeat_interleave(area) + ox
        py_i = y0[idx].repeat_interleave(area) + oy
        pid = py_i * w + px_i
    return sid, pid


def render_torch(
    params: dict[str, torch.Tensor],
    camera: Camera,
    cfg: RenderConfig,
    with_distortion: bool = False,
) -> dict[str, torch.Tensor]:
    """Differentiable render; buffers are flat (H*W, ...) float64 tensors.

    Returns color, alpha, depth_sum (unnormalized), depth (normalized),
    normal_sum (unnormalized blended camera-facing splat normals) and,
    on request, the per-pixel pairwise depth-distortion map.
    """
    h, w = camera.height, camera.width
    npix = h * w
    device = params["means"].device
    out = {
        "color": torch.zeros((npix, 3), dtype=torch.float64, device=device),
        "alpha": torch.zeros(npix, dtype=torch.float64, device=device),
        "depth_sum": torch.zeros(npix, dtype=torch.float64, device=device),
        "normal_sum": torch.zeros((npix, 3), dtype=torch.float64, device=device),
    }
    if with_distortion:
        out["distortion"] = torch.zeros(npix, dtype=torch.float64, device=device)

    rot = quats_to_rotmats(params["quats"])
    if params["means"].shape[0] == 0:
        out["depth"] = out["depth_sum"].clone()
        return out
    sid, pid = _footprint_pairs(params, camera, cfg, rot)
    origin, dirs = camera_rays(camera)
    origin = origin.to(device)
    dirs = dirs.to(device)

    if sid.numel():
        mu = params["means"][sid]
        nrm = rot[:, :, 2][sid]
        d = dirs[pid]
        denom = (nrm * d).sum(-1)
        valid = denom.abs() > _EPS_DENOM
        safe_denom = torch.where(valid, denom, torch.ones_like(denom))
        tval = ((mu - origin) * nrm).sum(-1) / safe_denom
        valid = valid & (tval > 0)
        hit = origin + tval.unsqueeze(-1) * d
        delta = hit - mu
        u = (delta * rot[:, :, 0][sid]).sum(-1)
        v = (delta * rot[:, :, 1][sid]).sum(-1)
        su = params["scales"][sid, 0]
        sv = params["scales"][sid, 1]
        r2 = (u / su) ** 2 + (v / sv) ** 2
        if cfg.sigma_cutoff is not None:
            valid = valid & (r2 <= cfg.sigma_cutoff**2)
        keep = torch.nonzero(valid, as_tuple=False).squeeze(-1)
        if keep.numel():
            sid_k = sid[keep]
            pid_k = pid[keep]
            t_k = tval[keep]
            g = torch.exp(-0.5 * r2[keep])
            ahat = (params["opacities"][sid_k] * g).clamp(max=cfg.alpha_clamp)
            # camera-facing splat normals
            n_k = nrm[keep]
            flip = torch.where((n_k * d[keep]).sum(-1, keepdim=True) > 0, -1.0, 1.0)
            n_k = n_k * flip
            c_k = params["colors"][sid_k]

            # group by pixel, ascending depth (stable two-pass sort)
            order = torch.argsort(t_k, stable=True)
            order = order[torch.argsort(pid_k[order], stable=True)]
            pid_s = pid_k[order]
            t_s = t_k[order]
            ahat_s = ahat[order]
            c_s = c_k[order]
            n_s = n_k[order]

            starts = torch.ones_like(pid_s, dtype=torch.bool)
            starts[1:] = pid_s[1:] != pid_s[:-1]
            seg = torch.cumsum(starts.long(), 0) - 1

            log1m = torch.log1p(-ahat_s)
            cum = torch.cumsum(log1m, 0)
            excl = cum - log1m
            trans_log = excl - excl[starts][seg]
            transmittance = torch.exp(trans_log)
            if cfg.transmittance_floor > 0:
                live = transmittance >= cfg.transmittance_floor
            else:
                live = torch.ones_like(transmittance, dtype=torch.bool)
            wgt = ahat_s * transmittance * live

            out["color"].index_add_(0, pid_s, wgt.unsqueeze(-1) * c_s)
            out["alpha"].index_add_(0, pid_s, wgt)
            out["depth_sum"].index_add_(0, pid_s, wgt * t_s)
            out["normal_sum"].index_add_(0, pid_s, wgt.unsqueeze(-1) * n_s)

            if with_distortion:
                cw = torch.cumsum(wgt, 0)
                w_excl = cw - wgt
                w_excl = w_excl - w_excl[starts][seg]
                cwz = torch.cumsum(wgt * t_s, 0)
                wz_excl = cwz - wgt * t_s
                wz_excl = wz_excl - wz_excl[starts][seg]
                contrib = 2.0 * wgt * (t_s * w_excl - wz_excl)
                out["distortion"].index_add_(0, pid_s, contrib)

    alpha = out["alpha"]
    out["depth"] = torch.where(
        alpha > cfg.alpha_valid_min, out["depth_sum"] / alpha.clamp_min(1e-300), torch.zeros_like(alpha)
    )
    return out


def render(scene: SplatScene, camera: Camera, cfg: RenderConfig | None = None) -> RenderBuffers:
    """Rasterize the scene from the camera into color/alpha/depth/normal buffers."""
    cfg = cfg or RenderConfig()
    if len(scene) == 0:
        raise ValidationError("cannot render an empty scene")
    camera.validate()
    with torch.no_grad():
        raw = render_torch(scene_tensors(scene), camera, cfg)
    h, w = camera.height, camera.width
    alpha = raw["alpha"].numpy().reshape(h, w)
    color = raw["color"].numpy().reshape(h, w, 3)
    depth = raw["depth"].numpy().reshape(h, w)
    nsum = raw["normal_sum"].numpy().reshape(h, w, 3)
    norms = np.linalg.norm(nsum, axis=-1, keepdims=True)
    valid = (alpha > cfg.alpha_valid_min)[..., None] & (norms > 1e-12)
    normal = np.where(valid, nsum / np.maximum(norms, 1e-12), 0.0)
    return RenderBuffers(color=color, alpha=alpha, depth=depth, normal=normal)
