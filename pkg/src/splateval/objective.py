"""Training objective for splat-scene fitting.

Total loss over posed views = sum of per-view mean squared pixel error,
plus two geometry regularizers weighted by lambda_dist / lambda_norm:

* depth distortion: per ray, sum over sample pairs of w_i w_j |z_i - z_j|
  (w are the compositing weights), pulling each ray's splats together;
* normal consistency: per well-covered pixel, 1 - n_splat . n_depth,
  where n_splat is the alpha-blended splat normal and n_depth the
  normalized cross-product gradient of the rendered depth map.

Gradients come from reverse-mode autodiff through the exact forward
(not finite differences); tests check them against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .render import RenderConfig, camera_rays, render_torch, scene_tensors
from .splats import Camera, SplatScene, ValidationError

PARAM_NAMES = ("means", "quats", "scales", "colors", "opacities")


@dataclass
class ReconConfig:
    iterations: int = 500
    lr_means: float = 1e-3
    lr_quats: float = 1e-3
    lr_scales: float = 1e-3
    lr_colors: float = 2e-2
    lr_opacities: float = 1e-2
    lambda_dist: float = 1e-3  # established on the synthetic-plane fixture
    lambda_norm: float = 1e-4  # (raw regularizer sums are ~1e3 x photometric)
    densify_interval: int = 0  # 0 disables densify/prune
    densify_grad_threshold: float = 5e-4
    prune_opacity_threshold: float = 0.005
    min_scale: float = 1e-4
    seed: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for name in ("lr_means", "lr_quats", "lr_scales", "lr_colors", "lr_opacities"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_dist < 0 or self.lambda_norm < 0:
            raise ValueError("regularizer weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    photometric: float
    distortion: float
    normal: float
    total: float

    def check(self, lambda_dist: float, lambda_norm: float) -> None:
        expect = self.photometric + lambda_dist * self.distortion + lambda_norm * self.normal
        if abs(expect - self.total) > 1e-9 * max(1.0, abs(self.total)):
            raise AssertionError("loss breakdown does not sum to total")


def _check_views(views: list[tuple[np.ndarray, Camera]]) -> None:
    if not views:
        raise ValidationError("need at least one view")
    for img, cam in views:
        if img.shape != (cam.height, cam.width, 3):
            raise ValidationError(
                f"image shape {img.shape} does not match camera resolution {(cam.height, cam.width, 3)}"
            )


def _normal_loss_terms(
    raw: dict[str, torch.Tensor], camera: Camera, cfg: RenderConfig
) -> torch.Tensor:
    """Sum over valid pixels of 1 - n_splat . n_depth for one view."""
    h, w = camera.height, camera.width
    origin, dirs = camera_rays(camera)
    alpha = raw["alpha"].reshape(h, w)
    depth = raw["depth"].reshape(h, w)
    points = origin + depth.unsqueeze(-1) * dirs.reshape(h, w, 3)

    covered = alpha > cfg.normal_alpha_min
    # valid interior pixels: themselves and all 4 neighbours covered
    ok = covered.clone()
    ok[1:-1, 1:-1] &= covered[:-2, 1:-1] & covered[2:, 1:-1] & covered[1:-1, :-2] & covered[1:-1, 2:]
    inner = torch.zeros_like(ok)
    inner[1:-1, 1:-1] = ok[1:-1, 1:-1]
    if not bool(inner.any()):
        return torch.zeros((), dtype=torch.float64)

    dx = points[1:-1, 2:] - points[1:-1, :-2]
    dy = points[2:, 1:-1] - points[:-2, 1:-1]
    n_depth = torch.cross(dx, dy, dim=-1)
    n_depth = n_depth / torch.linalg.norm(n_depth, dim=-1, keepdim=True).clamp_min(1e-12)
    view_dirs = dirs.reshape(h, w, 3)[1:-1, 1:-1]
    sign = torch.where((n_depth * view_dirs).sum(-1, keepdim=True) > 0, -1.0, 1.0)
    n_depth = n_depth * sign

    n_splat = raw["normal_sum"].reshape(h, w, 3)[1:-1, 1:-1]
    n_splat = n_splat / torch.linalg.norm(n_splat, dim=-1, keepdim=True).clamp_min(1e-12)

    mask = inner[1:-1, 1:-1]
    per_pixel = 1.0 - (n_splat * n_depth).sum(-1)
    return (per_pixel * mask).sum()


def objective_torch(
    params: dict[str, torch.Tensor],
    views: list[tuple[np.ndarray, Camera]],
    lambda_dist: float,
    lambda_norm: float,
    cfg: RenderConfig,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Differentiable total loss; returns (total, parts)."""
    photometric = torch.zeros((), dtype=torch.float64)
    distortion = torch.zeros((), dtype=torch.float64)
    normal = torch.zeros((), dtype=torch.float64)
    want_dist = lambda_dist != 0.0
    for img, cam in views:
        target = torch.tensor(np.asarray(img, dtype=float), dtype=torch.float64).reshape(-1, 3)
        raw = render_torch(params, cam, cfg, with_distortion=want_dist)
        photometric = photometric + ((raw["color"] - target) ** 2).mean()
        if want_dist:
            distortion = distortion + raw["distortion"].sum()
        if lambda_norm != 0.0:
            normal = normal + _normal_loss_terms(raw, cam, cfg)
    total = photometric + lambda_dist * distortion + lambda_norm * normal
    return total, {"photometric": photometric, "distortion": distortion, "normal": normal}


def photometric_objective(
    scene: SplatScene, views: list[tuple[np.ndarray, Camera]], config: ReconConfig
) -> LossBreakdown:
    """Evaluate the full training objective for a scene against posed images."""
    _check_views(views)
    with torch.no_grad():
        # distortion/normal parts are reported even when their weight is zero
        total, parts = objective_torch(
            scene_tensors(scene), views, max(config.lambda_dist, 1e-300), max(config.lambda_norm, 1e-300), config.render
        )
    photometric = float(parts["photometric"])
    # the regularizer sums are nonnegative in exact arithmetic; round-off
    # near zero can dip a hair below
    distortion = max(0.0, float(parts["distortion"]))
    normal = max(0.0, float(parts["normal"]))
    return LossBreakdown(
        photometric=photometric,
        distortion=distortion,
        normal=normal,
        total=photometric + config.lambda_dist * distortion + config.lambda_norm * normal,
    )


def objective_with_gradients(
    scene: SplatScene, views: list[tuple[np.ndarray, Camera]], config: ReconConfig
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss plus d(total)/d(param) for every raw scene parameter array."""
    _check_views(views)
    params = scene_tensors(scene, requires_grad=True)
    total, parts = objective_torch(params, views, config.lambda_dist, config.lambda_norm, config.render)
    total.backward()
    grads = {
        name: (params[name].grad.numpy().copy() if params[name].grad is not None else np.zeros(params[name].shape))
        for name in PARAM_NAMES
    }
    breakdown = LossBreakdown(
        photometric=float(parts["photometric"].detach()),
        distortion=float(parts["distortion"].detach()),
        normal=float(parts["normal"].detach()),
        total=float(total.detach()),
    )
    return breakdown, grads
