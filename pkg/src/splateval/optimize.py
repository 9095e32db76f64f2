"""Adaptive first-order splat-scene fitting.

Per-parameter-group Adam (bias-corrected moving averages of gradient and
squared gradient) on the full objective, with a projection step after
each update keeping the scene valid: quaternions renormalized, scales
floored, colors and opacities clamped to [0, 1]. An optional
densify/prune pass (off by default) splits high-gradient splats and
drops near-transparent ones.
"""

from __future__ import annotations

import numpy as np
import torch

from .objective import LossBreakdown, ReconConfig, _check_views, objective_torch
from .render import scene_tensors, tensors_to_scene
from .splats import Camera, SplatScene


class OptimizationDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss at iteration {iteration}: {value}")
        self.iteration = iteration


def _project(params: dict[str, torch.Tensor], cfg: ReconConfig) -> None:
    with torch.no_grad():
        params["quats"].data /= torch.linalg.norm(params["quats"].data, dim=-1, keepdim=True).clamp_min(1e-12)
        params["scales"].data.clamp_(min=cfg.min_scale)
        params["colors"].data.clamp_(0.0, 1.0)
        params["opacities"].data.clamp_(0.0, 1.0)


def _densify_and_prune(
    params: dict[str, torch.Tensor], grad_accum: torch.Tensor, cfg: ReconConfig
) -> tuple[dict[str, torch.Tensor], bool]:
    """Split splats with large accumulated center gradients, drop faded ones."""
    with torch.no_grad():
        keep = params["opacities"].data > cfg.prune_opacity_threshold
        split = (grad_accum > cfg.densify_grad_threshold) & keep
        changed = bool((~keep).any() or split.any())
        if not changed:
            return params, False
        survivors = keep & ~split
        new = {k: v.data[survivors].clone() for k, v in params.items()}
        if split.any():
            from .render import quats_to_rotmats

            idx = split.nonzero(as_tuple=True)[0]
            src = {k: params[k].data[idx] for k in params}
            rot = quats_to_rotmats(src["quats"])
            major = torch.where(
                (src["scales"][:, 0] >= src["scales"][:, 1]).unsqueeze(-1), rot[:, :, 0], rot[:, :, 1]
            )
            step = src["scales"].max(dim=1).values.unsqueeze(-1) * 0.5
            halves = []
            for sign in (1.0, -1.0):  # deterministic split along the major axis
                h = {k: v.clone() for k, v in src.items()}
                h["means"] = src["means"] + sign * step * major
                h["scales"] = src["scales"] / 1.6
                halves.append(h)
            new = {k: torch.cat([new[k], halves[0][k], halves[1][k]]) for k in params}
        out = {k: v.clone().requires_grad_(True) for k, v in new.items()}
        return out, True


def optimize_scene(
    views: list[tuple[np.ndarray, Camera]], init: SplatScene, config: ReconConfig
) -> tuple[SplatScene, list[LossBreakdown]]:
    """Fit ``init`` to the views; returns the refined scene and loss history."""
    _check_views(views)
    init.validate()
    torch.manual_seed(config.seed)
    params = scene_tensors(init, requires_grad=True)
    groups = [
        {"params": [params["means"]], "lr": config.lr_means},
        {"params": [params["quats"]], "lr": config.lr_quats},
        {"params": [params["scales"]], "lr": config.lr_scales},
        {"params": [params["colors"]], "lr": config.lr_colors},
        {"params": [params["opacities"]], "lr": config.lr_opacities},
    ]
    opt = torch.optim.Adam(groups)
    history: list[LossBreakdown] = []
    grad_accum = torch.zeros(len(init), dtype=torch.float64)

    for it in range(config.iterations):
        opt.zero_grad()
        total, parts = objective_torch(params, views, config.lambda_dist, config.lambda_norm, config.render)
        value = float(total.detach())
        if not np.isfinite(value):
            raise OptimizationDiverged(it, value)
        total.backward()
        history.append(
            LossBreakdown(
                photometric=float(parts["photometric"].detach()),
                distortion=float(parts["distortion"].detach()),
                normal=float(parts["normal"].detach()),
                total=value,
            )
        )
        opt.step()
        _project(params, config)

        if config.densify_interval > 0:
            if params["means"].grad is not None:
                grad_accum += params["means"].grad.detach().norm(dim=-1)
            if (it + 1) % config.densify_interval == 0:
                params, changed = _densify_and_prune(params, grad_accum / config.densify_interval, config)
                if changed:
                    groups = [
                        {"params": [params["means"]], "lr": config.lr_means},
                        {"params": [params["quats"]], "lr": config.lr_quats},
                        {"params": [params["scales"]], "lr": config.lr_scales},
                        {"params": [params["colors"]], "lr": config.lr_colors},
                        {"params": [params["opacities"]], "lr": config.lr_opacities},
                    ]
                    opt = torch.optim.Adam(groups)
                grad_accum = torch.zeros(params["means"].shape[0], dtype=torch.float64)

    return tensors_to_scene(params, init.frame_label), history
