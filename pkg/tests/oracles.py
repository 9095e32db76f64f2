"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain per-pixel numpy with no
culling, no early termination, and no shared code with the production
renderer or metrics, so the two routes stay independent.
"""

from __future__ import annotations

import math

import numpy as np

from splateval.geometry import quat_to_mat
from splateval.splats import Camera, SplatScene


def brute_force_render(scene: SplatScene, camera: Camera, alpha_clamp: float = 0.999):
    """Per-pixel, all-splats reference rasterizer (no culling/termination).

    Straight from the formulas: for every pixel, intersect every splat's
    ray-plane, weight by the in-plane Gaussian, sort hits by depth, and
    composite sequentially. The per-splat arithmetic uses plain numpy
    over the splat axis; nothing is shared with the production renderer.
    """
    origin, dirs = camera.ray_grid()
    h, w = camera.height, camera.width
    color = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    depth = np.zeros((h, w))
    n_splat = len(scene)
    rots = np.stack([quat_to_mat(q) for q in scene.quats]) if n_splat else np.zeros((0, 3, 3))
    normals = rots[:, :, 2]
    tu = rots[:, :, 0]
    tv = rots[:, :, 1]
    for yi in range(h):
        for xi in range(w):
            d = dirs[yi, xi]
            denom = normals @ d
            usable = np.abs(denom) >= 1e-9
            t = np.where(
                usable, ((scene.means - origin) * normals).sum(axis=1) / np.where(usable, denom, 1.0), np.inf
            )
            usable &= t > 0
            p = origin + t[:, None] * d
            delta = p - scene.means
            du = (delta * tu).sum(axis=1)
            dv = (delta * tv).sum(axis=1)
            g = np.exp(-0.5 * ((du / scene.scales[:, 0]) ** 2 + (dv / scene.scales[:, 1]) ** 2))
            a = np.minimum(scene.opacities * g, alpha_clamp)
            hits = sorted(
                (float(t[j]), float(a[j]), scene.colors[j]) for j in range(n_splat) if usable[j]
            )
            trans = 1.0
            csum = np.zeros(3)
            zsum = 0.0
            for tj, aj, cj in hits:
                wgt = aj * trans
                csum += wgt * cj
                zsum += wgt * tj
                trans *= 1.0 - aj
            color[yi, xi] = csum
            alpha[yi, xi] = 1.0 - trans
            depth[yi, xi] = zsum / alpha[yi, xi] if alpha[yi, xi] > 0 else 0.0
    return color, alpha, depth


def pearson_reference(x, y) -> float:
    """Straight-from-the-formula Pearson correlation (centered dot / norms)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = x - x.mean()
    ym = y - y.mean()
    return float((xm * ym).sum() / (math.sqrt((xm**2).sum()) * math.sqrt((ym**2).sum())))


def mmrv_reference(real, sim) -> float:
    """Double-loop rank-violation reference, literal indicator semantics."""
    real = np.asarray(real, dtype=float)
    sim = np.asarray(sim, dtype=float)
    n = len(real)
    total = 0.0
    for i in range(n):
        worst = 0.0
        for j in range(n):
            if (sim[i] < sim[j]) != (real[i] < real[j]):
                worst = max(worst, abs(real[i] - real[j]))
        total += worst
    return total / n
