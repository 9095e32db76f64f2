import numpy as np
import pytest
import torch

from splateval.objective import (
    LossBreakdown,
    ReconConfig,
    objective_torch,
    objective_with_gradients,
    photometric_objective,
)
from splateval.render import RenderConfig, render, scene_tensors
from splateval.splats import SplatScene, ValidationError

from conftest import default_camera, random_scene

# continuous objective for gradient checks: no hard footprint/transmittance cuts
GRAD_CFG = RenderConfig(sigma_cutoff=None, transmittance_floor=0.0)


def grad_instance(rng, n_splats=3, n_views=2, size=16):
    """Random scene + views rendered from a nearby perturbed scene."""
    scene = random_scene(rng, n_splats, opacity_range=(0.2, 0.9), scale_range=(0.08, 0.25))
    cams = []
    for k in range(n_views):
        cam = default_camera(size, size)
        cams.append(cam)
    target_scene = scene.copy()
    target_scene.means = target_scene.means + rng.normal(0, 0.02, target_scene.means.shape)
    views = [(render(target_scene, cam, GRAD_CFG).color, cam) for cam in cams]
    return scene, views


def fd_gradient(scene, views, config, name, index, h=1e-4):
    arrs = {
        "means": scene.means, "quats": scene.quats, "scales": scene.scales,
        "colors": scene.colors, "opacities": scene.opacities,
    }
    vals = []
    for sign in (1.0, -1.0):
        pert = scene.copy()
        arr = getattr(pert, name).copy()
        arr.reshape(-1)[index] += sign * h
        setattr(pert, name, arr)
        with torch.no_grad():
            total, _ = objective_torch(
                scene_tensors(pert), views, config.lambda_dist, config.lambda_norm, config.render
            )
        vals.append(float(total))
    return (vals[0] - vals[1]) / (2 * h)


def assert_grads_match(scene, views, config, rtol=0.02, atol=1e-6):
    _, grads = objective_with_gradients(scene, views, config)
    for name in grads:
        flat = grads[name].reshape(-1)
        for index in range(flat.size):
            fd = fd_gradient(scene, views, config, name, index)
            err = abs(flat[index] - fd)
            assert err <= max(atol, rtol * abs(fd)), (
                f"{name}[{index}]: analytic {flat[index]:.8g} vs fd {fd:.8g}"
            )


class TestPhotometric:
    def test_self_consistency_zero(self, rng):
        scene = random_scene(rng, 6)
        cam = default_camera(24, 24)
        cfg = ReconConfig(render=GRAD_CFG)
        views = [(render(scene, cam, GRAD_CFG).color, cam)]
        out = photometric_objective(scene, views, cfg)
        assert out.photometric < 1e-18

    def test_breakdown_sums(self, rng):
        scene, views = grad_instance(rng)
        cfg = ReconConfig(lambda_dist=0.7, lambda_norm=0.3, render=GRAD_CFG)
        out = photometric_objective(scene, views, cfg)
        out.check(cfg.lambda_dist, cfg.lambda_norm)
        assert out.photometric >= 0 and out.distortion >= 0

    def test_single_splat_no_distortion(self):
        scene = random_scene(np.random.default_rng(3), 1)
        cam = default_camera(16, 16)
        cfg = ReconConfig(lambda_dist=1.0, lambda_norm=0.0, render=GRAD_CFG)
        views = [(np.zeros((16, 16, 3)), cam)]
        out = photometric_objective(scene, views, cfg)
        assert out.distortion == pytest.approx(0.0, abs=1e-15)

    def test_mismatched_dims_error(self, rng):
        scene = random_scene(rng, 2)
        cam = default_camera(16, 16)
        with pytest.raises(ValidationError):
            photometric_objective(scene, [(np.zeros((8, 8, 3)), cam)], ReconConfig())

    def test_color_perturbation_matches_recompute(self, rng):
        scene, views = grad_instance(rng, n_splats=4)
        cfg = ReconConfig(lambda_dist=0.0, lambda_norm=0.0, render=GRAD_CFG)
        base = photometric_objective(scene, views, cfg).photometric
        pert = scene.copy()
        pert.colors = pert.colors.copy()
        pert.colors[1, 0] = min(1.0, pert.colors[1, 0] + 0.05)
        bumped = photometric_objective(pert, views, cfg).photometric
        # brute-force recomputation from scratch agrees with the increase
        direct = photometric_objective(pert, views, cfg).photometric
        assert bumped == pytest.approx(direct, abs=1e-8)
        assert bumped != pytest.approx(base)


class TestGradients:
    def test_photometric_only(self, rng):
        scene, views = grad_instance(rng)
        assert_grads_match(scene, views, ReconConfig(lambda_dist=0.0, lambda_norm=0.0, render=GRAD_CFG))

    def test_full_objective(self, rng):
        scene, views = grad_instance(rng)
        assert_grads_match(scene, views, ReconConfig(lambda_dist=0.5, lambda_norm=0.05, render=GRAD_CFG))


class TestOptimize:
    def test_ground_truth_is_fixed_point(self, rng):
        from splateval.optimize import optimize_scene

        scene = random_scene(rng, 5)
        cam = default_camera(16, 16)
        views = [(render(scene, cam, GRAD_CFG).color, cam)]
        cfg = ReconConfig(iterations=100, lambda_dist=0.0, lambda_norm=0.0, render=GRAD_CFG)
        _, history = optimize_scene(views, scene, cfg)
        assert history[0].photometric < 1e-16
        assert all(h.photometric < 1e-6 for h in history)

    def test_divergence_reports_iteration(self, rng):
        from splateval.optimize import OptimizationDiverged, optimize_scene

        scene = random_scene(rng, 2)
        bad = scene.copy()
        bad.means = bad.means.copy()
        cam = default_camera(8, 8)
        views = [(np.full((8, 8, 3), np.nan), cam)]
        with pytest.raises(OptimizationDiverged) as exc:
            optimize_scene(views, bad, ReconConfig(iterations=3, render=GRAD_CFG))
        assert exc.value.iteration == 0
