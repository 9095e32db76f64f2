import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")


def random_scene(rng: np.random.Generator, n: int, *, frame="world", spread=0.4,
                 opacity_range=(0.2, 0.95), scale_range=(0.02, 0.12)):
    """Valid random scene in front of the z-looking default camera."""
    from splateval.geometry import quat_normalize
    from splateval.splats import SplatScene

    means = rng.uniform(-spread, spread, size=(n, 3))
    means[:, 2] += 1.5
    quats = quat_normalize(rng.normal(size=(n, 4)))
    scales = rng.uniform(*scale_range, size=(n, 2))
    colors = rng.uniform(0, 1, size=(n, 3))
    opac = rng.uniform(*opacity_range, size=n)
    return SplatScene(means, quats, scales, colors, opac, frame)


def default_camera(width=64, height=64, fov_scale=1.0):
    from splateval.geometry import RigidTransform
    from splateval.splats import Camera

    f = 0.5 * width * fov_scale
    return Camera(RigidTransform.identity(), f, f, width / 2, height / 2, width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
