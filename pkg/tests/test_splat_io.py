import struct

import numpy as np
import pytest

from splateval.geometry import quat_normalize
from splateval.splat_io import (
    MAGIC,
    SplatFormatError,
    import_splat_pointcloud,
    load_board_coords,
    load_cameras,
    load_splats,
    save_cameras,
    save_splats,
)
from splateval.splats import SplatScene

from conftest import default_camera


def f32_scene(rng, n):
    """Random valid scene with float32-representable fields (format precision)."""
    means = rng.uniform(-1, 1, (n, 3)).astype(np.float32)
    quats = quat_normalize(rng.normal(size=(n, 4))).astype(np.float32)
    scales = rng.uniform(0.01, 0.2, (n, 2)).astype(np.float32)
    colors = rng.uniform(0, 1, (n, 3)).astype(np.float32)
    opac = rng.uniform(0, 1, n).astype(np.float32)
    return SplatScene(means, quats, scales, colors, opac, "bench")


def test_round_trip_identity(rng):
    scene = f32_scene(rng, 1000)
    out = load_splats(save_splats(scene))
    assert out.frame_label == "bench"
    for a, b in [(scene.means, out.means), (scene.quats, out.quats), (scene.scales, out.scales),
                 (scene.colors, out.colors), (scene.opacities, out.opacities)]:
        assert np.array_equal(a, b)


def test_empty_scene_round_trip():
    data = save_splats(SplatScene.empty("F0"))
    out = load_splats(data)
    assert len(out) == 0 and out.frame_label == "F0"


def test_bad_opacity_names_record(rng):
    scene = f32_scene(rng, 5)
    data = bytearray(save_splats(scene))
    # header: 5 magic + 8 count + 4 label len + 5 label
    rec_base = 5 + 8 + 4 + len("bench")
    off = rec_base + (3 * 14 + 12) * 4  # record 3, opacity slot
    data[off : off + 4] = struct.pack("<f", 1.5)
    with pytest.raises(SplatFormatError, match="record 3"):
        load_splats(bytes(data))


def test_truncated_file(rng):
    data = save_splats(f32_scene(rng, 4))
    with pytest.raises(SplatFormatError, match="truncated"):
        load_splats(data[:-8])


def test_bad_magic():
    with pytest.raises(SplatFormatError, match="magic"):
        load_splats(b"NOPE!" + b"\x00" * 32)
    assert MAGIC == b"PSPL1"


def test_nonfinite_named(rng):
    scene = f32_scene(rng, 3)
    data = bytearray(save_splats(scene))
    rec_base = 5 + 8 + 4 + len("bench")
    data[rec_base : rec_base + 4] = struct.pack("<f", float("nan"))
    with pytest.raises(SplatFormatError, match="record 0"):
        load_splats(bytes(data))


def test_ply_ascii_import():
    header = (
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n"
        "property float scale_0\nproperty float scale_1\n"
        "property float red\nproperty float green\nproperty float blue\n"
        "property float opacity\nend_header\n"
    )
    body = "0 0 1 1 0 0 0 0.05 0.04 0.9 0.1 0.1 1.0\n0.2 0 1 1 0 0 0 0.03 0.03 0.1 0.9 0.1 0.5\n"
    scene = import_splat_pointcloud((header + body).encode())
    assert len(scene) == 2
    assert scene.scales.shape == (2, 2)
    assert scene.opacities[1] == pytest.approx(0.5)


def test_ply_binary_import_with_third_scale(rng):
    n = 3
    dt = np.dtype(
        [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
         ("rot_0", "<f4"), ("rot_1", "<f4"), ("rot_2", "<f4"), ("rot_3", "<f4"),
         ("scale_0", "<f4"), ("scale_1", "<f4"), ("scale_2", "<f4"),
         ("red", "<u1"), ("green", "<u1"), ("blue", "<u1"), ("opacity", "<f4")]
    )
    arr = np.zeros(n, dtype=dt)
    arr["x"] = [0, 0.1, 0.2]
    arr["z"] = 1.0
    arr["rot_0"] = 1.0
    arr["scale_0"] = 0.05
    arr["scale_1"] = 0.04
    arr["scale_2"] = 5e-5  # planar: tolerated and dropped
    arr["red"] = 200
    arr["opacity"] = 0.7
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
        + "".join(
            f"property {'uchar' if arr.dtype[name].kind == 'u' else 'float'} {name}\n" for name in dt.names
        )
        + "end_header\n"
    )
    scene = import_splat_pointcloud(header.encode() + arr.tobytes())
    assert len(scene) == 3
    assert scene.colors[0, 0] == pytest.approx(200 / 255)

    arr["scale_2"] = 0.01  # too thick to be a disk
    with pytest.raises(SplatFormatError, match="third scale"):
        import_splat_pointcloud(header.encode() + arr.tobytes())


def test_camera_file_round_trip(tmp_path):
    cams = {"cam0": default_camera(64, 48), "cam1": default_camera(32, 32)}
    path = tmp_path / "cams.txt"
    save_cameras(cams, path)
    out = load_cameras(path)
    assert set(out) == {"cam0", "cam1"}
    assert out["cam0"].width == 64
    assert np.allclose(out["cam0"].pose.as_matrix(), cams["cam0"].pose.as_matrix())


def test_board_coords(tmp_path):
    path = tmp_path / "board.txt"
    path.write_text("# comment\nf1 0.1 0.2 0.3\nf2 0 0 0\n")
    coords = load_board_coords(path)
    assert np.allclose(coords["f1"], [0.1, 0.2, 0.3])
    assert len(coords) == 2
