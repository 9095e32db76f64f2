"""Splat, camera, and board-coordinate file formats.

Native splat container (extension ``.pspl``): magic ``PSPL1``, little
endian, header = count (u64) + length-prefixed (u32) UTF-8 frame label,
then per record 14 float32: center(3), quaternion(4, scalar first),
s_u, s_v, color(3), opacity, pad(=0). Values are stored at float32
precision; scenes built from float32-representable data round-trip
exactly.

Import also accepts the common splat point-cloud ``.ply`` layout (ASCII
or binary little-endian) with per-vertex position, rotation quaternion,
two scales, color, opacity; a third scale is tolerated only if tiny
(planar disks) and is dropped.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .geometry import RigidTransform
from .splats import Camera, SplatScene, ValidationError

MAGIC = b"PSPL1"
RECORD_FLOATS = 14
MAX_THIRD_SCALE = 1e-4


class SplatFormatError(ValueError):
    """Malformed splat file."""


def save_splats(scene: SplatScene) -> bytes:
    scene.validate()
    label = scene.frame_label.encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<Q", len(scene)))
    out.write(struct.pack("<I", len(label)))
    out.write(label)
    if len(scene):
        rec = np.zeros((len(scene), RECORD_FLOATS), dtype="<f4")
        rec[:, 0:3] = scene.means
        rec[:, 3:7] = scene.quats
        rec[:, 7:9] = scene.scales
        rec[:, 9:12] = scene.colors
        rec[:, 12] = scene.opacities
        out.write(rec.tobytes())
    return out.getvalue()


def load_splats(data: bytes) -> SplatScene:
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise SplatFormatError("bad magic: not a PSPL1 splat file")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    (label_len,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + label_len:
        raise SplatFormatError("truncated frame label")
    label = data[off : off + label_len].decode("utf-8")
    off += label_len
    body = data[off:]
    expect = count * RECORD_FLOATS * 4
    if len(body) < expect:
        got = len(body) // (RECORD_FLOATS * 4)
        raise SplatFormatError(f"truncated records: header says {count}, payload holds {got}")
    rec = np.frombuffer(body[:expect], dtype="<f4").reshape(count, RECORD_FLOATS).astype(float)
    scene = SplatScene(
        rec[:, 0:3], rec[:, 3:7], rec[:, 7:9], rec[:, 9:12], rec[:, 12],
        frame_label=label,
    ) if count else SplatScene.empty(label)
    _validate_records(scene, rec if count else None)
    return scene


def _validate_records(scene: SplatScene, rec: np.ndarray | None) -> None:
    if rec is None:
        return
    bad = ~np.isfinite(rec).all(axis=1)
    if bad.any():
        raise SplatFormatError(f"non-finite value in record {int(np.flatnonzero(bad)[0])}")
    op = scene.opacities
    bad = (op < 0) | (op > 1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SplatFormatError(f"opacity {op[i]:g} outside [0, 1] in record {i}")
    bad = (scene.scales <= 0).any(axis=1)
    if bad.any():
        raise SplatFormatError(f"non-positive scale in record {int(np.flatnonzero(bad)[0])}")
    bad = ((scene.colors < 0) | (scene.colors > 1)).any(axis=1)
    if bad.any():
        raise SplatFormatError(f"color outside [0, 1] in record {int(np.flatnonzero(bad)[0])}")
    norms = np.linalg.norm(scene.quats, axis=1)
    bad = np.abs(norms - 1.0) > 1e-3
    if bad.any():
        raise SplatFormatError(f"non-unit quaternion in record {int(np.flatnonzero(bad)[0])}")


def save_splats_file(scene: SplatScene, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_splats(scene))


def load_splats_file(path) -> SplatScene:
    with open(path, "rb") as fh:
        return load_splats(fh.read())


# --- point-cloud (.ply) splat import ---------------------------------------

_PLY_QUAT_NAMES = [("rot_0", "rot_1", "rot_2", "rot_3"), ("qw", "qx", "qy", "qz")]
_PLY_SCALE_NAMES = [("scale_0", "scale_1", "scale_2"), ("s_u", "s_v", None)]
_PLY_COLOR_NAMES = [("red", "green", "blue"), ("r", "g", "b")]

_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4), "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1), "char": ("<i1", 1), "int8": ("<i1", 1),
    "short": ("<i2", 2), "ushort": ("<u2", 2), "int": ("<i4", 4), "int32": ("<i4", 4),
    "uint": ("<u4", 4), "uint32": ("<u4", 4),
}


def import_splat_pointcloud(data: bytes, frame_label: str = "world") -> SplatScene:
    """Parse an ASCII or binary_little_endian splat .ply into a scene."""
    header_end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or header_end < 0:
        raise SplatFormatError("not a ply file")
    header = data[: header_end + len(b"end_header\n")].decode("ascii", "replace")
    body = data[header_end + len(b"end_header\n") :]

    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header.splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append((tok[1], tok[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise SplatFormatError(f"unsupported ply format {fmt!r}")
    if count is None:
        raise SplatFormatError("ply has no vertex element")

    names = [p[1] for p in props]
    if fmt == "ascii":
        rows = []
        text = body.decode("ascii", "replace").splitlines()
        if len(text) < count:
            raise SplatFormatError("truncated ascii ply body")
        for line in text[:count]:
            rows.append([float(x) for x in line.split()])
        table = {name: np.array([r[i] for r in rows]) for i, name in enumerate(names)}
    else:
        dtype = np.dtype([(name, _PLY_TYPES[typ][0]) for typ, name in props])
        if len(body) < count * dtype.itemsize:
            raise SplatFormatError("truncated binary ply body")
        arr = np.frombuffer(body, dtype=dtype, count=count)
        table = {name: arr[name].astype(float) for name in names}

    def pick(groups):
        for g in groups:
            if all(n is None or n in table for n in g):
                return g
        return None

    for need in ("x", "y", "z", "opacity"):
        if need not in table:
            raise SplatFormatError(f"ply missing property {need!r}")
    quat_g = pick(_PLY_QUAT_NAMES)
    scale_g = pick(_PLY_SCALE_NAMES) or pick([( "scale_0", "scale_1", None)])
    color_g = pick(_PLY_COLOR_NAMES)
    if quat_g is None or scale_g is None or color_g is None:
        raise SplatFormatError("ply missing quaternion, scale, or color properties")

    means = np.stack([table["x"], table["y"], table["z"]], axis=1)
    quats = np.stack([table[n] for n in quat_g], axis=1)
    scales = np.stack([table[scale_g[0]], table[scale_g[1]]], axis=1)
    if scale_g[2] is not None and scale_g[2] in table:
        third = np.abs(table[scale_g[2]])
        if np.any(third > MAX_THIRD_SCALE):
            i = int(np.argmax(third > MAX_THIRD_SCALE))
            raise SplatFormatError(
                f"vertex {i}: third scale {third[i]:g} m exceeds the planar-disk limit {MAX_THIRD_SCALE:g}"
            )
    colors = np.stack([table[n] for n in color_g], axis=1)
    if colors.max(initial=0.0) > 1.0:  # 8-bit color convention
        colors = colors / 255.0
    opac = table["opacity"]
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms < 1e-12):
        raise SplatFormatError("zero-norm quaternion in ply")
    scene = SplatScene(means, quats / norms[:, None], scales, np.clip(colors, 0, 1), np.clip(opac, 0, 1), frame_label)
    scene.validate()
    return scene


# --- camera pose and board-coordinate text files ----------------------------


def save_cameras(cameras: dict[str, Camera], path) -> None:
    """One camera per line: id, 4x4 row-major pose, fx fy cx cy, W H."""
    with open(path, "w") as fh:
        for cam_id, cam in cameras.items():
            vals = cam.pose.as_matrix().reshape(-1).tolist() + [cam.fx, cam.fy, cam.cx, cam.cy]
            fh.write(
                " ".join([str(cam_id)] + [repr(float(v)) for v in vals] + [str(cam.width), str(cam.height)]) + "\n"
            )


def load_cameras(path) -> dict[str, Camera]:
    cameras: dict[str, Camera] = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) != 23:
                raise SplatFormatError(f"{path}:{ln}: expected 23 fields, got {len(tok)}")
            cam_id = tok[0]
            vals = [float(x) for x in tok[1:]]
            pose = RigidTransform.from_matrix(np.array(vals[:16]).reshape(4, 4))
            fx, fy, cx, cy = vals[16:20]
            w, h = int(vals[20]), int(vals[21])
            cam = Camera(pose, fx, fy, cx, cy, w, h)
            cam.validate()
            cameras[cam_id] = cam
    if not cameras:
        raise SplatFormatError(f"{path}: no cameras")
    return cameras


def load_board_coords(path) -> dict[str, np.ndarray]:
    """Lines of ``frame_id x y z`` (meters, board frame)."""
    coords: dict[str, np.ndarray] = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) != 4:
                raise SplatFormatError(f"{path}:{ln}: expected 'frame_id x y z'")
            coords[tok[0]] = np.array([float(t) for t in tok[1:]])
    return coords


def correspondences_from_cameras(cameras: dict[str, Camera], board: dict[str, np.ndarray]):
    """Match camera centers with measured board-frame positions by frame id."""
    from .align import CorrespondenceSet

    shared = sorted(set(cameras) & set(board))
    if len(shared) < 3:
        raise ValidationError(f"only {len(shared)} frames with board measurements; need >= 3")
    p = np.stack([cameras[k].center() for k in shared])
    q = np.stack([board[k] for k in shared])
    return CorrespondenceSet(p, q), shared
