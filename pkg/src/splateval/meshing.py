"""Isosurface extraction and triangle-mesh utilities.

Marching cubes runs the standard 256-case tables at isolevel 0 with
linear interpolation along crossed edges. Cells touching any unobserved
(zero-weight) voxel are skipped. Vertices are welded on shared grid
edges so closed isosurfaces come out watertight; cleanup drops
degenerate triangles and unreferenced vertices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .tsdf import TSDFVolume

DEGENERATE_AREA = 1e-12


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V,3) meters
    triangles: np.ndarray  # (T,3) int indices
    colors: np.ndarray | None = None  # (V,3) in [0,1]
    normals: np.ndarray | None = None  # (V,3) unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=int).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max(initial=-1) >= len(self.vertices):
            raise ValueError("triangle index out of range")

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def cleaned(self) -> "TriangleMesh":
        """Drop degenerate triangles and unreferenced vertices."""
        keep = self.triangle_areas() > DEGENERATE_AREA
        tris = self.triangles[keep]
        used = np.unique(tris)
        remap = np.full(len(self.vertices), -1, dtype=int)
        remap[used] = np.arange(len(used))
        return TriangleMesh(
            vertices=self.vertices[used],
            triangles=remap[tris],
            colors=None if self.colors is None else self.colors[used],
            normals=None if self.normals is None else self.normals[used],
        )

    def edge_counts(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_watertight(self) -> bool:
        return len(self.triangles) > 0 and all(c == 2 for c in self.edge_counts().values())


def marching_cubes(
    values: np.ndarray,
    origin: np.ndarray,
    voxel_size: float,
    isolevel: float = 0.0,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized classic marching cubes; returns (vertices, triangles).

    ``mask`` marks valid voxels; a cell is processed only when all eight
    corners are valid. Vertices are welded on shared grid edges.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 3 or min(values.shape) < 2:
        raise ValueError("need a 3-d grid with at least 2 voxels per axis")
    nx, ny, nz = values.shape
    inside = values < isolevel

    def corner_view(grid, off):
        ox, oy, oz = off
        return grid[ox : nx - 1 + ox, oy : ny - 1 + oy, oz : nz - 1 + oz]

    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, off in enumerate(CORNER_OFFSETS):
        case |= corner_view(inside, off).astype(np.int32) << bit
    edge_lut = np.asarray(EDGE_TABLE, dtype=np.int32)
    active = edge_lut[case] != 0
    if mask is not None:
        ok = np.ones_like(active)
        for off in CORNER_OFFSETS:
            ok &= corner_view(np.asarray(mask, dtype=bool), off)
        active &= ok
    cells = np.argwhere(active)
    if len(cells) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=int)

    cell_case = case[active]

    # global edge ids: (corner index, axis) -> unique id over the voxel grid
    axis_of_edge = np.array(
        [int(np.argmax(np.abs(np.array(CORNER_OFFSETS[b]) - np.array(CORNER_OFFSETS[a])))) for a, b in EDGE_CORNERS]
    )
    # lower corner along the edge axis (the corner with the smaller offset there)
    base_corner = np.array(
        [
            a if CORNER_OFFSETS[a][axis_of_edge[e]] <= CORNER_OFFSETS[b][axis_of_edge[e]] else b
            for e, (a, b) in enumerate(EDGE_CORNERS)
        ]
    )

    def edge_global_ids(cell_idx: np.ndarray, edges: np.ndarray) -> np.ndarray:
        offs = np.array(CORNER_OFFSETS)[base_corner[edges]]
        pos = cell_idx + offs
        return ((pos[:, 0] * ny + pos[:, 1]) * nz + pos[:, 2]) * 3 + axis_of_edge[edges]

    # gather faces per distinct case so variable-length tri lists stay vectorized
    face_edge_ids = []
    for c in np.unique(cell_case):
        tri = np.asarray(TRI_TABLE[c], dtype=int)
        if tri.size == 0:
            continue
        rows = cells[cell_case == c]
        rep = np.repeat(rows, tri.size, axis=0)
        edges = np.tile(tri, len(rows))
        face_edge_ids.append(edge_global_ids(rep, edges).reshape(-1, 3))
    faces_g = np.concatenate(face_edge_ids) if face_edge_ids else np.zeros((0, 3), dtype=int)

    unique_ids, faces = np.unique(faces_g, return_inverse=True)
    faces = faces.reshape(-1, 3)

    # interpolate each unique edge's crossing point
    axis = (unique_ids % 3).astype(int)
    lin = unique_ids // 3
    pz = lin % nz
    py = (lin // nz) % ny
    px = lin // (nz * ny)
    pa = np.stack([px, py, pz], axis=1)
    pb = pa.copy()
    pb[np.arange(len(pb)), axis] += 1
    va = values[pa[:, 0], pa[:, 1], pa[:, 2]]
    vb = values[pb[:, 0], pb[:, 1], pb[:, 2]]
    denom = vb - va
    t = np.where(np.abs(denom) > 1e-300, (isolevel - va) / np.where(denom == 0, 1.0, denom), 0.5)
    t = np.clip(t, 0.0, 1.0)
    verts = (pa + t[:, None] * (pb - pa)) * voxel_size + np.asarray(origin, dtype=float)

    # tables are wound for outward (toward values > isolevel) normals with
    # bit = inside; flip to match cross(v1-v0, v2-v0) pointing into free space
    faces = faces[:, [0, 2, 1]]
    return verts, faces


def weld_vertices(mesh: TriangleMesh, tol: float) -> TriangleMesh:
    """Merge vertices closer than ``tol`` (keeps meshes closed across cells)."""
    if len(mesh.vertices) == 0:
        return mesh
    key = np.round(mesh.vertices / tol).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return TriangleMesh(
        vertices=mesh.vertices[first],
        triangles=inv[mesh.triangles],
        colors=None if mesh.colors is None else mesh.colors[first],
        normals=None if mesh.normals is None else mesh.normals[first],
    )


def extract_mesh(volume: TSDFVolume, isolevel: float = 0.0) -> TriangleMesh:
    """Marching cubes over observed voxels, with gradient normals, cleaned.

    Crossings that land exactly on grid corners emit coincident vertices
    from different grid edges; welding them first keeps the cleanup from
    opening holes when the zero-area slivers between them are dropped.
    """
    if min(volume.dims) < 2:
        raise ValueError("volume needs at least 2 voxels per axis")
    verts, faces = marching_cubes(
        volume.sdf, volume.origin, volume.voxel_size, isolevel=isolevel, mask=volume.weight > 0
    )
    mesh = weld_vertices(TriangleMesh(verts, faces), tol=volume.voxel_size * 1e-6).cleaned()
    if len(mesh.vertices):
        grad = np.stack(np.gradient(volume.sdf, volume.voxel_size), axis=-1)
        idx = (mesh.vertices - volume.origin) / volume.voxel_size
        normals = _trilinear(grad, idx)
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        mesh.normals = normals / np.maximum(norms, 1e-12)
    return mesh


def _trilinear(grid: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a (nx,ny,nz,C) grid at fractional indices."""
    nx, ny, nz = grid.shape[:3]
    i0 = np.clip(np.floor(idx).astype(int), 0, [nx - 2, ny - 2, nz - 2])
    f = np.clip(idx - i0, 0.0, 1.0)
    out = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (f[:, 0] if dx else 1 - f[:, 0])
                    * (f[:, 1] if dy else 1 - f[:, 1])
                    * (f[:, 2] if dz else 1 - f[:, 2])
                )
                out = out + w[:, None] * grid[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


# --- mesh file formats -------------------------------------------------------


def save_obj(mesh: TriangleMesh, path) -> None:
    """ASCII OBJ; vertex colors ride on extended 6-number v lines."""
    with open(path, "w") as fh:
        if mesh.colors is not None:
            fh.write("# extension: v lines carry per-vertex RGB (x y z r g b)\n")
            for v, c in zip(mesh.vertices, mesh.colors):
                row = [repr(float(x)) for x in (*v, *c)]
                fh.write("v " + " ".join(row) + "\n")
        else:
            for v in mesh.vertices:
                fh.write("v " + " ".join(repr(float(x)) for x in v) + "\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_obj(path) -> TriangleMesh:
    verts, colors, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                vals = [float(x) for x in tok[1:]]
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[3:6])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) - 1 for t in tok[1:4]]
                faces.append(idx)
    return TriangleMesh(
        np.array(verts).reshape(-1, 3),
        np.array(faces, dtype=int).reshape(-1, 3),
        colors=np.array(colors) if colors and len(colors) == len(verts) else None,
    )


def save_ply(mesh: TriangleMesh, path) -> None:
    """Binary little-endian PLY."""
    with open(path, "wb") as fh:
        has_color = mesh.colors is not None
        header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(mesh.vertices)}"]
        header += ["property float x", "property float y", "property float z"]
        if has_color:
            header += ["property uchar red", "property uchar green", "property uchar blue"]
        header += [f"element face {len(mesh.triangles)}", "property list uchar int vertex_indices", "end_header"]
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for i, v in enumerate(mesh.vertices):
            fh.write(struct.pack("<3f", *v))
            if has_color:
                rgb = np.clip(np.round(mesh.colors[i] * 255), 0, 255).astype(int)
                fh.write(struct.pack("<3B", *rgb))
        for t in mesh.triangles:
            fh.write(struct.pack("<B3i", 3, *t))


# --- geometric queries used by scene composition ------------------------------


def ray_triangle_intersections(
    origin: np.ndarray, direction: np.ndarray, mesh: TriangleMesh
) -> np.ndarray:
    """Distances t >= 0 of ray hits against all triangles (Moller-Trumbore)."""
    if len(mesh.triangles) == 0:
        return np.zeros(0)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    v1 = mesh.vertices[mesh.triangles[:, 1]]
    v2 = mesh.vertices[mesh.triangles[:, 2]]
    e1 = v1 - v0
    e2 = v2 - v0
    d = np.asarray(direction, dtype=float)
    h = np.cross(d[None, :], e2)
    a = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(a) > 1e-12
    f = np.where(ok, 1.0 / np.where(a == 0, 1.0, a), 0.0)
    s = np.asarray(origin, dtype=float)[None, :] - v0
    u = f * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    v = f * (q @ d)
    t = f * np.einsum("ij,ij->i", q, e2)
    hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12) & (t >= 0)
    return t[hit]


def drop_height(mesh: TriangleMesh, x: float, y: float, from_z: float) -> float | None:
    """Highest surface z at (x, y) at or below from_z, or None if unsupported."""
    hits = ray_triangle_intersections(np.array([x, y, from_z]), np.array([0.0, 0.0, -1.0]), mesh)
    if hits.size == 0:
        return None
    return float(from_z - hits.min())


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform area-weighted surface samples, (n,3)."""
    areas = mesh.triangle_areas()
    probs = areas / areas.sum()
    tri = rng.choice(len(areas), size=n, p=probs)
    u = rng.uniform(0, 1, n)
    v = rng.uniform(0, 1, n)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def box_mesh(half_extents, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with outward-wound faces."""
    hx, hy, hz = half_extents
    cx, cy, cz = center
    corners = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    ) + np.array([cx, cy, cz])
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return TriangleMesh(corners, faces)
