"""Meshes and cameras.

Coordinate conventions
----------------------
Objects live in a canonical frame inside [-1,1]^3 with +y up and the
reflection plane at z=0 (procedural objects map onto themselves under
z -> -z). The camera orbits the origin: azimuth 0 puts the camera on the
+x axis and increasing azimuth swings it toward -z, so that negating the
azimuth is exactly the mirror image of a z-symmetric scene, and advancing
the azimuth by theta equals rotating the object by R(-theta) about +y.

Image coordinates are (h, w) = (row, col) with row 0 at the top; pixel
centers sit on integer coordinates and the origin projects to the image
center ((size-1)/2, (size-1)/2). Camera-space depth is positive in front
of the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError

_UP = np.array([0.0, 1.0, 0.0])

# Default focal length as a fraction of image size: a ~1.8-unit object at
# radius 2.5 spans roughly 65-75% of the image without touching the border.
FOCAL_SCALE = 1.0
DEFAULT_RADIUS = 2.5

PROCEDURAL_KINDS = ("car-like", "chair-like", "block-stack")


def rotation_about_y(degrees: float) -> np.ndarray:
    """Right-handed rotation matrix about +y."""
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class CameraModel:
    """Perspective pinhole camera looking at the origin, +y up."""

    azimuth: float
    elevation: float
    radius: float
    size: int
    focal: float
    center: np.ndarray          # (3,) world position
    world_to_cam: np.ndarray    # (3,3) rows: right, image-down, forward

    @property
    def projection(self) -> np.ndarray:
        """3x3 perspective matrix over camera coords (right, down, forward)."""
        c = (self.size - 1) / 2.0
        return np.array(
            [[self.focal, 0.0, c], [0.0, self.focal, c], [0.0, 0.0, 1.0]]
        )

    def project(self, points: np.ndarray):
        """Project world points (...,3) -> (h, w, depth) continuous pixels.

        Points at depth <= 0 are behind the camera; their (h, w) are NaN so
        they can never be mistaken for a valid projection.
        """
        p = np.asarray(points, dtype=np.float64)
        cam = (p - self.center) @ self.world_to_cam.T
        depth = cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = self.focal * cam[..., 0] / depth + (self.size - 1) / 2.0
            h = self.focal * cam[..., 1] / depth + (self.size - 1) / 2.0
        bad = depth <= 0.0
        if np.any(bad):
            w = np.where(bad, np.nan, w)
            h = np.where(bad, np.nan, h)
        return h, w, depth

    def with_azimuth(self, azimuth: float) -> "CameraModel":
        return make_camera(azimuth, self.elevation, self.radius, self.size,
                           focal=self.focal)


def make_camera(azimuth: float, elevation: float, radius: float, size: int,
                focal: float | None = None) -> CameraModel:
    vals = (azimuth, elevation, radius)
    if not all(math.isfinite(v) for v in vals):
        raise ParameterError(f"non-finite camera parameters {vals}")
    if size < 8:
        raise ParameterError(f"image size {size} < 8")
    if radius <= 0:
        raise ParameterError(f"camera radius {radius} must be positive")
    if abs(elevation) >= 89.0:
        raise ParameterError(f"elevation {elevation} too close to the pole")
    if focal is None:
        focal = FOCAL_SCALE * size
    a = math.radians(azimuth)
    e = math.radians(elevation)
    center = radius * np.array(
        [math.cos(e) * math.cos(a), math.sin(e), -math.cos(e) * math.sin(a)]
    )
    forward = -center / np.linalg.norm(center)
    right = np.cross(forward, _UP)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return CameraModel(
        azimuth=float(azimuth), elevation=float(elevation), radius=float(radius),
        size=int(size), focal=float(focal), center=center,
        world_to_cam=np.stack([right, down, forward]),
    )


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with per-vertex normals and per-triangle albedo.

    Procedural generators duplicate vertices per facet so normals are exact
    face normals; the OBJ loader may share vertices with averaged normals.
    """

    vertices: np.ndarray       # (V,3) float64
    triangles: np.ndarray      # (T,3) int32
    normals: np.ndarray        # (V,3) float64, unit
    colors: np.ndarray         # (T,3) float64 albedo in [0,1]

    def validate(self) -> None:
        v, t = self.vertices, self.triangles
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise FormatError(
                f"triangle index out of range: {int(t.max())} over {len(v)} vertices"
            )
        if len(self.normals) != len(v):
            raise FormatError("normal count does not match vertex count")
        if len(self.colors) != len(t):
            raise FormatError("color count does not match triangle count")
        if len(v):
            norms = np.linalg.norm(self.normals, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise FormatError("vertex normals are not unit length")
            if np.abs(v).max() > 1.0 + 1e-9:
                raise FormatError("mesh exceeds the canonical [-1,1]^3 box")

    def bounding_radius(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices, axis=1).max())


def empty_mesh() -> Mesh:
    return Mesh(
        vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3), np.int32),
        normals=np.zeros((0, 3)), colors=np.zeros((0, 3)),
    )


def edge_use_counts(mesh: Mesh, decimals: int = 7) -> dict[tuple, int]:
    """Count triangle uses of each undirected edge, keyed by rounded vertex
    positions (facet-duplicated vertices therefore merge)."""
    keys = [tuple(p) for p in np.round(mesh.vertices, decimals)]
    counts: dict[tuple, int] = {}
    for tri in mesh.triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = tuple(sorted((keys[tri[a]], keys[tri[b]])))
            counts[e] = counts.get(e, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# procedural objects
# ---------------------------------------------------------------------------

class _MeshBuilder:
    def __init__(self):
        self.verts: list[np.ndarray] = []
        self.tris: list[np.ndarray] = []
        self.norms: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []

    def add(self, verts, tris, normals, colors) -> None:
        base = sum(len(v) for v in self.verts)
        self.verts.append(np.asarray(verts, dtype=np.float64))
        self.tris.append(np.asarray(tris, dtype=np.int32) + base)
        self.norms.append(np.asarray(normals, dtype=np.float64))
        self.cols.append(np.asarray(colors, dtype=np.float64))

    def merged(self):
        return (np.concatenate(self.verts), np.concatenate(self.tris),
                np.concatenate(self.norms), np.concatenate(self.cols))

    def build(self) -> Mesh:
        v, t, n, c = self.merged()
        mesh = Mesh(vertices=v, triangles=t, normals=n, colors=c)
        mesh.validate()
        return mesh


def _grid_face(origin, du, dv, nu, nv, normal, color_a, color_b):
    """Subdivided quad face with checkerboard albedo and flat normals.

    Triangles wind counter-clockwise when seen from the normal side.
    """
    origin = np.asarray(origin, float)
    du = np.asarray(du, float)
    dv = np.asarray(dv, float)
    iu = np.arange(nu + 1)[:, None, None] / nu
    iv = np.arange(nv + 1)[None, :, None] / nv
    verts = origin + iu * du + iv * dv
    verts = verts.reshape(-1, 3)

    def vid(i, j):
        return i * (nv + 1) + j

    tris, cols = [], []
    for i in range(nu):
        for j in range(nv):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
            col = color_a if (i + j) % 2 == 0 else color_b
            cols.append(col)
            cols.append(col)
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    normals = np.tile(n, (len(verts), 1))
    # fix winding so the cross product agrees with the declared normal
    t0 = tris[0]
    face_n = np.cross(verts[t0[1]] - verts[t0[0]], verts[t0[2]] - verts[t0[0]])
    if np.dot(face_n, n) < 0:
        tris = [(a, c, b) for (a, b, c) in tris]
    return verts, tris, normals, cols


def _add_box(builder: _MeshBuilder, center, half, subdiv, color_a, color_b):
    cx, cy, cz = np.asarray(center, float)
    hx, hy, hz = np.asarray(half, float)
    nx, ny, nz = subdiv
    faces = [
        # origin, du, dv, (nu, nv), normal
        ((cx + hx, cy - hy, cz - hz), (0, 2 * hy, 0), (0, 0, 2 * hz), (ny, nz), (1, 0, 0)),
        ((cx - hx, cy - hy, cz - hz), (0, 2 * hy, 0), (0, 0, 2 * hz), (ny, nz), (-1, 0, 0)),
        ((cx - hx, cy + hy, cz - hz), (2 * hx, 0, 0), (0, 0, 2 * hz), (nx, nz), (0, 1, 0)),
        ((cx - hx, cy - hy, cz - hz), (2 * hx, 0, 0), (0, 0, 2 * hz), (nx, nz), (0, -1, 0)),
        ((cx - hx, cy - hy, cz + hz), (2 * hx, 0, 0), (0, 2 * hy, 0), (nx, ny), (0, 0, 1)),
        ((cx - hx, cy - hy, cz - hz), (2 * hx, 0, 0), (0, 2 * hy, 0), (nx, ny), (0, 0, -1)),
    ]
    for origin, du, dv, (nu, nv), normal in faces:
        builder.add(*_grid_face(origin, du, dv, nu, nv, normal, color_a, color_b))


def _add_prism_z(builder: _MeshBuilder, center, radius, half_len, n_sides,
                 color_side, color_cap):
    """Flat-shaded prism with axis along z (wheel-like), watertight."""
    cx, cy, cz = np.asarray(center, float)
    ang = 2.0 * np.pi * np.arange(n_sides) / n_sides
    ring = np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=1)
    verts, tris, normals, cols = [], [], [], []
    zf, zb = cz + half_len, cz - half_len
    for k in range(n_sides):
        p0, p1 = ring[k], ring[(k + 1) % n_sides]
        quad = [(p0[0], p0[1], zb), (p1[0], p1[1], zb),
                (p1[0], p1[1], zf), (p0[0], p0[1], zf)]
        mid = (p0 + p1) / 2 - np.array([cx, cy])
        n = np.array([mid[0], mid[1], 0.0])
        n /= np.linalg.norm(n)
        base = len(verts)
        verts.extend(quad)
        normals.extend([n] * 4)
        tris.append((base, base + 1, base + 2))
        tris.append((base, base + 2, base + 3))
        cols.extend([color_side if k % 2 == 0 else color_cap] * 2)
    for z, nz in ((zf, 1.0), (zb, -1.0)):
        base = len(verts)
        verts.append((cx, cy, z))
        normals.append((0.0, 0.0, nz))
        for k in range(n_sides):
            verts.append((ring[k][0], ring[k][1], z))
            normals.append((0.0, 0.0, nz))
        for k in range(n_sides):
            a, b = base + 1 + k, base + 1 + (k + 1) % n_sides
            tris.append((base, a, b) if nz > 0 else (base, b, a))
            cols.append(color_cap)
    builder.add(verts, tris, normals, cols)


def _mirror_z(verts, tris, normals, colors):
    """Exact mirror copy across z=0 with winding reversed."""
    v = np.asarray(verts, float).copy()
    v[:, 2] = -v[:, 2]
    n = np.asarray(normals, float).copy()
    n[:, 2] = -n[:, 2]
    t = np.asarray(tris, np.int32)[:, ::-1]
    return v, t, n, np.asarray(colors, float)


def _palette(rng: np.random.Generator, n: int) -> list[np.ndarray]:
    """Muted distinct colors; checker contrast kept moderate so that warped
    views stay photo-consistent under sub-pixel sampling."""
    cols = []
    for _ in range(n):
        base = rng.uniform(0.25, 0.75, size=3)
        cols.append(base)
    return cols


def _shades(base: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.clip(base - 0.10, 0.05, 1.0)
    hi = np.clip(base + 0.10, 0.0, 0.95)
    return hi, lo


def make_procedural_object(seed: int, kind: str) -> Mesh:
    """Deterministic z-symmetric textured object of the given kind."""
    if kind not in PROCEDURAL_KINDS:
        raise ParameterError(
            f"unknown procedural kind {kind!r}; expected one of {PROCEDURAL_KINDS}"
        )
    rng = np.random.default_rng([seed, PROCEDURAL_KINDS.index(kind)])
    b = _MeshBuilder()
    if kind == "car-like":
        body, cabin, wheel = _palette(rng, 3)
        body_half = np.array([
            rng.uniform(0.70, 0.88), rng.uniform(0.16, 0.24), rng.uniform(0.30, 0.42)
        ])
        body_cy = rng.uniform(-0.02, 0.06)
        _add_box(b, (0.0, body_cy, 0.0), body_half, (6, 2, 3), *_shades(body))
        cabin_half = np.array([
            body_half[0] * rng.uniform(0.35, 0.5), rng.uniform(0.12, 0.2),
            body_half[2] * rng.uniform(0.7, 0.85),
        ])
        cabin_cx = rng.uniform(-0.25, 0.05)
        _add_box(b, (cabin_cx, body_cy + body_half[1] + cabin_half[1], 0.0),
                 cabin_half, (3, 2, 3), *_shades(cabin))
        wr = rng.uniform(0.14, 0.2)
        wy = body_cy - body_half[1] - 0.4 * wr
        wx = body_half[0] * 0.62
        wz = body_half[2]
        wheel_col = np.clip(wheel * 0.4, 0.05, 1.0)
        rim = np.clip(wheel_col + 0.3, 0.0, 1.0)
        for x in (wx, -wx):
            tmp = _MeshBuilder()
            _add_prism_z(tmp, (x, wy, wz + 0.05), wr, 0.06, 10, wheel_col, rim)
            part = tmp.merged()
            b.add(*part)
            b.add(*_mirror_z(*part))
    elif kind == "chair-like":
        seat, frame = _palette(rng, 2)
        seat_half = np.array([
            rng.uniform(0.32, 0.42), rng.uniform(0.04, 0.07), rng.uniform(0.32, 0.42)
        ])
        seat_y = rng.uniform(-0.05, 0.05)
        _add_box(b, (0.0, seat_y, 0.0), seat_half, (3, 1, 3), *_shades(seat))
        leg_h = rng.uniform(0.25, 0.4)
        leg_r = rng.uniform(0.035, 0.055)
        lx = seat_half[0] - leg_r * 1.5
        lz = seat_half[2] - leg_r * 1.5
        for sx in (lx, -lx):
            tmp = _MeshBuilder()
            _add_box(tmp, (sx, seat_y - seat_half[1] - leg_h, lz), (leg_r, leg_h, leg_r),
                     (1, 2, 1), *_shades(frame))
            part = tmp.merged()
            b.add(*part)
            b.add(*_mirror_z(*part))
        back_h = rng.uniform(0.28, 0.36)
        # sink the backrest slightly into the seat and keep its extents off the
        # seat's planes, so no two facets share an edge by position
        _add_box(b, (-(seat_half[0] - 0.03), seat_y + seat_half[1] + back_h - 0.02, 0.0),
                 (0.05, back_h, seat_half[2] * 0.96), (1, 3, 3), *_shades(frame))
    else:  # block-stack
        n_blocks = int(rng.integers(3, 6))
        colors = _palette(rng, n_blocks)
        y = -0.55
        for i in range(n_blocks):
            half = np.array([
                rng.uniform(0.2, 0.55), rng.uniform(0.08, 0.2), rng.uniform(0.2, 0.55)
            ]) * (1.0 - 0.12 * i)
            x_off = rng.uniform(-0.2, 0.2) * (1.0 if i else 0.0)
            _add_box(b, (x_off, y + half[1], 0.0), half, (3, 1, 3), *_shades(colors[i]))
            y += 2 * half[1]
    mesh = b.build()
    assert np.abs(mesh.vertices).max() <= 1.0, "procedural mesh escaped unit box"
    return mesh


# ---------------------------------------------------------------------------
# OBJ loading (v / vn / f subset, fan triangulation)
# ---------------------------------------------------------------------------

def load_obj(path) -> Mesh:
    verts: list[list[float]] = []
    file_normals: list[list[float]] = []
    faces: list[tuple[list[int], list[int]]] = []  # (vertex ids, normal ids)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "vn":
                    file_normals.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError("normal needs 3 components")
                elif tag == "f":
                    vids, nids = [], []
                    for tok in parts[1:]:
                        fields = tok.split("/")
                        vids.append(int(fields[0]))
                        if len(fields) >= 3 and fields[2]:
                            nids.append(int(fields[2]))
                    if len(vids) < 3:
                        raise ValueError("face needs at least 3 vertices")
                    faces.append((vids, nids))
                # other tags (vt, o, g, s, usemtl, ...) are ignored
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: malformed {tag!r} line: {exc}") from exc

    V = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    tris: list[tuple[int, int, int]] = []
    tri_nids: list[tuple[int, int, int]] = []
    for vids, nids in faces:
        ids = []
        for raw in vids:
            idx = raw - 1 if raw > 0 else len(V) + raw
            if idx < 0 or idx >= len(V):
                raise FormatError(
                    f"{path}: face vertex index {raw} out of range (have {len(V)} vertices)"
                )
            ids.append(idx)
        nid = []
        for raw in nids:
            idx = raw - 1 if raw > 0 else len(file_normals) + raw
            if idx < 0 or idx >= len(file_normals):
                raise FormatError(
                    f"{path}: face normal index {raw} out of range (have {len(file_normals)})"
                )
            nid.append(idx)
        for k in range(1, len(ids) - 1):  # fan triangulation
            tris.append((ids[0], ids[k], ids[k + 1]))
            if len(nid) == len(ids):
                tri_nids.append((nid[0], nid[k], nid[k + 1]))

    T = np.asarray(tris, dtype=np.int32).reshape(-1, 3)
    if len(tri_nids) == len(T) and len(T):
        # per-vertex normal = file normal of any face corner using it
        N = np.zeros_like(V)
        src = np.asarray(file_normals, dtype=np.float64)
        for tri, nid in zip(T, tri_nids):
            for v, n in zip(tri, nid):
                N[v] = src[n]
    else:
        # area-weighted average of face normals
        N = np.zeros_like(V)
        for a, b, c in T:
            fn = np.cross(V[b] - V[a], V[c] - V[a])  # length = 2 * area
            N[a] += fn
            N[b] += fn
            N[c] += fn
    lens = np.linalg.norm(N, axis=1, keepdims=True)
    lens[lens == 0] = 1.0
    N = N / lens
    colors = np.tile(np.array([0.7, 0.7, 0.7]), (len(T), 1))
    mesh = Mesh(vertices=V, triangles=T, normals=N, colors=colors)
    mesh.validate()
    return mesh
