"""Brute-force ray-casting oracle, independent of the rasterizer and the
per-target-pixel visibility code.

Intersections use Moller-Trumbore over every triangle (chunked over rays).
For watertight meshes, "point visible from camera" is purely geometric:
no intersection strictly closer than the point along the camera ray; the
back side of a closed surface is occluded by its own front.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512


def _intersect_chunk(origins, dirs, v0, e1, e2):
    """Smallest positive ray parameter per ray against all triangles.

    origins/dirs: (R,3); triangle data: (T,3). Returns (R,) +inf for miss.
    """
    eps = 1e-12
    pvec = np.cross(dirs[:, None, :], e2[None, :, :])          # (R,T,3)
    det = np.einsum("tk,rtk->rt", e1, pvec)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - v0[None, :, :]
    u = np.einsum("rtk,rtk->rt", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None, :, :])
    v = np.einsum("rk,rtk->rt", dirs, qvec) * inv
    t = np.einsum("tk,rtk->rt", e2, qvec) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    t = np.where(hit, t, np.inf)
    return t.min(axis=1)


def intersect(mesh, origins, dirs):
    """(R,) smallest positive t with origins + t*dirs on the mesh."""
    v = mesh.vertices
    tri = mesh.triangles
    v0 = v[tri[:, 0]]
    e1 = v[tri[:, 1]] - v0
    e2 = v[tri[:, 2]] - v0
    out = np.empty(len(origins))
    for s in range(0, len(origins), _CHUNK):
        sl = slice(s, min(s + _CHUNK, len(origins)))
        out[sl] = _intersect_chunk(origins[sl], dirs[sl], v0, e1, e2)
    return out


def raycast_depth(mesh, cam) -> np.ndarray:
    """Per-pixel camera depth by casting a ray through every pixel center."""
    S = cam.size
    c = (S - 1) / 2.0
    hh, ww = np.mgrid[0:S, 0:S].astype(np.float64)
    d_cam = np.stack([(ww - c) / cam.focal, (hh - c) / cam.focal,
                      np.ones_like(hh)], axis=-1).reshape(-1, 3)
    d_world = d_cam @ cam.world_to_cam  # rows are orthonormal: R^T = R^-1
    origins = np.broadcast_to(cam.center, d_world.shape).copy()
    # forward component of d_world is exactly 1, so ray parameter == depth
    t = intersect(mesh, origins, d_world)
    return t.reshape(S, S)


def visible_points(mesh, cam, points, tol) -> np.ndarray:
    """True where nothing on the mesh is strictly closer than each point
    along the camera ray (tolerance in world units)."""
    points = np.asarray(points, np.float64)
    dirs = points - cam.center
    dist = np.linalg.norm(dirs, axis=1)
    origins = np.broadcast_to(cam.center, dirs.shape).copy()
    t = intersect(mesh, origins, dirs)  # parameterized so t=1 is the point
    return t * dist >= dist - tol


def erode_mask(mask: np.ndarray) -> np.ndarray:
    """3x3 binary erosion (numpy shifts; no scipy dependency)."""
    m = mask.astype(bool)
    out = m.copy()
    H, W = m.shape
    padded = np.zeros((H + 2, W + 2), bool)
    padded[1:-1, 1:-1] = m
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out &= padded[1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
    return out


def nonsilhouette_mask(src, tgt, cam_src, radius) -> np.ndarray:
    """Pixels where oracle and implementation must agree: interior target
    foreground whose source projection lands in a depth-coherent
    neighborhood (no occluder/silhouette edge within the sampling window)."""
    interior = erode_mask(tgt.fg.astype(bool))
    pts = tgt.objcoord.astype(np.float64).reshape(-1, 3)
    h, w, _ = cam_src.project(pts)
    H, W = src.depth.shape
    h0 = np.floor(h)
    w0 = np.floor(w)
    zmin = np.full(h.shape, np.inf)
    zmax = np.full(h.shape, -np.inf)
    for dy in (0, 1):
        for dx in (0, 1):
            yy, xx = h0 + dy, w0 + dx
            inb = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            z = np.where(inb, src.depth.astype(np.float64)[
                np.clip(yy, 0, H - 1).astype(int), np.clip(xx, 0, W - 1).astype(int)
            ], np.inf)
            zmin = np.minimum(zmin, z)
            zmax = np.maximum(zmax, z)
    all_bg = ~np.isfinite(zmin)
    coherent = (np.isfinite(zmax) & (zmax - zmin < 0.05 * radius)) | all_bg
    return interior & coherent.reshape(src.depth.shape)
