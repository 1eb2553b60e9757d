"""Software z-buffer rasterizer producing per-pixel G-buffers.

Attributes (object coordinates, normals, albedo) are perspective-correct
interpolated; coverage follows the top-left fill convention so that
triangles sharing an edge neither double-fill nor leave gaps. Shading is
Lambertian with a light direction fixed in the *object* frame plus a
constant ambient term, which makes the color of a surface point identical
in every view (the warp-consistency checks rely on this).

Rendering is two-sided: back-facing geometry is drawn with its authored
normal kept as-is, so downstream visibility tests still see orientation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, Mesh

# Light direction in the canonical object frame (normalized at import).
LIGHT_DIR = np.array([0.5, 1.0, 0.75]) / np.linalg.norm([0.5, 1.0, 0.75])
AMBIENT = 0.35
BACKGROUND = (1.0, 1.0, 1.0)


@dataclass
class GBuffer:
    """Per-pixel render outputs for one view."""

    rgb: np.ndarray        # (H,W,3) float32 in [0,1]
    objcoord: np.ndarray   # (H,W,3) float32 canonical object coordinates
    normal: np.ndarray     # (H,W,3) float32 unit normals (canonical frame)
    depth: np.ndarray      # (H,W) float32 camera depth, +inf on background
    fg: np.ndarray         # (H,W) uint8 foreground mask
    skipped_triangles: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.rgb.shape[0]


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by) -> bool:
    """Tie rule for pixels exactly on an edge of a positively wound triangle
    (y grows downward): top edges run right-to-left, left edges run upward."""
    dy = by - ay
    dx = bx - ax
    return (dy == 0.0 and dx < 0.0) or dy < 0.0


def rasterize(mesh: Mesh, cam: CameraModel, background=BACKGROUND,
              light_dir: np.ndarray = LIGHT_DIR, ambient: float = AMBIENT) -> GBuffer:
    S = cam.size
    rgb = np.empty((S, S, 3), np.float64)
    rgb[:] = background
    objc = np.zeros((S, S, 3), np.float64)
    nrm = np.zeros((S, S, 3), np.float64)
    depth = np.full((S, S), np.inf, np.float64)
    fg = np.zeros((S, S), bool)
    skipped = 0

    if len(mesh.triangles):
        h, w, z = cam.project(mesh.vertices)
        V = mesh.vertices
        N = mesh.normals
        for t_idx, tri in enumerate(mesh.triangles):
            i0, i1, i2 = int(tri[0]), int(tri[1]), int(tri[2])
            z0, z1, z2 = z[i0], z[i1], z[i2]
            if min(z0, z1, z2) <= 1e-9:
                skipped += 1
                continue
            x0, y0 = w[i0], h[i0]
            x1, y1 = w[i1], h[i1]
            x2, y2 = w[i2], h[i2]
            area = _edge(x0, y0, x1, y1, x2, y2)
            if area == 0.0:
                skipped += 1
                continue
            if area < 0.0:  # normalize winding so edge functions are >= 0 inside
                x1, y1, x2, y2 = x2, y2, x1, y1
                z1, z2 = z2, z1
                i1, i2 = i2, i1
                area = -area
            xmin = max(int(np.ceil(min(x0, x1, x2) - 0.5)), 0)
            xmax = min(int(np.floor(max(x0, x1, x2) + 0.5)), S - 1)
            ymin = max(int(np.ceil(min(y0, y1, y2) - 0.5)), 0)
            ymax = min(int(np.floor(max(y0, y1, y2) + 0.5)), S - 1)
            if xmin > xmax or ymin > ymax:
                continue
            px, py = np.meshgrid(
                np.arange(xmin, xmax + 1, dtype=np.float64),
                np.arange(ymin, ymax + 1, dtype=np.float64),
            )
            e0 = _edge(x1, y1, x2, y2, px, py)  # opposite vertex 0
            e1 = _edge(x2, y2, x0, y0, px, py)
            e2 = _edge(x0, y0, x1, y1, px, py)
            inside = (
                ((e0 > 0) | ((e0 == 0) & _top_left(x1, y1, x2, y2)))
                & ((e1 > 0) | ((e1 == 0) & _top_left(x2, y2, x0, y0)))
                & ((e2 > 0) | ((e2 == 0) & _top_left(x0, y0, x1, y1)))
            )
            if not inside.any():
                continue
            l0 = e0[inside] / area
            l1 = e1[inside] / area
            l2 = e2[inside] / area
            inv_z = l0 / z0 + l1 / z1 + l2 / z2
            z_px = 1.0 / inv_z
            rows = py[inside].astype(np.intp)
            cols = px[inside].astype(np.intp)
            closer = z_px < depth[rows, cols]
            if not closer.any():
                continue
            rows, cols = rows[closer], cols[closer]
            l0, l1, l2 = l0[closer], l1[closer], l2[closer]
            z_px, inv_z = z_px[closer], inv_z[closer]
            c0 = l0 / z0
            c1 = l1 / z1
            c2 = l2 / z2
            p = (
                c0[:, None] * V[i0] + c1[:, None] * V[i1] + c2[:, None] * V[i2]
            ) / inv_z[:, None]
            n = (
                c0[:, None] * N[i0] + c1[:, None] * N[i1] + c2[:, None] * N[i2]
            ) / inv_z[:, None]
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            shade = ambient + (1.0 - ambient) * np.maximum(0.0, n @ light_dir)
            depth[rows, cols] = z_px
            objc[rows, cols] = p
            nrm[rows, cols] = n
            rgb[rows, cols] = mesh.colors[t_idx] * shade[:, None]
            fg[rows, cols] = True

    return GBuffer(
        rgb=rgb.astype(np.float32),
        objcoord=objc.astype(np.float32),
        normal=nrm.astype(np.float32),
        depth=depth.astype(np.float32),
        fg=fg.astype(np.uint8),
        skipped_triangles=skipped,
        diagnostics={"triangles": int(len(mesh.triangles))},
    )
