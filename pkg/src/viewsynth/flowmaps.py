"""Ground-truth supervision from G-buffer pairs: appearance flow,
visibility maps, background masks, and the compositing rules.

Everything here is computed per *target* pixel: the target G-buffer gives
the 3D object point under each pixel, which is projected into the source
view and tested for visibility there. This is the dense, collision-free
equivalent of scattering source pixels forward into the target.

The source-view visibility test has two parts:
  * orientation: the surface must face the source camera, (c - p) . n > 0;
  * occlusion: the point's source depth may not exceed the source z-buffer.
    The z-buffer is sampled as the max over the 4 pixels around the
    projection (background/out-of-view count as +inf), with an absolute
    tolerance of 1e-3 * camera radius. The max-of-4 form makes the test
    exact at theta=0: the generating pixel is among the neighbors, so every
    rendered foreground pixel passes.

Conventions: `cam` is always the camera of the *target* view and `theta`
the azimuth advance from source to target, so the source camera is `cam`
rotated back by theta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, ShapeError
from .geometry import CameraModel, rotation_about_y
from .rasterize import GBuffer

DEPTH_TOL_SCALE = 1e-3  # depth-test tolerance as a fraction of camera radius
MIRROR = np.array([1.0, 1.0, -1.0])


@dataclass
class FlowField:
    """Backward flow: continuous source-image coordinates per target pixel.

    Invalid pixels (no source correspondence) carry NaN coordinates and
    valid=0; they must be excluded from losses and metrics.
    """

    fy: np.ndarray     # (H,W) float32
    fx: np.ndarray     # (H,W) float32
    valid: np.ndarray  # (H,W) uint8


def _check_same_shape(a, b, what="inputs"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def project(points: np.ndarray, cam: CameraModel, theta: float):
    """Project object points as seen after advancing the camera azimuth by
    theta: equivalent to rotating the object by R(-theta) about +y and
    projecting through `cam`. Returns (h, w, depth); depth <= 0 flags points
    behind the camera (their coordinates are NaN)."""
    pts = np.asarray(points, dtype=np.float64)
    if theta:
        pts = pts @ rotation_about_y(-theta).T
    return cam.project(pts)


def _source_camera(cam: CameraModel, theta: float) -> CameraModel:
    return cam.with_azimuth(cam.azimuth - theta)


def _source_zbuffer_max4(src_depth: np.ndarray, h: np.ndarray, w: np.ndarray):
    """Max source depth over the 4 sampling neighbors of continuous (h, w);
    out-of-image neighbors count as +inf (nothing there to occlude)."""
    H, W = src_depth.shape
    h0 = np.floor(h)
    w0 = np.floor(w)
    out = np.full(h.shape, -np.inf)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = h0 + dy
            xx = w0 + dx
            inb = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            z = np.where(
                inb,
                src_depth[
                    np.clip(yy, 0, H - 1).astype(np.intp),
                    np.clip(xx, 0, W - 1).astype(np.intp),
                ],
                np.inf,
            )
            out = np.maximum(out, z)
    return out


def _visible_in_source(points, normals, src: GBuffer, cam_src: CameraModel):
    """Visibility of object points in the source view (orientation test plus
    z-buffer occlusion test). Returns (visible, h, w) with source pixel
    coordinates of each point."""
    h, w, d = cam_src.project(points)
    facing = np.einsum("...k,...k->...", cam_src.center - points, normals) > 0.0
    in_front = d > 0.0
    zmax = _source_zbuffer_max4(src.depth.astype(np.float64), h, w)
    tol = DEPTH_TOL_SCALE * cam_src.radius
    unoccluded = d <= zmax + tol
    return facing & in_front & unoccluded, h, w


def flow_and_visibility(src: GBuffer, tgt: GBuffer, theta: float,
                        cam: CameraModel):
    """Shared core for gt_flow / visibility_map: returns (FlowField, m_vis)."""
    _check_same_shape(src.depth, tgt.depth, "source/target G-buffers")
    cam_src = _source_camera(cam, theta)
    fgmask = tgt.fg.astype(bool)
    pts = tgt.objcoord[fgmask].astype(np.float64)
    nrm = tgt.normal[fgmask].astype(np.float64)
    vis_pts, h, w = _visible_in_source(pts, nrm, src, cam_src)

    H, W = tgt.depth.shape
    m_vis = np.zeros((H, W), np.uint8)
    m_vis[fgmask] = vis_pts.astype(np.uint8)
    fy = np.full((H, W), np.nan, np.float32)
    fx = np.full((H, W), np.nan, np.float32)
    fy_fg = np.where(vis_pts, h, np.nan)
    fx_fg = np.where(vis_pts, w, np.nan)
    fy[fgmask] = fy_fg.astype(np.float32)
    fx[fgmask] = fx_fg.astype(np.float32)
    return FlowField(fy=fy, fx=fx, valid=m_vis.copy()), m_vis


def visibility_map(src: GBuffer, tgt: GBuffer, theta: float,
                   cam: CameraModel) -> np.ndarray:
    """Target-grid map: 1 where the target pixel's object point is visible
    in the source view."""
    _, m_vis = flow_and_visibility(src, tgt, theta, cam)
    return m_vis


def symmetry_visibility_map(src: GBuffer, tgt: GBuffer, theta: float,
                            cam: CameraModel) -> np.ndarray:
    """Visibility OR mirrored visibility: the target point's z-reflection is
    tested against the same source view, exploiting object symmetry."""
    m_vis = visibility_map(src, tgt, theta, cam)
    m_sym = _mirrored_visibility(src, tgt, theta, cam)
    return ((m_sym + m_vis) > 0).astype(np.uint8)


def _mirrored_visibility(src: GBuffer, tgt: GBuffer, theta: float,
                         cam: CameraModel) -> np.ndarray:
    _check_same_shape(src.depth, tgt.depth, "source/target G-buffers")
    cam_src = _source_camera(cam, theta)
    fgmask = tgt.fg.astype(bool)
    pts = tgt.objcoord[fgmask].astype(np.float64) * MIRROR
    nrm = tgt.normal[fgmask].astype(np.float64) * MIRROR
    vis_pts, _, _ = _visible_in_source(pts, nrm, src, cam_src)
    m = np.zeros(tgt.depth.shape, np.uint8)
    m[fgmask] = vis_pts.astype(np.uint8)
    return m


def gt_flow(src: GBuffer, tgt: GBuffer, theta: float,
            cam: CameraModel) -> FlowField:
    flow, _ = flow_and_visibility(src, tgt, theta, cam)
    return flow


def background_mask(fg_s: np.ndarray, fg_t: np.ndarray) -> np.ndarray:
    """Pixels that are background in BOTH views (these are copied through
    from the source unchanged)."""
    _check_same_shape(fg_s, fg_t, "foreground masks")
    return ((fg_s == 0) & (fg_t == 0)).astype(np.uint8)


def mat_visibility(img: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Elementwise matting, broadcasting the map over trailing channels."""
    img = np.asarray(img)
    m = np.asarray(m)
    if img.shape[:2] != m.shape[:2]:
        raise ShapeError(f"image {img.shape} vs map {m.shape} spatial mismatch")
    if img.ndim == 3 and m.ndim == 2:
        m = m[:, :, None]
    return img * m


def composite_doafn(i_s: np.ndarray, i_afn: np.ndarray, m_bg: np.ndarray,
                    m_s_vis: np.ndarray) -> np.ndarray:
    """Source background pass-through plus matted warped foreground; pixels
    in neither mask stay zero (the holes the completion stage fills)."""
    _check_same_shape(np.asarray(i_s), np.asarray(i_afn), "images")
    overlap = np.asarray(m_bg, np.float64) * np.asarray(m_s_vis, np.float64)
    if np.any(overlap > 0):
        raise ConsistencyError(
            f"background and visibility masks overlap on {int((overlap > 0).sum())} pixels"
        )
    return mat_visibility(i_s, m_bg) + mat_visibility(i_afn, m_s_vis)


def warp_image(src_rgb: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward-warp the source image through the flow field with the
    bilinear kernel (out-of-range neighbors contribute zero); invalid flow
    pixels come out zero."""
    H, W = flow.fy.shape
    src = np.asarray(src_rgb, np.float64)
    if src.shape[:2] != (H, W):
        raise ShapeError(f"source {src.shape} vs flow {(H, W)} spatial mismatch")
    valid = flow.valid.astype(bool)
    fy = np.where(valid, flow.fy, 0.0).astype(np.float64)
    fx = np.where(valid, flow.fx, 0.0).astype(np.float64)
    y0 = np.floor(fy)
    x0 = np.floor(fx)
    wy = fy - y0
    wx = fx - x0
    out = np.zeros_like(src)
    for dy, ky in ((0, 1.0 - wy), (1, wy)):
        for dx, kx in ((0, 1.0 - wx), (1, wx)):
            yy = y0 + dy
            xx = x0 + dx
            inb = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            vals = src[
                np.clip(yy, 0, H - 1).astype(np.intp),
                np.clip(xx, 0, W - 1).astype(np.intp),
            ]
            weight = np.where(inb, ky * kx, 0.0)
            out += vals * weight[:, :, None] if src.ndim == 3 else vals * weight
    out[~valid] = 0.0
    return out
