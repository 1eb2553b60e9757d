"""Dataset emission and loading.

A dataset directory holds one subdirectory per rendered view (RGB and
foreground PNGs plus a tensor container with object coordinates, normals
and depth) and one per ordered view pair (the three ground-truth masks),
tied together by a JSON manifest with camera parameters, the pair table,
per-pair hole statistics, and a mesh-level train/test split.

Pairs connect views of the same mesh at the same elevation; the azimuth
difference theta is always a multiple of 20 inside [20, 340].
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flowmaps, tensorio
from .errors import FormatError, ParameterError
from .geometry import (DEFAULT_RADIUS, Mesh, load_obj, make_camera,
                       make_procedural_object)
from .rasterize import GBuffer, rasterize

MANIFEST_NAME = "manifest.json"
THETA_STEP = 20


@dataclass(frozen=True)
class ViewSpec:
    elevations: tuple = (0, 10, 20)
    azimuth_step: int = 20
    n_azimuths: int | None = None  # default: full circle
    image_size: int = 64
    radius: float = DEFAULT_RADIUS
    focal: float | None = None

    def azimuths(self) -> list[int]:
        if self.azimuth_step <= 0 or self.azimuth_step % THETA_STEP:
            raise ParameterError(
                f"azimuth step {self.azimuth_step} must be a positive multiple of {THETA_STEP}"
            )
        n = self.n_azimuths if self.n_azimuths is not None else 360 // self.azimuth_step
        if n < 2 or n * self.azimuth_step > 360:
            raise ParameterError(f"bad azimuth count {n} at step {self.azimuth_step}")
        return [k * self.azimuth_step for k in range(n)]


def view_id(mesh_id: str, elevation: int, azimuth: int) -> str:
    return f"{mesh_id}_e{elevation:02d}_a{azimuth:03d}"


def save_gbuffer(dirpath: Path, gb: GBuffer) -> None:
    tensorio.save_image(dirpath / "rgb.png", gb.rgb)
    tensorio.save_mask(dirpath / "fg.png", gb.fg)
    tensorio.write_tensors(dirpath / "gbuffer.tvsn", {
        "objcoord": gb.objcoord, "normal": gb.normal, "depth": gb.depth,
    })


def load_gbuffer(dirpath: Path) -> GBuffer:
    dirpath = Path(dirpath)
    t = tensorio.read_tensors(dirpath / "gbuffer.tvsn")
    fg = (tensorio.load_mask(dirpath / "fg.png") > 0.5).astype(np.uint8)
    return GBuffer(
        rgb=tensorio.load_image(dirpath / "rgb.png"),
        objcoord=t["objcoord"], normal=t["normal"], depth=t["depth"], fg=fg,
    )


def build_mesh(entry: dict) -> Mesh:
    if "path" in entry:
        return load_obj(entry["path"])
    return make_procedural_object(int(entry["seed"]), entry["kind"])


def generate_dataset(mesh_entries: list[dict], spec: ViewSpec, out_dir,
                     seed: int = 0) -> dict:
    """Render all views, derive all pair masks, write the manifest.

    Returns the manifest dict (also written to `<out_dir>/manifest.json`).
    """
    if not mesh_entries:
        raise ParameterError("need at least one mesh")
    if not spec.elevations:
        raise ParameterError("view spec lists no elevations")
    azimuths = spec.azimuths()
    out = Path(out_dir)
    os.makedirs(out / "views", exist_ok=True)
    os.makedirs(out / "pairs", exist_ok=True)

    views = []
    pairs = []
    gbufs: dict[str, GBuffer] = {}
    cams = {}
    for entry in mesh_entries:
        mesh = build_mesh(entry)
        mid = entry["id"]
        for elev in spec.elevations:
            for az in azimuths:
                cam = make_camera(az, elev, spec.radius, spec.image_size,
                                  focal=spec.focal)
                gb = rasterize(mesh, cam)
                vid = view_id(mid, elev, az)
                vdir = out / "views" / vid
                os.makedirs(vdir, exist_ok=True)
                save_gbuffer(vdir, gb)
                gbufs[vid] = gb
                cams[vid] = cam
                views.append({
                    "id": vid, "mesh": mid, "elevation": elev, "azimuth": az,
                    "dir": str(Path("views") / vid),
                })
        for elev in spec.elevations:
            for a_s in azimuths:
                for a_t in azimuths:
                    if a_s == a_t:
                        continue
                    theta = (a_t - a_s) % 360
                    src_id = view_id(mid, elev, a_s)
                    tgt_id = view_id(mid, elev, a_t)
                    src, tgt = gbufs[src_id], gbufs[tgt_id]
                    m_vis = flowmaps.visibility_map(src, tgt, theta, cams[tgt_id])
                    m_svis = flowmaps.symmetry_visibility_map(src, tgt, theta,
                                                              cams[tgt_id])
                    m_bg = flowmaps.background_mask(src.fg, tgt.fg)
                    pid = f"{src_id}__a{a_t:03d}"
                    pdir = out / "pairs" / pid
                    os.makedirs(pdir, exist_ok=True)
                    tensorio.save_mask(pdir / "m_vis.png", m_vis)
                    tensorio.save_mask(pdir / "m_svis.png", m_svis)
                    tensorio.save_mask(pdir / "m_bg.png", m_bg)
                    hole = 1.0 - float((m_bg + m_svis).mean())
                    pairs.append({
                        "id": pid, "src": src_id, "tgt": tgt_id, "theta": theta,
                        "dir": str(Path("pairs") / pid),
                        "hole_fraction": round(hole, 6),
                    })

    rng = np.random.default_rng(seed)
    ids = [e["id"] for e in mesh_entries]
    order = list(rng.permutation(len(ids)))
    n_train = max(1, int(round(0.8 * len(ids))))
    if n_train == len(ids) and len(ids) > 1:
        n_train -= 1
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])

    manifest = {
        "version": 1,
        "seed": seed,
        "image_size": spec.image_size,
        "radius": spec.radius,
        "focal": spec.focal if spec.focal is not None else make_camera(
            0, 0, spec.radius, spec.image_size).focal,
        "elevations": list(spec.elevations),
        "azimuths": azimuths,
        "meshes": [dict(e) for e in mesh_entries],
        "views": views,
        "pairs": pairs,
        "split": {"train": train, "test": test},
    }
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest


def validate_manifest(root) -> dict:
    """Check the manifest invariants: referenced files exist, every pair
    theta is a multiple of 20 in [20,340], and the split is mesh-disjoint."""
    root = Path(root)
    try:
        with open(root / MANIFEST_NAME, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError(f"no {MANIFEST_NAME} under {root}") from exc
    for v in manifest["views"]:
        for fname in ("rgb.png", "fg.png", "gbuffer.tvsn"):
            p = root / v["dir"] / fname
            if not p.exists():
                raise FormatError(f"manifest references missing file {p}")
    for p in manifest["pairs"]:
        if p["theta"] % THETA_STEP or not (20 <= p["theta"] <= 340):
            raise FormatError(f"pair {p['id']} has invalid theta {p['theta']}")
        for fname in ("m_vis.png", "m_svis.png", "m_bg.png"):
            f = root / p["dir"] / fname
            if not f.exists():
                raise FormatError(f"manifest references missing file {f}")
    train = set(manifest["split"]["train"])
    test = set(manifest["split"]["test"])
    if train & test:
        raise FormatError(f"split not mesh-disjoint: {sorted(train & test)}")
    return manifest


class PairDataset:
    """Loads a generated dataset; hands out training batches as arrays.

    Views and masks are cached in memory after first touch (desk-scale
    datasets are small).
    """

    def __init__(self, root):
        self.root = Path(root)
        try:
            with open(self.root / MANIFEST_NAME, "r", encoding="utf-8") as fh:
                self.manifest = json.load(fh)
        except FileNotFoundError as exc:
            raise FormatError(f"no {MANIFEST_NAME} under {root}") from exc
        self.image_size = int(self.manifest["image_size"])
        self.views = {v["id"]: v for v in self.manifest["views"]}
        self.pairs = self.manifest["pairs"]
        self._rgb_cache: dict[str, np.ndarray] = {}
        self._mask_cache: dict[str, np.ndarray] = {}

    # -- access ------------------------------------------------------------
    def mesh_split(self, split: str) -> set[str]:
        try:
            return set(self.manifest["split"][split])
        except KeyError:
            raise ParameterError(f"unknown split {split!r}; have train/test")

    def pair_indices(self, split: str) -> list[int]:
        meshes = self.mesh_split(split)
        idx = [i for i, p in enumerate(self.pairs)
               if self.views[p["src"]]["mesh"] in meshes]
        if not idx:
            raise ParameterError(f"split {split!r} contains no pairs")
        return idx

    def view_rgb(self, vid: str) -> np.ndarray:
        """(3,H,W) float32."""
        if vid not in self._rgb_cache:
            img = tensorio.load_image(self.root / self.views[vid]["dir"] / "rgb.png")
            self._rgb_cache[vid] = img.transpose(2, 0, 1).astype(np.float32)
        return self._rgb_cache[vid]

    def view_gbuffer(self, vid: str) -> GBuffer:
        return load_gbuffer(self.root / self.views[vid]["dir"])

    def view_camera(self, vid: str):
        v = self.views[vid]
        return make_camera(v["azimuth"], v["elevation"], self.manifest["radius"],
                           self.image_size, focal=self.manifest["focal"])

    def pair_mask(self, pair: dict, name: str) -> np.ndarray:
        """(1,H,W) float32 binary mask: name in {m_vis, m_svis, m_bg}."""
        key = f"{pair['id']}/{name}"
        if key not in self._mask_cache:
            m = tensorio.load_mask(self.root / pair["dir"] / f"{name}.png")
            self._mask_cache[key] = (m > 0.5).astype(np.float32)[None]
        return self._mask_cache[key]

    def batch(self, indices) -> dict[str, np.ndarray]:
        """Stack pair data: i_s/i_t (N,3,H,W), masks (N,1,H,W), thetas (N,)."""
        i_s, i_t, m_bg, m_svis, m_vis, thetas = [], [], [], [], [], []
        for i in indices:
            p = self.pairs[i]
            i_s.append(self.view_rgb(p["src"]))
            i_t.append(self.view_rgb(p["tgt"]))
            m_bg.append(self.pair_mask(p, "m_bg"))
            m_svis.append(self.pair_mask(p, "m_svis"))
            m_vis.append(self.pair_mask(p, "m_vis"))
            thetas.append(p["theta"])
        return {
            "i_s": np.stack(i_s), "i_t": np.stack(i_t),
            "m_bg": np.stack(m_bg), "m_svis": np.stack(m_svis),
            "m_vis": np.stack(m_vis), "theta": np.asarray(thetas, np.float64),
        }

    # -- perceptual pretraining views ---------------------------------------
    def azimuth_bins(self) -> list[int]:
        return sorted({v["azimuth"] for v in self.manifest["views"]})

    def labeled_views(self, split: str):
        """(rgb (3,H,W), azimuth bin index) for every view of the split."""
        meshes = self.mesh_split(split)
        bins = {a: i for i, a in enumerate(self.azimuth_bins())}
        out = []
        for v in self.manifest["views"]:
            if v["mesh"] in meshes:
                out.append((v["id"], bins[v["azimuth"]]))
        return out
