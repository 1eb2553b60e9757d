"""File I/O: the binary tensor container and 8-bit PNG helpers.

Container layout (all integers little-endian u32 unless noted):

    magic "TVSN" | version | entry count
    per entry: name length | name (utf-8) | rank | dims[rank] | f32 payload

Float channels (object coordinates, normals, depth, flow, checkpoints) go
through the container; RGB images and binary masks go through 8-bit PNG.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

from .errors import FormatError

MAGIC = b"TVSN"
VERSION = 1


def write_tensors(path, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4
    try:
        version, count = struct.unpack_from("<II", blob, off)
        off += 8
        if version != VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
            off += 4 * n
            out[name] = arr.reshape(dims).copy()
    except struct.error as exc:
        raise FormatError(f"{path}: truncated tensor container") from exc
    return out


def save_image(path, img: np.ndarray) -> None:
    """Write an HxWx3 float image in [0,1] as 8-bit RGB PNG."""
    q = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_mask(path, mask: np.ndarray) -> None:
    """Write an HxW map in [0,1] as 8-bit grayscale PNG (binary maps stay 0/255)."""
    q = np.clip(np.round(np.asarray(mask) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32)
    return arr / 255.0
