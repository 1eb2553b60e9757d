import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewsynth import tensorio
from viewsynth.errors import FormatError


def test_roundtrip_multiple_entries(tmp_path, rng):
    entries = {
        "objcoord": rng.normal(size=(8, 8, 3)).astype(np.float32),
        "depth": rng.normal(size=(8, 8)).astype(np.float32),
        "scalarish": np.float32([3.5]),
    }
    path = tmp_path / "t.tvsn"
    tensorio.write_tensors(path, entries)
    back = tensorio.read_tensors(path)
    assert set(back) == set(entries)
    for k in entries:
        assert back[k].shape == entries[k].shape
        assert np.array_equal(back[k], entries[k])


def test_infinity_survives(tmp_path):
    depth = np.full((4, 4), np.inf, np.float32)
    depth[1, 1] = 2.5
    tensorio.write_tensors(tmp_path / "d.tvsn", {"depth": depth})
    back = tensorio.read_tensors(tmp_path / "d.tvsn")["depth"]
    assert np.isinf(back).sum() == 15 and back[1, 1] == np.float32(2.5)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.tvsn"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        tensorio.read_tensors(p)


def test_truncated_rejected(tmp_path):
    p = tmp_path / "t.tvsn"
    tensorio.write_tensors(p, {"a": np.ones((4, 4), np.float32)})
    blob = p.read_bytes()
    p.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(FormatError):
        tensorio.read_tensors(p)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.integers(0, 2 ** 31))
def test_roundtrip_any_rank(tmp_path_factory, dims, seed):
    rng = np.random.default_rng(seed)
    arr = rng.normal(size=dims).astype(np.float32)
    path = tmp_path_factory.mktemp("h") / "x.tvsn"
    tensorio.write_tensors(path, {"x": arr})
    assert np.array_equal(tensorio.read_tensors(path)["x"], arr)


def test_png_image_roundtrip(tmp_path, rng):
    img = rng.uniform(0, 1, (16, 16, 3))
    p = tmp_path / "i.png"
    tensorio.save_image(p, img)
    back = tensorio.load_image(p)
    assert back.shape == (16, 16, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6  # 8-bit quantization


def test_png_mask_binary_roundtrip(tmp_path, rng):
    m = (rng.uniform(size=(16, 16)) > 0.5).astype(np.float32)
    p = tmp_path / "m.png"
    tensorio.save_mask(p, m)
    back = tensorio.load_mask(p)
    assert np.array_equal(back > 0.5, m > 0.5)
    assert set(np.unique(np.round(back * 255))) <= {0.0, 255.0}
