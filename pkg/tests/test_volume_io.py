import json

import numpy as np
import pytest
from PIL import Image

from octa_forge.errors import VolumeFormatError
from octa_forge.voxelizer import rasterize
from octa_forge.volume_io import (read_header, read_labeled_volume, read_mask, read_volume,
                                  render_slices, slice_image, write_labeled_volume, write_volume)


def test_small_float_round_trip(tmp_path):
    v = np.arange(8, dtype=np.float32).reshape(2, 2, 2) / 7
    write_volume(v, tmp_path / "v", voxel_size_um=2.0)
    assert (tmp_path / "v.bin").stat().st_size == 32
    out = read_volume(tmp_path / "v")
    assert out.dtype == np.float32 and out.tobytes() == v.tobytes()
    h = read_header(tmp_path / "v.json")
    assert h["shape"] == [2, 2, 2] and h["encoding"] == "raw-le" and h["layout"] == "x-fastest"


def test_x_fastest_layout(tmp_path):
    v = np.zeros((3, 4, 5), dtype=np.uint8)
    v[2, 1, 3] = 9
    write_volume(v, tmp_path / "v", kind="label")
    raw = np.frombuffer((tmp_path / "v.bin").read_bytes(), dtype=np.uint8)
    X, Y = 3, 4
    assert np.flatnonzero(raw).tolist() == [3 * Y * X + 1 * X + 2]


@pytest.mark.parametrize("dtype", [np.float32, np.uint8, np.uint32])
def test_random_64_round_trip(tmp_path, rng, dtype):
    v = (rng.random((64, 64, 64)) * 200).astype(dtype)
    write_volume(v, tmp_path / "r")
    first = (tmp_path / "r.bin").read_bytes()
    out = read_volume(tmp_path / "r.bin")
    assert out.tobytes() == v.tobytes()
    write_volume(out, tmp_path / "r2")
    assert (tmp_path / "r2.bin").read_bytes() == first


def test_size_mismatch_names_both_sizes(tmp_path):
    write_volume(np.zeros((4, 4, 4), np.float32), tmp_path / "v")
    (tmp_path / "v.bin").write_bytes(b"\0" * 100)
    with pytest.raises(VolumeFormatError, match="100 bytes.*256"):
        read_volume(tmp_path / "v")


def test_header_errors_and_unknown_keys(tmp_path):
    write_volume(np.ones((2, 2, 2), np.uint8), tmp_path / "v", kind="label")
    h = json.loads((tmp_path / "v.json").read_text())
    h["future_field"] = {"nested": True}
    (tmp_path / "v.json").write_text(json.dumps(h))
    assert read_volume(tmp_path / "v").sum() == 8
    h["dtype"] = "float64"
    (tmp_path / "v.json").write_text(json.dumps(h))
    with pytest.raises(VolumeFormatError, match="dtype"):
        read_volume(tmp_path / "v")
    with pytest.raises(VolumeFormatError, match="not found"):
        read_volume(tmp_path / "nothing")
    with pytest.raises(VolumeFormatError):
        write_volume(np.zeros((2, 2, 2), np.float64), tmp_path / "bad")
    with pytest.raises(VolumeFormatError):
        write_volume(np.zeros((2, 2), np.float32), tmp_path / "bad")


def test_labeled_volume_round_trip(tmp_path):
    vol = rasterize(np.array([[0.0, 10, 10], [5, 0, 3]]), np.array([[40.0, 30, 20], [5, 40, 30]]),
                    [4.0, 2.0], (20, 20, 16), 2.0, origin_um=(1.0, 2.0, 3.0))
    write_labeled_volume(vol, tmp_path / "lab")
    back = read_labeled_volume(tmp_path / "lab")
    for name in ("labels", "meta_radius", "meta_theta", "meta_vessel"):
        assert getattr(back, name).tobytes() == getattr(vol, name).tobytes()
    np.testing.assert_array_equal(back.origin_um, [1, 2, 3])
    assert back.voxel_size_um == 2.0
    np.testing.assert_array_equal(read_mask(tmp_path / "lab"), vol.labels > 0)


def test_render_constant_gray_and_binary(tmp_path):
    paths = render_slices(np.full((6, 5, 4), 0.5, np.float32), "x", [0, 5], tmp_path)
    img = np.asarray(Image.open(paths[0]))
    assert img.dtype == np.uint8 and img.shape == (4, 5)  # z down the rows
    assert np.all(img == 128) or np.all(img == 127)
    assert np.all(img == 128)  # round-half-to-even of 127.5
    labels = np.zeros((6, 5, 4), np.uint8)
    labels[2, 1:3, 1] = 1
    img = slice_image(labels, "x", 2)
    assert set(np.unique(img)) == {0, 255}
    assert img[1, 1] == 255 and img[0, 0] == 0


def test_render_orientation_and_range(tmp_path):
    v = np.zeros((4, 6, 8), np.float32)
    v[1, 2, 7] = 1.0
    assert slice_image(v, "y", 2).shape == (8, 4)
    assert slice_image(v, "y", 2)[7, 1] == 255
    assert slice_image(v, "z", 7)[2, 1] == 255
    assert slice_image(np.full((2, 2, 2), 3.0), "z", 0).max() == 255
    with pytest.raises(IndexError):
        render_slices(v, "z", [8], tmp_path)
