"""Raw volume files and PNG slice rendering.

A volume at ``path`` is two files: ``path.json`` (header) and ``path.bin``
(little-endian payload, x varying fastest: index = z*Y*X + y*X + x).
In memory volumes are numpy arrays of shape (X, Y, Z).

A labeled volume is a directory holding one such pair per grid:
``labels``, ``radius``, ``theta`` and ``vessel_id``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import VolumeFormatError

DTYPES = {"uint8": "<u1", "uint32": "<u4", "float32": "<f4"}
KINDS = ("intensity", "label", "radius", "theta", "vessel_id")
_LABELED_GRIDS = (
    ("labels", "label", "labels"),
    ("radius", "radius", "meta_radius"),
    ("theta", "theta", "meta_theta"),
    ("vessel_id", "vessel_id", "meta_vessel"),
)


def _stem(path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path


def _paths(path):
    stem = _stem(path)
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".bin")


def write_volume(array, path, voxel_size_um: float = 1.0, kind: str = "intensity",
                 extra: dict | None = None) -> Path:
    array = np.asarray(array)
    if array.ndim != 3:
        raise VolumeFormatError(f"expected a 3D array, got shape {array.shape}")
    name = array.dtype.name
    if name not in DTYPES:
        raise VolumeFormatError(f"unsupported dtype {name}; use one of {sorted(DTYPES)}")
    if kind not in KINDS:
        raise VolumeFormatError(f"unknown kind {kind!r}")
    header = {
        "shape": [int(s) for s in array.shape],
        "voxel_size_um": float(voxel_size_um),
        "dtype": name,
        "encoding": "raw-le",
        "layout": "x-fastest",
        "kind": kind,
    }
    if extra:
        header.update(extra)
    json_path, bin_path = _paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    payload = array.astype(DTYPES[name], copy=False).ravel(order="F").tobytes()
    bin_path.write_bytes(payload)
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    return json_path


def read_header(path) -> dict:
    json_path, _ = _paths(path)
    try:
        header = json.loads(json_path.read_text())
    except FileNotFoundError:
        raise VolumeFormatError(f"{json_path}: header not found") from None
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{json_path}: invalid JSON ({exc})") from None
    for key in ("shape", "dtype"):
        if key not in header:
            raise VolumeFormatError(f"{json_path}: header lacks {key!r}")
    if header["dtype"] not in DTYPES:
        raise VolumeFormatError(f"{json_path}: unsupported dtype {header['dtype']!r}")
    if header.get("encoding", "raw-le") != "raw-le" or header.get("layout", "x-fastest") != "x-fastest":
        raise VolumeFormatError(f"{json_path}: only raw-le / x-fastest volumes are supported")
    return header


def read_volume(path, with_header: bool = False):
    header = read_header(path)
    _, bin_path = _paths(path)
    shape = tuple(int(s) for s in header["shape"])
    dt = np.dtype(DTYPES[header["dtype"]])
    expected = int(np.prod(shape)) * dt.itemsize
    try:
        payload = bin_path.read_bytes()
    except FileNotFoundError:
        raise VolumeFormatError(f"{bin_path}: payload not found") from None
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{bin_path}: payload has {len(payload)} bytes, header implies {expected}"
        )
    flat = np.frombuffer(payload, dtype=dt).astype(dt.newbyteorder("="))
    array = np.ascontiguousarray(flat.reshape(shape, order="F"))
    return (array, header) if with_header else array


def write_labeled_volume(vol, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    extra = {}
    if vol.origin_um is not None:
        extra["origin_um"] = [float(v) for v in vol.origin_um]
    for fname, kind, attr in _LABELED_GRIDS:
        write_volume(getattr(vol, attr), directory / fname, vol.voxel_size_um, kind, extra)
    return directory


def read_labeled_volume(directory):
    from .voxelizer import LabeledVolume

    directory = Path(directory)
    grids, header = {}, None
    for fname, _, attr in _LABELED_GRIDS:
        grids[attr], header = read_volume(directory / fname, with_header=True)
    origin = header.get("origin_um")
    return LabeledVolume(
        voxel_size_um=float(header.get("voxel_size_um", 1.0)),
        origin_um=None if origin is None else np.asarray(origin, dtype=np.float64),
        **grids,
    )


def read_mask(path) -> np.ndarray:
    """Binary mask from a volume file or a labeled-volume directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "labels"
    return read_volume(path) > 0


def slice_image(volume, axis: str, index: int) -> np.ndarray:
    """8-bit image of one slice, depth (z) running down the image rows.

    Values map linearly from [0, 1] to [0, 255], rounding half to even.
    """
    volume = np.asarray(volume)
    ax = "xyz".index(axis)
    if not 0 <= index < volume.shape[ax]:
        raise IndexError(f"slice {index} out of range for axis {axis} of size {volume.shape[ax]}")
    plane = np.take(volume, index, axis=ax)
    if volume.dtype == np.uint8 or volume.dtype == bool:
        plane = (plane > 0).astype(np.float64)
    img = np.rint(np.clip(plane.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    # remaining axes keep x < y < z order; transpose so the later axis is rows
    return np.ascontiguousarray(img.T)


def render_slices(volume, axis: str, indices, out_dir, prefix: str = "slice") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = [(int(i), slice_image(volume, axis, int(i))) for i in indices]
    paths = []
    for i, img in images:
        p = out_dir / f"{prefix}_{axis}{i:04d}.png"
        Image.fromarray(img).save(p)
        paths.append(p)
    return paths
