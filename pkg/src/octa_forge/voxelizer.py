"""Capsule rasterization of graph patches into labeled volumes.

A voxel belongs to a vessel when its center lies within the vessel radius of
the vessel's axis segment. This is what drawing the centerline and dilating
it with a ball of that radius produces, without the discretization of the
two-step version.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from ._backend import get_kernels
from .errors import ConfigError, InvariantError
from .graph import angles_to_z


@dataclass
class LabeledVolume:
    """Binary labels plus per-voxel radius, angle and vessel id.

    Arrays have shape ``(X, Y, Z)``; z is depth along the beam.
    """

    labels: np.ndarray
    meta_radius: np.ndarray
    meta_theta: np.ndarray
    meta_vessel: np.ndarray
    voxel_size_um: float
    origin_um: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    @classmethod
    def empty(cls, shape, voxel_size_um, origin_um=None):
        shape = tuple(int(s) for s in shape)
        return cls(
            labels=np.zeros(shape, dtype=np.uint8),
            meta_radius=np.zeros(shape, dtype=np.float32),
            meta_theta=np.zeros(shape, dtype=np.float32),
            meta_vessel=np.zeros(shape, dtype=np.uint32),
            voxel_size_um=float(voxel_size_um),
            origin_um=None if origin_um is None else np.asarray(origin_um, dtype=np.float64),
        )

    def check(self):
        """Raise InvariantError if the label/metadata grids disagree."""
        on = self.labels.astype(bool)
        if not np.array_equal(on, self.meta_vessel > 0):
            raise InvariantError("labels and vessel ids disagree")
        if np.any(self.meta_radius[on] <= 0):
            raise InvariantError("labeled voxel without a positive radius")
        t = self.meta_theta[on]
        if np.any((t < 0) | (t > 90)):
            raise InvariantError("labeled voxel with angle outside [0, 90]")
        return self

    def copy(self):
        return LabeledVolume(
            self.labels.copy(), self.meta_radius.copy(), self.meta_theta.copy(),
            self.meta_vessel.copy(), self.voxel_size_um,
            None if self.origin_um is None else self.origin_um.copy(),
        )


def _slabs(n, parts):
    parts = max(1, min(int(parts), n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def rasterize(a, b, radii, shape, voxel_size_um, origin_um=(0.0, 0.0, 0.0),
              threads: int = 1, backend: Optional[str] = None) -> LabeledVolume:
    """Rasterize segments ``a[i]``-``b[i]`` with the given radii.

    ``threads`` splits the x axis into slabs. The result is the same for any
    thread count because overlaps are resolved by (radius, index) priority.
    """
    k = get_kernels(backend)
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 3)
    radii = np.ascontiguousarray(radii, dtype=np.float64).reshape(-1)
    theta = np.ascontiguousarray(angles_to_z(b - a), dtype=np.float32)
    vol = LabeledVolume.empty(shape, voxel_size_um, origin_um)
    ox, oy, oz = (float(v) for v in (origin_um if origin_um is not None else (0, 0, 0)))
    vs = float(voxel_size_um)

    def run(slab):
        k.rasterize_capsules(a, b, radii, theta, ox, oy, oz, vs, vol.labels,
                             vol.meta_radius, vol.meta_theta, vol.meta_vessel,
                             slab[0], slab[1])

    slabs = _slabs(vol.shape[0], threads)
    if len(slabs) == 1 or len(a) == 0:
        run((0, vol.shape[0]))
    else:
        with ThreadPoolExecutor(len(slabs)) as pool:
            list(pool.map(run, slabs))
    return vol


def voxelize(patch, threads: int = 1, backend: Optional[str] = None) -> LabeledVolume:
    """Rasterize an accepted ``GraphPatch`` at its own shape and voxel size."""
    shape = tuple(patch.shape_voxels)
    expected = np.asarray(shape, dtype=np.float64) * patch.voxel_size_um
    if not np.allclose(np.asarray(patch.extent_um), expected, rtol=0, atol=1e-6):
        raise ConfigError(
            f"patch extent {list(patch.extent_um)} um does not match "
            f"{list(shape)} voxels of {patch.voxel_size_um} um"
        )
    a, b = patch.sub_graph.edge_segments()
    return rasterize(a, b, patch.sub_graph.radii, shape, patch.voxel_size_um,
                     patch.origin_um, threads=threads, backend=backend)


# --- elastic deformation ---------------------------------------------------------

@dataclass
class DeformationField:
    displacement: np.ndarray  # (3, X, Y, Z), voxels
    smoothness_sigma: float
    magnitude: float
    seed: int


def generate_deformation(shape, smoothness_sigma: float = 8.0, magnitude: float = 3.0,
                         seed: int = 0) -> DeformationField:
    """Smoothed white noise scaled so the largest displacement equals ``magnitude``."""
    if magnitude < 0:
        raise ConfigError("deformation magnitude must be >= 0")
    shape = tuple(int(s) for s in shape)
    disp = np.zeros((3,) + shape, dtype=np.float64)
    if magnitude > 0:
        rng = np.random.default_rng(seed)
        for c in range(3):
            noise = rng.standard_normal(shape)
            if smoothness_sigma > 0:
                noise = ndimage.gaussian_filter(noise, smoothness_sigma, mode="reflect", truncate=4.0)
            disp[c] = noise
        peak = np.sqrt((disp ** 2).sum(axis=0)).max()
        if peak > 0:
            disp *= magnitude / peak
    return DeformationField(disp, float(smoothness_sigma), float(magnitude), int(seed))


def apply_elastic_deformation(vol: LabeledVolume, field: DeformationField) -> LabeledVolume:
    """Warp labels and metadata together with nearest-neighbor lookup.

    Content moves along the displacement: output voxel v reads input voxel
    ``round(v - displacement[v])``. Reads from outside the volume give
    background.
    """
    disp = field.displacement
    if disp.shape[1:] != vol.shape:
        raise ConfigError(f"field shape {disp.shape[1:]} does not match volume {vol.shape}")
    out = LabeledVolume.empty(vol.shape, vol.voxel_size_um, vol.origin_um)
    names = ("labels", "meta_radius", "meta_theta", "meta_vessel")
    for x0, x1 in _slabs(vol.shape[0], max(1, vol.shape[0] // 16)):
        grids = np.meshgrid(np.arange(x0, x1), np.arange(vol.shape[1]),
                            np.arange(vol.shape[2]), indexing="ij")
        src, valid = [], np.ones(grids[0].shape, dtype=bool)
        for c, n in enumerate(vol.shape):
            s = np.floor(grids[c] - disp[c, x0:x1] + 0.5).astype(np.int64)
            valid &= (s >= 0) & (s < n)
            src.append(np.clip(s, 0, n - 1))
        for name in names:
            warped = getattr(vol, name)[src[0], src[1], src[2]]
            warped[~valid] = 0
            getattr(out, name)[x0:x1] = warped
    return out
