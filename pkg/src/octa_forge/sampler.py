"""Grid sampling of vessel graphs into cubic patches.

A patch keeps an edge when the edge's capsule (its axis segment dilated by
the radius) touches the patch box. Patches are then screened, in order, for
depth, vessel density and presence of at least one large vessel.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .graph import VesselGraph, parse_graph, write_graph

ACCEPTED = "accepted"
REJECTED = "rejected"
TOO_DEEP = "too_deep"
TOO_SPARSE = "too_sparse"
NO_LARGE_VESSEL = "no_large_vessel"


def _triple(value, name):
    if np.isscalar(value):
        value = (value,) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ConfigError(f"{name} needs 3 entries, got {len(value)}")
    return value


@dataclass
class SamplerConfig:
    patch_shape_voxels: tuple = (250, 250, 250)
    voxel_size_um: float = 2.0
    stride_voxels: Optional[tuple] = None
    max_depth_um: float = 3000.0
    min_vessel_count: int = 2000
    large_vessel_radius_um: float = 13.0
    surface_z_um: Optional[float] = None
    depth_reference: str = "origin"

    def __post_init__(self):
        self.patch_shape_voxels = _triple(self.patch_shape_voxels, "patch_shape_voxels")
        if self.stride_voxels is None:
            self.stride_voxels = self.patch_shape_voxels
        self.stride_voxels = _triple(self.stride_voxels, "stride_voxels")
        if min(self.patch_shape_voxels) < 1:
            raise ConfigError("patch_shape_voxels must be positive")
        if min(self.stride_voxels) < 1:
            raise ConfigError("stride_voxels must be >= 1 on every axis")
        for name in ("voxel_size_um", "max_depth_um", "large_vessel_radius_um"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if int(self.min_vessel_count) < 1:
            raise ConfigError("min_vessel_count must be positive")
        self.min_vessel_count = int(self.min_vessel_count)
        if self.depth_reference not in ("origin", "center"):
            raise ConfigError("depth_reference must be 'origin' or 'center'")

    @property
    def extent_um(self) -> np.ndarray:
        return np.asarray(self.patch_shape_voxels, dtype=np.float64) * self.voxel_size_um

    @property
    def stride_um(self) -> np.ndarray:
        return np.asarray(self.stride_voxels, dtype=np.float64) * self.voxel_size_um

    def to_dict(self):
        d = asdict(self)
        d["patch_shape_voxels"] = list(self.patch_shape_voxels)
        d["stride_voxels"] = list(self.stride_voxels)
        return d


@dataclass
class GraphPatch:
    index: tuple
    origin_um: np.ndarray
    extent_um: np.ndarray
    sub_graph: VesselGraph
    status: str
    reason: Optional[str] = None
    vessel_count: int = 0
    source_edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    voxel_size_um: float = 2.0
    shape_voxels: tuple = (250, 250, 250)

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED

    @property
    def name(self) -> str:
        return "patch_{}_{}_{}".format(*self.index)

    def describe(self) -> dict:
        return {
            "index": list(self.index),
            "origin_um": self.origin_um.tolist(),
            "extent_um": self.extent_um.tolist(),
            "shape_voxels": list(self.shape_voxels),
            "voxel_size_um": self.voxel_size_um,
            "status": self.status,
            "reason": self.reason,
            "vessel_count": self.vessel_count,
        }


# --- geometry ----------------------------------------------------------------

def segment_box_distance_sq(a, b, lo, hi):
    """Squared distance from segments ``a[i]``-``b[i]`` to the box [lo, hi].

    Exact up to rounding: the squared distance is a convex piecewise
    quadratic in the segment parameter, so its minimum sits at a breakpoint
    or at the stationary point of one of the pieces.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), a.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), a.shape)
    d = b - a
    n = len(a)

    def f(t):
        p = a[:, None, :] + t[:, :, None] * d[:, None, :]
        below = np.maximum(lo[:, None, :] - p, 0.0)
        above = np.maximum(p - hi[:, None, :], 0.0)
        gap = below + above
        return (gap * gap).sum(axis=2)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - a) / d
        t_hi = (hi - a) / d
    br = np.concatenate([t_lo, t_hi, np.zeros((n, 1)), np.ones((n, 1))], axis=1)
    br = np.where(np.isfinite(br), np.clip(br, 0.0, 1.0), 0.0)
    br.sort(axis=1)
    mid = 0.5 * (br[:, :-1] + br[:, 1:])
    p_mid = a[:, None, :] + mid[:, :, None] * d[:, None, :]
    bound = np.where(p_mid < lo[:, None, :], lo[:, None, :],
                     np.where(p_mid > hi[:, None, :], hi[:, None, :], np.nan))
    active = ~np.isnan(bound)
    dd = d[:, None, :]
    num = np.where(active, dd * (a[:, None, :] - bound), 0.0).sum(axis=2)
    den = np.where(active, dd * dd, 0.0).sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_star = np.where(den > 0, -num / den, br[:, :-1])
    t_star = np.clip(t_star, br[:, :-1], br[:, 1:])
    return np.minimum(f(br).min(axis=1), f(t_star).min(axis=1))


def capsules_intersect_box(a, b, radii, lo, hi):
    radii = np.asarray(radii, dtype=np.float64)
    return segment_box_distance_sq(a, b, lo, hi) <= radii * radii


def clip_segments(a, b, radii, lo, hi):
    """Clip segments to the box grown by each radius along every axis.

    Returns ``(a_clip, b_clip, keep)``. Rows with ``keep`` false have no
    part inside the grown box. Unclipped endpoints are returned unchanged.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    r = np.asarray(radii, dtype=np.float64).reshape(-1, 1)
    glo = np.asarray(lo, dtype=np.float64) - r
    ghi = np.asarray(hi, dtype=np.float64) + r
    d = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (glo - a) / d
        tb = (ghi - a) / d
    flat = d == 0
    outside_flat = flat & ((a < glo) | (a > ghi))
    t_enter = np.where(flat, -np.inf, np.minimum(ta, tb))
    t_exit = np.where(flat, np.inf, np.maximum(ta, tb))
    t0 = np.maximum(t_enter.max(axis=1), 0.0)
    t1 = np.minimum(t_exit.min(axis=1), 1.0)
    keep = (t0 <= t1) & ~outside_flat.any(axis=1)
    a_c = np.where((t0 > 0)[:, None], a + t0[:, None] * d, a)
    b_c = np.where((t1 < 1)[:, None], a + t1[:, None] * d, b)
    return a_c, b_c, keep


def clip_edge_to_box(a, b, radius, lo, hi):
    """Part of one edge axis relevant to the box, or ``None``.

    ``None`` means the capsule does not touch the box at all.
    """
    if not capsules_intersect_box(a, b, [radius], lo, hi)[0]:
        return None
    a_c, b_c, keep = clip_segments(a, b, [radius], lo, hi)
    if not keep[0]:
        return None
    return a_c[0], b_c[0]


# --- sampling ------------------------------------------------------------------

def grid_shape(graph: VesselGraph, cfg: SamplerConfig) -> tuple:
    bmin, bmax = graph.bounding_box
    span = bmax - bmin
    ext, stride = cfg.extent_um, cfg.stride_um
    counts = []
    for k in range(3):
        if span[k] + 1e-9 < ext[k]:
            counts.append(0)
        else:
            counts.append(int(np.floor((span[k] - ext[k]) / stride[k] + 1e-9)) + 1)
    return tuple(counts)


def _candidate_pairs(emin, emax, bmin, ext, stride, counts):
    """(edge, flat patch index) pairs whose bounding boxes may overlap."""
    lo = np.ceil((emin - bmin - ext) / stride).astype(np.int64) - 1
    hi = np.floor((emax - bmin) / stride).astype(np.int64) + 1
    lo = np.clip(lo, 0, np.array(counts) - 1)
    hi = np.clip(hi, -1, np.array(counts) - 1)
    n = np.maximum(hi - lo + 1, 0)
    total = n.prod(axis=1)
    edge = np.repeat(np.arange(len(emin)), total)
    local = np.arange(total.sum()) - np.repeat(np.cumsum(total) - total, total)
    nz, ny = n[edge, 2], n[edge, 1]
    iz = lo[edge, 2] + local % nz
    iy = lo[edge, 1] + (local // nz) % ny
    ix = lo[edge, 0] + local // (nz * ny)
    flat = (ix * counts[1] + iy) * counts[2] + iz
    return edge, flat


def _sub_graph(graph, edge_idx, a, b, radii, lo, hi):
    a_c, b_c, _ = clip_segments(a, b, radii, lo, hi)
    ends = graph.edges[edge_idx]
    ids, pos, key_to_id = [], [], {}
    new_edges = np.empty((len(edge_idx), 2), dtype=np.int64)
    for row in range(len(edge_idx)):
        for side, point, orig_point in ((0, a_c[row], a[row]), (1, b_c[row], b[row])):
            if np.array_equal(point, orig_point):
                key = ("node", int(ends[row, side]))
            else:
                key = ("clip", row, side)
            nid = key_to_id.get(key)
            if nid is None:
                nid = len(ids)
                key_to_id[key] = nid
                ids.append(nid)
                pos.append(point)
            new_edges[row, side] = nid
    return VesselGraph(
        np.array(ids, dtype=np.int64),
        np.array(pos, dtype=np.float64).reshape(-1, 3),
        new_edges,
        radii.copy(),
    )


def sample_patches(graph: VesselGraph, cfg: SamplerConfig) -> list[GraphPatch]:
    """Enumerate grid patches in lexicographic (x, y, z) index order."""
    if graph.n_nodes == 0:
        raise DataError("cannot sample an empty graph")
    counts = grid_shape(graph, cfg)
    if 0 in counts:
        warnings.warn(
            f"graph bounding box is smaller than one patch ({cfg.extent_um.tolist()} um); "
            "no patches sampled",
            stacklevel=2,
        )
        return []
    bmin, _ = graph.bounding_box
    surface = bmin[2] if cfg.surface_z_um is None else float(cfg.surface_z_um)
    ext, stride = cfg.extent_um, cfg.stride_um
    a, b = graph.edge_segments()
    radii = graph.radii
    emin = np.minimum(a, b) - radii[:, None]
    emax = np.maximum(a, b) + radii[:, None]
    edge, flat = _candidate_pairs(emin, emax, bmin, ext, stride, counts)

    iz = flat % counts[2]
    iy = (flat // counts[2]) % counts[1]
    ix = flat // (counts[2] * counts[1])
    origin = bmin + np.stack([ix, iy, iz], axis=1) * stride
    hit = capsules_intersect_box(a[edge], b[edge], radii[edge], origin, origin + ext)
    edge, flat = edge[hit], flat[hit]
    order = np.lexsort((edge, flat))
    edge, flat = edge[order], flat[order]
    n_patches = counts[0] * counts[1] * counts[2]
    bounds = np.searchsorted(flat, np.arange(n_patches + 1))

    patches = []
    for p in range(n_patches):
        idx = (p // (counts[1] * counts[2]), (p // counts[2]) % counts[1], p % counts[2])
        lo = bmin + np.array(idx) * stride
        hi = lo + ext
        members = edge[bounds[p]:bounds[p + 1]]
        depth_z = lo[2] if cfg.depth_reference == "origin" else lo[2] + 0.5 * ext[2]
        if depth_z - surface > cfg.max_depth_um:
            reason = TOO_DEEP
        elif len(members) < cfg.min_vessel_count:
            reason = TOO_SPARSE
        elif not np.any(radii[members] > cfg.large_vessel_radius_um):
            reason = NO_LARGE_VESSEL
        else:
            reason = None
        sub = _sub_graph(graph, members, a[members], b[members], radii[members], lo, hi)
        patches.append(GraphPatch(
            index=idx,
            origin_um=lo,
            extent_um=ext.copy(),
            sub_graph=sub,
            status=ACCEPTED if reason is None else REJECTED,
            reason=reason,
            vessel_count=int(len(members)),
            source_edges=members,
            voxel_size_um=float(cfg.voxel_size_um),
            shape_voxels=tuple(cfg.patch_shape_voxels),
        ))
    return patches


# --- persistence -----------------------------------------------------------

def write_patch(patch: GraphPatch, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_graph(patch.sub_graph, directory / "nodes.csv", directory / "edges.csv")
    (directory / "patch.json").write_text(json.dumps(patch.describe(), indent=2) + "\n")
    return directory


def read_patch(directory) -> GraphPatch:
    directory = Path(directory)
    meta_path = directory / "patch.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise DataError(f"{meta_path}: patch description not found") from None
    graph = parse_graph(directory / "nodes.csv", directory / "edges.csv")
    return GraphPatch(
        index=tuple(meta.get("index", (0, 0, 0))),
        origin_um=np.asarray(meta["origin_um"], dtype=np.float64),
        extent_um=np.asarray(meta["extent_um"], dtype=np.float64),
        sub_graph=graph,
        status=meta.get("status", ACCEPTED),
        reason=meta.get("reason"),
        vessel_count=int(meta.get("vessel_count", graph.n_edges)),
        voxel_size_um=float(meta["voxel_size_um"]),
        shape_voxels=tuple(int(v) for v in meta["shape_voxels"]),
    )


def write_patches(patches, cfg: SamplerConfig, out_dir, graph_counts=None) -> Path:
    """Write accepted patches plus a ``patches.json`` manifest of every cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = []
    for patch in patches:
        entry = patch.describe()
        if patch.accepted:
            write_patch(patch, out_dir / patch.name)
            entry["dir"] = patch.name
        cells.append(entry)
    manifest = {
        "config": cfg.to_dict(),
        "grid_shape": list(graph_counts) if graph_counts is not None else None,
        "n_accepted": sum(p.accepted for p in patches),
        "patches": cells,
    }
    path = out_dir / "patches.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
