"""Deterministic stand-in vessel graph used by the tests and the CLI demo.

It is not anatomical. A jittered capillary lattice fills a
500 x 500 x 1500 um block. A pial vessel runs along the surface, an
arteriole dives from it, and a second large vessel crosses at mid depth.
The deepest 500 um cube therefore has no vessel above 13 um.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .graph import VesselGraph, parse_graph, write_graph

EXTENT_UM = (500.0, 500.0, 1500.0)


def make_demo_graph(seed: int = 0, spacing_um: float = 30.0, link_prob: float = 0.4) -> VesselGraph:
    rng = np.random.default_rng(seed)
    ext = np.asarray(EXTENT_UM)
    n = (ext // spacing_um).astype(int) + 1
    grid = np.stack(np.meshgrid(*[np.arange(k) for k in n], indexing="ij"), axis=-1).reshape(-1, 3)
    pos = grid * spacing_um + rng.uniform(-0.35, 0.35, grid.shape) * spacing_um
    pos = np.clip(pos, 0.0, ext)
    # pin two corners so the bounding box is exactly the block
    pos[0] = 0.0
    pos[-1] = ext
    flat = lambda g: (g[:, 0] * n[1] + g[:, 1]) * n[2] + g[:, 2]

    edges, radii = [], []
    for axis in range(3):
        step = np.zeros(3, dtype=int)
        step[axis] = 1
        src = grid[grid[:, axis] < n[axis] - 1]
        keep = rng.random(len(src)) < link_prob
        src = src[keep]
        edges.append(np.stack([flat(src), flat(src + step)], axis=1))
        radii.append(rng.uniform(2.0, 3.5, len(src)))
    edges = np.concatenate(edges)
    radii = np.concatenate(radii)

    positions = [pos]
    next_id = len(pos)
    extra_edges, extra_radii = [], []

    def chain(points, r_start, r_end):
        nonlocal next_id
        pts = np.asarray(points, dtype=np.float64)
        ids = np.arange(next_id, next_id + len(pts))
        next_id += len(pts)
        positions.append(pts)
        rs = np.linspace(r_start, r_end, len(pts) - 1)
        for i in range(len(pts) - 1):
            extra_edges.append((ids[i], ids[i + 1]))
            extra_radii.append(rs[i])
        return ids

    t = np.linspace(0.0, 1.0, 21)
    pial = np.stack([10 + 480 * t, 180 + 40 * np.sin(3 * t), 45 + 10 * t], axis=1)
    chain(pial, 22.0, 18.0)
    dive = np.stack([250 + 15 * np.sin(5 * t), 200 + 10 * t, 60 + 560 * t], axis=1)
    chain(dive, 12.0, 6.0)
    mid = np.stack([60 + 380 * t, 420 - 300 * t, 760 + 30 * np.cos(4 * t)], axis=1)
    chain(mid, 16.0, 15.0)

    all_pos = np.concatenate(positions)
    all_edges = np.concatenate([edges, np.asarray(extra_edges, dtype=np.int64)])
    all_radii = np.concatenate([radii, np.asarray(extra_radii)])
    return VesselGraph(np.arange(len(all_pos)), all_pos, all_edges, all_radii)


def demo_graph_files() -> tuple[Path, Path]:
    """Paths of the bundled CSV copy of ``make_demo_graph(0)``."""
    base = Path(str(resources.files("octa_forge") / "data"))
    return base / "demo_nodes.csv", base / "demo_edges.csv"


def load_demo_graph() -> VesselGraph:
    return parse_graph(*demo_graph_files())


def write_demo_graph(directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nodes, edges = directory / "demo_nodes.csv", directory / "demo_edges.csv"
    write_graph(make_demo_graph(0), nodes, edges)
    return nodes, edges
