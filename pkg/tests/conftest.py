import numpy as np
import pytest

from octa_forge._backend import BACKEND
from octa_forge.graph import VesselGraph

BACKENDS = ["python"] + (["compiled"] if BACKEND == "compiled" else [])


def random_graph(rng, n_edges, lo=0.0, hi=100.0, r_range=(1.0, 6.0)):
    """Random segments as a graph, endpoints uniform in [lo, hi]^3."""
    pos = rng.uniform(lo, hi, size=(2 * n_edges, 3))
    edges = np.arange(2 * n_edges).reshape(-1, 2)
    radii = rng.uniform(*r_range, size=n_edges)
    return VesselGraph(np.arange(2 * n_edges), pos, edges, radii)


def brute_force_raster(a, b, radii, shape, vs, origin=(0.0, 0.0, 0.0)):
    """Per-voxel distance to every segment; the winner has the largest radius, then lowest index."""
    centers = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), -1)
    centers = np.asarray(origin) + (centers + 0.5) * vs
    best_r = np.full(shape, -1.0)
    best_e = np.zeros(shape, dtype=np.int64)
    for e in range(len(a)):
        d = b[e] - a[e]
        w = centers - a[e]
        dd = float(d @ d)
        t = np.clip((w @ d) / dd, 0.0, 1.0) if dd > 0 else np.zeros(shape)
        diff = centers - (a[e] + t[..., None] * d)
        inside = (diff ** 2).sum(-1) <= radii[e] ** 2
        win = inside & (radii[e] > best_r)  # ties keep the earlier edge
        best_r[win] = radii[e]
        best_e[win] = e + 1
    return best_e


def tube_mask(shape, p0, p1, radius):
    """Voxels whose center (index coordinates) lies within ``radius`` of segment p0-p1."""
    g = np.stack(np.meshgrid(*[np.arange(n, dtype=float) for n in shape], indexing="ij"), -1)
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    t = np.clip(((g - p0) @ d) / (d @ d), 0, 1)
    return ((g - (p0 + t[..., None] * d)) ** 2).sum(-1) <= radius ** 2


def random_tube_phantom(rng, shape=(32, 32, 32), n_tubes=None):
    n_tubes = n_tubes or int(rng.integers(1, 5))
    m = np.zeros(shape, dtype=bool)
    for _ in range(n_tubes):
        p0 = rng.uniform(2, np.asarray(shape) - 3)
        p1 = rng.uniform(2, np.asarray(shape) - 3)
        m |= tube_mask(shape, p0, p1, rng.uniform(0.8, 3.0))
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
