"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --size 96 --repeat 3

Each row reports the best of ``--repeat`` runs and checks that both
backends produced the same result.
"""
import argparse
import time

import numpy as np

from octa_forge._backend import BACKEND, get_kernels
from octa_forge.metrics import skeletonize
from octa_forge.simulate import SimConfig, simulate_stages
from octa_forge.voxelizer import rasterize


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(size, seed):
    rng = np.random.default_rng(seed)
    ext = size * 2.0
    n = size * 8
    a = rng.uniform(0, ext, (n, 3))
    b = a + rng.normal(scale=ext / 8, size=(n, 3))
    radii = rng.uniform(1.5, 6.0, n)
    radii[:4] = 16.0
    vol = rasterize(a, b, radii, (size,) * 3, 2.0)
    mask = vol.labels[: size // 2, : size // 2, : size // 2] > 0
    cfg = SimConfig(stages="T", seed=seed)
    return {
        "rasterize": lambda backend: rasterize(a, b, radii, (size,) * 3, 2.0, backend=backend).meta_vessel,
        "tails": lambda backend: simulate_stages(vol, cfg, backend=backend)["tails"],
        "thinning": lambda backend: skeletonize(mask, backend=backend),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=96, help="volume edge in voxels")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if BACKEND != "compiled":
        try:
            get_kernels("compiled")
        except ImportError:
            raise SystemExit("compiled extension not built; run `pip install -e .` first")

    print(f"volume {args.size}^3, best of {args.repeat}")
    print(f"{'kernel':<10} {'compiled s':>11} {'python s':>10} {'speedup':>8}  match")
    for name, fn in cases(args.size, args.seed).items():
        tc, rc = best_of(lambda: fn("compiled"), args.repeat)
        tp, rp = best_of(lambda: fn("python"), args.repeat)
        # tail noise may differ in the last ulp between libm and numpy
        same = np.array_equal(rc, rp) if name != "tails" else np.allclose(rc, rp, rtol=0, atol=1e-12)
        print(f"{name:<10} {tc:>11.4f} {tp:>10.4f} {tp / tc:>7.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
