"""Annotation-free baselines: global Otsu threshold and multiscale Frangi vesselness."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError

OTSU_BINS = 256


# --- Otsu ------------------------------------------------------------------------

def histogram_bins(volume, bins: int = OTSU_BINS):
    """Bin index of every voxel over the volume's own [min, max] range."""
    v = np.asarray(volume, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DataError("Otsu threshold undefined for a constant volume")
    idx = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    return idx, lo, hi


def otsu_bin(counts) -> int:
    """Boundary k in 1..bins-1 maximizing between-class variance.

    Class 0 holds bins ``< k``. Statistics use bin indices, so every sum is
    an exact integer and the variance, compared as the rational
    ``(n1*S0 - n0*S1)**2 / (n0*n1)``, is ranked without rounding. Ties go
    to the smallest k.
    """
    counts = [int(c) for c in np.asarray(counts).ravel()]
    n_tot = sum(counts)
    s_tot = sum(i * c for i, c in enumerate(counts))
    best_k, best = 1, None
    n0 = s0 = 0
    for k in range(1, len(counts)):
        n0 += counts[k - 1]
        s0 += (k - 1) * counts[k - 1]
        n1, s1 = n_tot - n0, s_tot - s0
        if n0 == 0 or n1 == 0:
            continue
        score = Fraction((n1 * s0 - n0 * s1) ** 2, n0 * n1)
        if best is None or score > best:
            best_k, best = k, score
    return best_k


def otsu_threshold(volume, bins: int = OTSU_BINS):
    """Return ``(threshold, mask)`` for a 256-bin Otsu split.

    ``threshold`` is the lower edge of the first foreground bin; ``mask``
    marks voxels whose bin lies at or above it.
    """
    idx, lo, hi = histogram_bins(volume, bins)
    k = otsu_bin(np.bincount(idx.ravel(), minlength=bins))
    threshold = lo + k * (hi - lo) / bins
    return threshold, idx >= k


# --- Frangi ------------------------------------------------------------------------

@dataclass
class FrangiConfig:
    scales_um: tuple = (2.0, 4.0, 6.0, 8.0)
    alpha: float = 0.5
    beta: float = 0.5
    c: Optional[float] = None  # None: half the largest Hessian norm at each scale
    bright_on_dark: bool = True
    threshold: float = 0.05

    def __post_init__(self):
        self.scales_um = tuple(float(s) for s in np.atleast_1d(self.scales_um))
        if not self.scales_um:
            raise ConfigError("Frangi needs at least one scale")
        if any(s <= 0 for s in self.scales_um):
            raise ConfigError("Frangi scales must be positive")
        if any(b <= a for a, b in zip(self.scales_um, self.scales_um[1:])):
            raise ConfigError("Frangi scales must be strictly increasing")
        for name in ("alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.c is not None and not self.c > 0:
            raise ConfigError("c must be positive")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")

    @classmethod
    def from_mapping(cls, data: dict) -> "FrangiConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data or {}) - known)
        if unknown:
            raise ConfigError(f"unknown Frangi parameter(s): {', '.join(unknown)}")
        try:
            return cls(**(data or {}))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid Frangi config: {exc}") from None

    def to_dict(self):
        d = asdict(self)
        d["scales_um"] = list(self.scales_um)
        return d


# The Hessian is computed on integers: the input is quantized to 16 bits and
# each 1D derivative kernel to integer taps whose absolute sum stays below
# 2**12. Three separable passes then stay below 2**52, so float64 arithmetic
# is exact and the result cannot depend on axis order or on flips. That makes
# 90-degree rotations commute with the filter bit for bit.
_INPUT_LEVELS = 2 ** 16
_KERNEL_BUDGET = 2 ** 12


def _int_kernels(sigma: float):
    radius = int(4.0 * sigma + 0.5)
    if 2 * (2 * radius + 1) >= _KERNEL_BUDGET:
        raise ConfigError(f"scale of {sigma:.1f} voxels is too large for the exact Hessian")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * x * x / (sigma * sigma))
    g /= g.sum()
    floats = (g, -x / sigma ** 2 * g, (x * x / sigma ** 4 - 1.0 / sigma ** 2) * g)
    budget = _KERNEL_BUDGET - 2 * (2 * radius + 1)
    out = []
    for order, k in enumerate(floats):
        ki = np.rint(k * (budget / np.abs(k).sum()))
        if order == 2:
            ki[radius] -= ki.sum()
        # normalize by the discrete moment the taps actually have, so constant,
        # linear and quadratic inputs come out exact despite the rounding
        if order == 0:
            scale = ki.sum()
        elif order == 1:
            scale = -(ki * x).sum()
        else:
            scale = 0.5 * (ki * x * x).sum()
        out.append((ki, scale))
    return out


def _sorted3(a, b, c):
    lo_ab, hi_ab = np.minimum(a, b), np.maximum(a, b)
    return np.minimum(lo_ab, c), np.maximum(lo_ab, np.minimum(hi_ab, c)), np.maximum(hi_ab, c)


def _sum3(a, b, c):
    s0, s1, s2 = _sorted3(a, b, c)
    return (s0 + s1) + s2


def _prod3(a, b, c):
    s0, s1, s2 = _sorted3(a, b, c)
    return (s0 * s1) * s2


def sym3_eigvals(hxx, hyy, hzz, hxy, hxz, hyz):
    """Eigenvalues of symmetric 3x3 matrices, invariant to signed axis permutations.

    Closed-form trigonometric solution. Every sum or product over the three
    axes is taken over sorted operands, so permuting axes (or flipping
    them) yields bit-identical eigenvalues. Returned in descending order.
    """
    m = _sum3(hxx, hyy, hzz) / 3.0
    k0, k1, k2 = hxx - m, hyy - m, hzz - m
    b0, b1, b2 = hyz, hxz, hxy  # off-diagonal opposite each diagonal entry
    p2 = (_sum3(k0 * k0, k1 * k1, k2 * k2) + 2.0 * _sum3(b0 * b0, b1 * b1, b2 * b2)) / 6.0
    p = np.sqrt(p2)
    sign = np.sign(b0) * np.sign(b1) * np.sign(b2)
    det = (_prod3(k0, k1, k2) + 2.0 * sign * _prod3(np.abs(b0), np.abs(b1), np.abs(b2))) \
        - _sum3(k0 * b0 * b0, k1 * b1 * b1, k2 * b2 * b2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(p > 0, det / (2.0 * p * p * p), 0.0)
    phi = np.arccos(np.clip(r, -1.0, 1.0)) / 3.0
    e1 = m + 2.0 * p * np.cos(phi)
    e3 = m + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * m - e1 - e3
    return e1, e2, e3


def hessian(volume, sigma_vox: float):
    """Scale-normalized (sigma**2) Gaussian Hessian components xx, yy, zz, xy, xz, yz."""
    v = np.asarray(volume, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        return tuple(np.zeros(v.shape) for _ in range(6))
    q = np.rint((v - lo) / (hi - lo) * _INPUT_LEVELS)
    (k0, s0), (k1, s1), (k2, s2) = _int_kernels(sigma_vox)
    ks = {0: k0, 1: k1, 2: k2}
    sc = {0: s0, 1: s1, 2: s2}

    def conv(a, order, axis):
        return ndimage.convolve1d(a, ks[order], axis=axis, mode="reflect")

    x_pass = {o: conv(q, o, 0) for o in (0, 1, 2)}
    unit = (hi - lo) / _INPUT_LEVELS * sigma_vox ** 2
    out = []
    for orders in ((2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1)):
        h = conv(conv(x_pass[orders[0]], orders[1], 1), orders[2], 2)
        f = sorted(sc[o] for o in orders)
        out.append(h * (unit / ((f[0] * f[1]) * f[2])))
    return tuple(out)


def _vesselness_at_scale(volume, sigma_vox, cfg: FrangiConfig):
    e = sym3_eigvals(*hessian(volume, sigma_vox))
    lam = np.stack(e)
    order = np.argsort(np.abs(lam), axis=0, kind="stable")
    l1, l2, l3 = np.take_along_axis(lam, order, axis=0)
    a1, a2, a3 = np.abs(l1), np.abs(l2), np.abs(l3)
    s = np.sqrt(_sum3(l1 * l1, l2 * l2, l3 * l3))
    if cfg.bright_on_dark:
        tube = (l2 < 0) & (l3 < 0)
    else:
        tube = (l2 > 0) & (l3 > 0)
    c = cfg.c if cfg.c is not None else 0.5 * float(s.max())
    out = np.zeros(volume.shape, dtype=np.float64)
    if c <= 0:
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        ra = a2 / a3
        rb = a1 / np.sqrt(a2 * a3)
    v = (1.0 - np.exp(-(ra * ra) / (2.0 * cfg.alpha ** 2))) \
        * np.exp(-(rb * rb) / (2.0 * cfg.beta ** 2)) \
        * (1.0 - np.exp(-(s * s) / (2.0 * c * c)))
    keep = tube & (a3 > 0)
    out[keep] = v[keep]
    return out


def frangi_vesselness(volume, cfg: FrangiConfig = None, voxel_size_um: float = 2.0) -> np.ndarray:
    """Per-voxel maximum Frangi vesselness over ``cfg.scales_um``, in [0, 1]."""
    cfg = cfg or FrangiConfig()
    volume = np.asarray(volume, dtype=np.float64)
    best = np.zeros(volume.shape, dtype=np.float64)
    for s_um in cfg.scales_um:
        np.maximum(best, _vesselness_at_scale(volume, s_um / voxel_size_um, cfg), out=best)
    return best


def frangi_segment(volume, cfg: FrangiConfig = None, voxel_size_um: float = 2.0) -> np.ndarray:
    cfg = cfg or FrangiConfig()
    v = frangi_vesselness(volume, cfg, voxel_size_um)
    if cfg.threshold == 0:
        return v > 0
    return v >= cfg.threshold
