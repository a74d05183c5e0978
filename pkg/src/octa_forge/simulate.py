"""Turn a labeled volume into a synthetic cerebral 3D OCTA intensity volume.

Three artifacts are modelled on top of a radius-driven vessel intensity:

* ``A`` angle-dependent signal loss of microvessels running along the beam,
* ``T`` projection tails that decay below the lower wall of each vessel,
* ``L`` local granular noise (additive Gaussian noise, then smoothing).

``C`` (elastic deformation) acts on the labeled volume before simulation
and is handled by :mod:`octa_forge.voxelizer`.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.special import expit

from ._backend import get_kernels
from .errors import ConfigError, InvariantError

STAGE_LETTERS = "LTAC"
_TAIL_STREAM = 0x7A11
_NOISE_STREAM = 0x4E01


def parse_stages(stages) -> frozenset:
    if stages is None:
        return frozenset()
    if isinstance(stages, str):
        letters = [c for c in stages.upper() if not c.isspace() and c not in ",+"]
    else:
        letters = [str(s).upper() for s in stages]
    bad = [c for c in letters if c not in STAGE_LETTERS]
    if bad:
        raise ConfigError(f"unknown stage(s) {bad}; expected a subset of {STAGE_LETTERS}")
    return frozenset(letters)


def stages_str(stages) -> str:
    return "".join(c for c in STAGE_LETTERS if c in stages)


@dataclass
class SimConfig:
    # default values are tunable placeholders, not published settings
    r_max: float = 15.0
    r_micro: float = 5.0
    gamma_delta: float = 1.0
    lambda_int: float = 0.5
    alpha_tail_len: float = 40.0
    alpha_tail_int: float = 0.6
    mu_tail: float = 0.0
    sigma_tail: float = 0.05
    mu_n: float = 0.0
    sigma_n: float = 0.3
    sigma_s: float = 1.0
    i_min: float = 0.0
    i_max: float = 1.0
    k_ang: float = 0.05
    tail_floor_kappa: float = 0.02
    stages: frozenset = frozenset("LTA")
    seed: int = 0

    def __post_init__(self):
        self.stages = parse_stages(self.stages)
        self.seed = int(self.seed)
        if not self.r_max > 0:
            raise ConfigError("r_max must be > 0")
        if not self.i_min < self.i_max:
            raise ConfigError("i_min must be < i_max")
        for name in ("sigma_tail", "sigma_n", "sigma_s", "alpha_tail_len", "k_ang"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 < self.tail_floor_kappa <= 1:
            raise ConfigError("tail_floor_kappa must be in (0, 1]")

    @classmethod
    def from_mapping(cls, data: dict, **overrides) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        merged = {**dict(data or {}), **{k: v for k, v in overrides.items() if v is not None}}
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError(f"unknown simulation parameter(s): {', '.join(unknown)}")
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_stages(self, stages) -> "SimConfig":
        d = asdict(self)
        d["stages"] = parse_stages(stages)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = stages_str(self.stages)
        return d


@dataclass
class SyntheticVolume:
    intensity: np.ndarray
    voxel_size_um: float

    @property
    def shape(self):
        return self.intensity.shape


# --- per-voxel intensity model ------------------------------------------------

def radius_intensity(r, cfg: SimConfig):
    """Radius clipped to [0, r_max], scaled to [0, 1]."""
    return np.clip(r, 0.0, cfg.r_max) / cfg.r_max


def angle_intensity(theta_z, r, cfg: SimConfig):
    """Angle term: exponential loss away from 90 degrees, lifted for macrovessels.

    The sigmoid over radius gives a soft micro/macro threshold; taking the
    maximum means the loss only bites below roughly ``r_micro``.
    """
    micro = np.exp(-cfg.k_ang * (90.0 - np.asarray(theta_z, dtype=np.float64)))
    macro = expit(cfg.gamma_delta * (np.asarray(r, dtype=np.float64) - cfg.r_micro))
    return np.maximum(micro, macro)


def voxel_intensity(v_rad, v_ang, cfg: SimConfig):
    return cfg.lambda_int * v_ang + v_rad


def lower_wall_mask(labels) -> np.ndarray:
    """Labeled voxels whose deeper neighbor (z + 1) is background or outside."""
    on = np.asarray(labels) > 0
    below = np.zeros_like(on)
    below[:, :, :-1] = on[:, :, 1:]
    return on & ~below


def is_lower_wall(labels, voxel) -> bool:
    x, y, z = voxel
    if not labels[x, y, z]:
        raise ValueError(f"voxel {tuple(voxel)} is not labeled")
    return z + 1 >= labels.shape[2] or not labels[x, y, z + 1]


def tail_length(v_rad, cfg: SimConfig):
    return np.rint(cfg.alpha_tail_len * np.asarray(v_rad, dtype=np.float64)).astype(np.int64)


def tail_profile(v_int, v_rad, cfg: SimConfig, rng=None) -> np.ndarray:
    """Tail intensities for depths z+1 ... z+l below an emitting voxel.

    Term i is ``v_int * alpha_tail_int * kappa**(i / l)``, i.e. a geometric
    sequence whose last term has decayed to ``kappa`` times the first. Each
    term gets Gaussian noise and is clipped to [0, v_int].
    """
    if v_int < 0:
        raise ValueError("v_int must be >= 0")
    l = int(tail_length(v_rad, cfg))
    if l <= 0:
        return np.zeros(0)
    i = np.arange(l, dtype=np.float64)
    terms = v_int * cfg.alpha_tail_int * np.power(cfg.tail_floor_kappa, i / l)
    if cfg.sigma_tail != 0:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        terms = terms + rng.normal(cfg.mu_tail, cfg.sigma_tail, size=l)
    else:
        terms = terms + cfg.mu_tail
    return np.clip(terms, 0.0, v_int)


def clip_and_scale(volume, cfg: SimConfig) -> np.ndarray:
    clipped = np.clip(volume, cfg.i_min, cfg.i_max)
    return (clipped - cfg.i_min) / (cfg.i_max - cfg.i_min)


def add_granular_noise(volume, cfg: SimConfig, rng=None) -> np.ndarray:
    """Additive Gaussian noise followed by Gaussian smoothing (no clipping)."""
    rng = _noise_rng(cfg) if rng is None else rng
    out = np.asarray(volume, dtype=np.float64)
    if cfg.sigma_n != 0:
        out = out + (rng.standard_normal(out.shape) * cfg.sigma_n + cfg.mu_n)
    else:
        out = out + cfg.mu_n
    if cfg.sigma_s > 0:
        out = ndimage.gaussian_filter(out, cfg.sigma_s, mode="reflect", truncate=4.0)
    return out


def granular_noise(volume, cfg: SimConfig, rng=None) -> np.ndarray:
    """Noise, smoothing, then clip to [i_min, i_max] and scale to [0, 1]."""
    return clip_and_scale(add_granular_noise(volume, cfg, rng), cfg)


def _noise_rng(cfg):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, _NOISE_STREAM]))


def tail_key(seed: int) -> int:
    return int(np.random.SeedSequence([int(seed), _TAIL_STREAM]).generate_state(1, np.uint64)[0])


# --- full simulation --------------------------------------------------------------

def vessel_intensities(vol, cfg: SimConfig):
    """(flat indices, v_rad, v_int) for every labeled voxel."""
    idx = np.flatnonzero(vol.labels.reshape(-1))
    r = vol.meta_radius.reshape(-1)[idx].astype(np.float64)
    theta = vol.meta_theta.reshape(-1)[idx].astype(np.float64)
    vid = vol.meta_vessel.reshape(-1)[idx]
    if np.any(vid == 0) or np.any(~(r > 0)) or np.any(~((theta >= 0) & (theta <= 90))):
        raise InvariantError("labeled voxel without valid radius/angle/vessel metadata")
    v_rad = radius_intensity(r, cfg)
    if "A" in cfg.stages:
        v_int = voxel_intensity(v_rad, angle_intensity(theta, r, cfg), cfg)
    else:
        v_int = v_rad
    return idx, v_rad, v_int


def simulate_stages(vol, cfg: SimConfig, threads: int = 1, backend: Optional[str] = None) -> dict:
    """Run the simulation and return every intermediate volume.

    Keys: ``vessels`` (vessel intensities only), ``tails`` (after tail
    artifacts), ``noisy`` (after granular noise and smoothing, before
    clipping) and ``final`` (clipped and scaled to [0, 1], float32).
    Stages that are switched off pass their input through unchanged.
    """
    k = get_kernels(backend)
    idx, v_rad, v_int = vessel_intensities(vol, cfg)
    vessels = np.zeros(vol.shape, dtype=np.float64)
    vessels.reshape(-1)[idx] = v_int
    out = {"vessels": vessels}

    tails = vessels
    if "T" in cfg.stages:
        tails = vessels.copy()
        emit = lower_wall_mask(vol.labels).reshape(-1)[idx]
        e_lin = idx[emit]
        ex, ey, ez = (np.ascontiguousarray(c, dtype=np.int64)
                      for c in np.unravel_index(e_lin, vol.shape))
        e_int = np.ascontiguousarray(v_int[emit])
        e_rad = np.ascontiguousarray(v_rad[emit])
        key = tail_key(cfg.seed)

        def run(span):
            k.add_tails(ex, ey, ez, e_int, e_rad, tails, float(cfg.alpha_tail_len),
                        float(cfg.alpha_tail_int), float(cfg.mu_tail), float(cfg.sigma_tail),
                        float(cfg.tail_floor_kappa), key, span[0], span[1])

        # columns never share tail voxels, so splitting by x is order-free
        cuts = np.searchsorted(ex, [lo for lo, _ in _x_slabs(vol.shape[0], threads)] + [vol.shape[0]])
        spans = [(int(lo), int(hi)) for lo, hi in zip(cuts[:-1], cuts[1:]) if hi > lo]
        if len(spans) <= 1:
            run((0, len(ex)))
        else:
            with ThreadPoolExecutor(len(spans)) as pool:
                list(pool.map(run, spans))
    out["tails"] = tails

    noisy = tails
    if "L" in cfg.stages:
        noisy = add_granular_noise(tails, cfg)
    out["noisy"] = noisy
    out["final"] = clip_and_scale(noisy, cfg).astype(np.float32)
    return out


def _x_slabs(n, parts):
    parts = max(1, min(int(parts), n))
    b = np.linspace(0, n, parts + 1).round().astype(int)
    return list(zip(b[:-1], b[1:]))


def simulate(vol, cfg: SimConfig, threads: int = 1, backend: Optional[str] = None) -> SyntheticVolume:
    """Synthetic OCTA intensities in [0, 1] for a labeled volume."""
    final = simulate_stages(vol, cfg, threads=threads, backend=backend)["final"]
    return SyntheticVolume(final, vol.voxel_size_um)
