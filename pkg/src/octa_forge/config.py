"""TOML configuration for the end-to-end pipeline.

Layout (every table optional)::

    seed = 0
    output_dir = "out"

    [graph]      nodes = "nodes.csv", edges = "edges.csv"
    [sampler]    SamplerConfig fields
    [deformation] smoothness_sigma, magnitude
    [sim]        SimConfig fields (``seed`` here is ignored; the top-level seed wins)
    [frangi]     FrangiConfig fields
    [outputs]    baselines, render_axis, render_indices, write_metadata, max_patches

Relative paths resolve against the config file's directory. Values given on
the command line override the file, which overrides the defaults.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .baselines import FrangiConfig
from .errors import ConfigError
from .sampler import SamplerConfig
from .simulate import SimConfig

THREADS_ENV = "OCTA_FORGE_THREADS"
BASELINE_METHODS = ("otsu", "frangi")


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def section(data: dict, name: str) -> dict:
    """A named table, or the top level when the file is flat."""
    if name in data:
        table = data[name]
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        return dict(table)
    return {k: v for k, v in data.items() if not isinstance(v, dict)}


def _build(cls, data, what):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {what} parameter(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {what} config: {exc}") from None


def sampler_from_mapping(data: dict) -> SamplerConfig:
    return _build(SamplerConfig, dict(data or {}), "sampler")


def resolve_threads(threads: Optional[int] = None) -> int:
    """Flag, then ``OCTA_FORGE_THREADS``, then the number of cores."""
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    return threads


@dataclass
class DeformationConfig:
    smoothness_sigma: float = 8.0
    magnitude: float = 3.0

    def __post_init__(self):
        if self.smoothness_sigma < 0 or self.magnitude < 0:
            raise ConfigError("deformation parameters must be >= 0")


@dataclass
class OutputConfig:
    baselines: tuple = ()
    render_axis: str = "y"
    render_indices: tuple = ()
    write_metadata: bool = False
    max_patches: Optional[int] = None

    def __post_init__(self):
        self.baselines = tuple(self.baselines)
        bad = [m for m in self.baselines if m not in BASELINE_METHODS]
        if bad:
            raise ConfigError(f"unknown baseline(s) {bad}; choose from {list(BASELINE_METHODS)}")
        if self.render_axis not in ("x", "y", "z"):
            raise ConfigError("render_axis must be x, y or z")
        self.render_indices = tuple(int(i) for i in self.render_indices)
        if self.max_patches is not None and int(self.max_patches) < 0:
            raise ConfigError("max_patches must be >= 0")


@dataclass
class PipelineConfig:
    nodes: Optional[Path] = None
    edges: Optional[Path] = None
    output_dir: Path = Path("octa_forge_out")
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    frangi: FrangiConfig = field(default_factory=FrangiConfig)
    deformation: DeformationConfig = field(default_factory=DeformationConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        self.seed = int(self.seed)
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        self.output_dir = Path(self.output_dir)

    @property
    def stages(self):
        return self.sim.stages

    def to_dict(self) -> dict:
        """Path-free description; safe to hash."""
        sim = self.sim.to_dict()
        sim.pop("seed")
        return {
            "seed": self.seed,
            "sampler": self.sampler.to_dict(),
            "sim": sim,
            "frangi": self.frangi.to_dict(),
            "deformation": vars(self.deformation).copy(),
            "outputs": {
                "baselines": list(self.outputs.baselines),
                "render_axis": self.outputs.render_axis,
                "render_indices": list(self.outputs.render_indices),
                "write_metadata": self.outputs.write_metadata,
                "max_patches": self.outputs.max_patches,
            },
        }


_TOP_KEYS = {"seed", "output_dir", "graph", "sampler", "deformation", "sim", "frangi", "outputs"}


def pipeline_config_from_mapping(data: dict, base_dir=None, **overrides) -> PipelineConfig:
    """Build a ``PipelineConfig``; non-None ``overrides`` replace file values.

    Recognized overrides: nodes, edges, output_dir, seed, stages.
    """
    data = dict(data or {})
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def path_of(value):
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    graph = dict(data.get("graph", {}))
    bad = sorted(set(graph) - {"nodes", "edges"})
    if bad:
        raise ConfigError(f"unknown [graph] key(s): {', '.join(bad)}")

    ov = {k: v for k, v in overrides.items() if v is not None}
    seed = ov.get("seed", data.get("seed", 0))
    sim_data = dict(data.get("sim", {}))
    sim_data.pop("seed", None)
    if "stages" in ov:
        sim_data["stages"] = ov["stages"]

    return PipelineConfig(
        nodes=Path(ov["nodes"]) if "nodes" in ov else path_of(graph.get("nodes")),
        edges=Path(ov["edges"]) if "edges" in ov else path_of(graph.get("edges")),
        output_dir=Path(ov["output_dir"]) if "output_dir" in ov
        else path_of(data.get("output_dir", "octa_forge_out")),
        seed=seed,
        sampler=sampler_from_mapping(data.get("sampler", {})),
        sim=SimConfig.from_mapping(sim_data, seed=seed),
        frangi=FrangiConfig.from_mapping(data.get("frangi", {})),
        deformation=_build(DeformationConfig, dict(data.get("deformation", {})), "deformation"),
        outputs=_build(OutputConfig, dict(data.get("outputs", {})), "outputs"),
    )


def load_pipeline_config(path=None, **overrides) -> PipelineConfig:
    if path is None:
        return pipeline_config_from_mapping({}, **overrides)
    path = Path(path)
    return pipeline_config_from_mapping(load_toml(path), base_dir=path.parent, **overrides)
