"""End-to-end run: graph -> patches -> labeled volumes -> synthetic volumes.

Each accepted patch yields a pair written under ``<output_dir>/<patch name>/``:
``label.{json,bin}`` (uint8, the voxelized ground truth) and
``intensity.{json,bin}`` (float32 synthetic OCTA). ``manifest.json`` lists
every artifact with its SHA-256. Nothing in the manifest depends on the thread
count or on absolute paths, so two runs with the same seed hash identically.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import frangi_segment, otsu_threshold
from .config import PipelineConfig, resolve_threads
from .errors import ConfigError, OctaForgeError, StageError
from .graph import parse_graph
from .metrics import dice
from .sampler import grid_shape, sample_patches, write_patches
from .simulate import simulate, stages_str
from .voxelizer import apply_elastic_deformation, generate_deformation, voxelize
from .volume_io import render_slices, write_labeled_volume, write_volume

log = logging.getLogger(__name__)

_SIM_STREAM = 1
_DEFORM_STREAM = 2


def derive_seed(seed: int, index, stream: int) -> int:
    """Independent 32-bit seed for one patch and one stochastic stage."""
    return int(np.random.SeedSequence([int(seed), *map(int, index), int(stream)]).generate_state(1)[0])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (OctaForgeError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


def _process_patch(patch, cfg: PipelineConfig, out_dir: Path, inner_threads: int) -> dict:
    pdir = out_dir / patch.name
    pdir.mkdir(parents=True, exist_ok=True)
    vol = _stage("voxelize", voxelize, patch, threads=inner_threads)
    if "C" in cfg.stages:
        field = generate_deformation(vol.shape, cfg.deformation.smoothness_sigma,
                                     cfg.deformation.magnitude,
                                     seed=derive_seed(cfg.seed, patch.index, _DEFORM_STREAM))
        vol = _stage("deform", apply_elastic_deformation, vol, field)

    artifacts = {}
    meta = {"patch": patch.name, "stages": stages_str(cfg.stages)}
    write_volume(vol.labels, pdir / "label", vol.voxel_size_um, "label", meta)
    artifacts["label"] = "label"
    if cfg.outputs.write_metadata:
        write_labeled_volume(vol, pdir / "labeled")

    sim_cfg = cfg.sim.__class__.from_mapping(
        {**cfg.sim.to_dict(), "seed": derive_seed(cfg.seed, patch.index, _SIM_STREAM)})
    synth = _stage("simulate", simulate, vol, sim_cfg, threads=inner_threads)
    write_volume(synth.intensity, pdir / "intensity", synth.voxel_size_um, "intensity", meta)
    artifacts["intensity"] = "intensity"

    scores = {}
    label = vol.labels > 0
    for method in cfg.outputs.baselines:
        if method == "otsu":
            _, mask = _stage("baseline", otsu_threshold, synth.intensity)
        else:
            mask = _stage("baseline", frangi_segment, synth.intensity, cfg.frangi, synth.voxel_size_um)
        write_volume(mask.astype(np.uint8), pdir / f"baseline_{method}", vol.voxel_size_um, "label", meta)
        artifacts[f"baseline_{method}"] = f"baseline_{method}"
        scores[method] = {"dice": dice(mask, label)}

    renders = []
    if cfg.outputs.render_indices:
        paths = _stage("render", render_slices, synth.intensity, cfg.outputs.render_axis,
                       cfg.outputs.render_indices, pdir / "render", "intensity")
        renders = [p.relative_to(out_dir).as_posix() for p in paths]

    files = {}
    for name, stem in artifacts.items():
        for ext in (".json", ".bin"):
            rel = f"{patch.name}/{stem}{ext}"
            files[rel] = file_sha256(out_dir / rel)
    for rel in renders:
        files[rel] = file_sha256(out_dir / rel)
    entry = {
        "patch": patch.name,
        "index": list(patch.index),
        "origin_um": [float(v) for v in patch.origin_um],
        "shape": list(vol.shape),
        "vessel_count": patch.vessel_count,
        "label_voxels": int(np.count_nonzero(vol.labels)),
        "files": files,
    }
    if scores:
        entry["baselines"] = scores
    return entry


def run_pipeline(cfg: PipelineConfig, threads=None) -> dict:
    """Run every stage and return the manifest (also written to disk).

    A failing stage raises :class:`StageError`. Patch directories created by
    the failed run are removed and ``manifest.json`` records the failure.
    """
    threads = resolve_threads(threads)
    out_dir = Path(cfg.output_dir)
    if cfg.nodes is None or cfg.edges is None:
        raise ConfigError("pipeline needs graph nodes and edges files")

    created = []
    try:
        graph = _stage("graph", parse_graph, cfg.nodes, cfg.edges)
        patches = _stage("sample", sample_patches, graph, cfg.sampler)
        out_dir.mkdir(parents=True, exist_ok=True)
        counts = grid_shape(graph, cfg.sampler)
        _stage("sample", write_patches, patches, cfg.sampler, out_dir / "patches", counts)
        created.append(out_dir / "patches")

        todo = [p for p in patches if p.accepted]
        if cfg.outputs.max_patches is not None:
            todo = todo[: int(cfg.outputs.max_patches)]
        created.extend(out_dir / p.name for p in todo)
        workers = max(1, min(threads, len(todo)))
        inner = max(1, threads // workers)
        log.info("%d of %d patches accepted; processing %d with %d worker(s)",
                 sum(p.accepted for p in patches), len(patches), len(todo), workers)
        if workers == 1:
            entries = [_process_patch(p, cfg, out_dir, inner) for p in todo]
        else:
            with ThreadPoolExecutor(workers) as pool:
                entries = list(pool.map(lambda p: _process_patch(p, cfg, out_dir, inner), todo))
    except OctaForgeError as exc:
        for path in created:
            shutil.rmtree(path, ignore_errors=True)
        stage = getattr(exc, "stage", None)
        if out_dir.is_dir():
            (out_dir / "manifest.json").write_text(json.dumps(
                {"status": "failed", "stage": stage, "error": str(exc)}, indent=2) + "\n")
        raise

    digest = hashlib.sha256()
    for e in entries:
        for rel, h in sorted(e["files"].items()):
            digest.update(f"{rel}:{h}\n".encode())
    manifest = {
        "status": "ok",
        "version": __version__,
        "seed": cfg.seed,
        "stages": stages_str(cfg.stages),
        "config": cfg.to_dict(),
        "grid_shape": list(counts),
        "n_patches": len(patches),
        "n_accepted": sum(p.accepted for p in patches),
        "rejected": [{"patch": p.name, "reason": p.reason} for p in patches if not p.accepted],
        "pairs": entries,
        "digest": digest.hexdigest(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
