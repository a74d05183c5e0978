"""Command-line interface: ``octa-forge <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import FrangiConfig, frangi_segment, frangi_vesselness, otsu_threshold
from .config import (load_pipeline_config, load_toml, resolve_threads, sampler_from_mapping,
                     section)
from .errors import ConfigError, DataError, InvariantError, OctaForgeError
from .graph import parse_graph
from .metrics import RegionSpec, evaluate_regions, format_table
from .pipeline import run_pipeline
from .sampler import grid_shape, read_patch, sample_patches, write_patches
from .simulate import SimConfig, simulate
from .voxelizer import apply_elastic_deformation, generate_deformation, voxelize
from .volume_io import (read_labeled_volume, read_mask, read_volume, render_slices,
                        write_labeled_volume, write_volume)

log = logging.getLogger("octa_forge")


def _config_table(path, name):
    return section(load_toml(path), name) if path else {}


def cmd_sample(args):
    data = _config_table(args.config, "sampler")
    if args.patch_size is not None:
        size = args.patch_size
        data["patch_shape_voxels"] = size[0] if len(size) == 1 else size
    if args.voxel_size is not None:
        data["voxel_size_um"] = args.voxel_size
    if args.min_vessels is not None:
        data["min_vessel_count"] = args.min_vessels
    cfg = sampler_from_mapping(data)
    graph = parse_graph(args.nodes, args.edges)
    patches = sample_patches(graph, cfg)
    write_patches(patches, cfg, args.out_dir, grid_shape(graph, cfg))
    n_ok = sum(p.accepted for p in patches)
    print(f"{n_ok} of {len(patches)} patches accepted -> {args.out_dir}")
    for p in patches:
        if not p.accepted:
            print(f"  {p.name}: rejected ({p.reason})")
    return 0


def cmd_voxelize(args):
    patch = read_patch(args.patch_dir)
    vol = voxelize(patch, threads=resolve_threads(args.threads))
    if args.deform:
        field = generate_deformation(vol.shape, args.deform_sigma, args.deform_magnitude, args.seed)
        vol = apply_elastic_deformation(vol, field)
    write_labeled_volume(vol, args.out)
    print(f"{int(np.count_nonzero(vol.labels))} labeled voxels in {vol.shape} -> {args.out}")
    return 0


def cmd_simulate(args):
    data = _config_table(args.config, "sim")
    cfg = SimConfig.from_mapping(data, stages=args.stages, seed=args.seed)
    vol = read_labeled_volume(args.in_path)
    synth = simulate(vol, cfg, threads=resolve_threads(args.threads))
    write_volume(synth.intensity, args.out, synth.voxel_size_um, "intensity",
                 {"stages": "".join(c for c in "LTAC" if c in cfg.stages), "seed": cfg.seed})
    print(f"simulated {synth.shape} with stages {{{','.join(sorted(cfg.stages))}}} -> {args.out}")
    return 0


def _parse_region(text):
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise ConfigError(f"--region expects name=path, got {text!r}")
    return name, path


def cmd_evaluate(args):
    if len(args.pred) != len(args.label):
        raise ConfigError("--pred and --label need the same number of volumes")
    regions = [_parse_region(r) for r in args.region or []]
    names = ["all"] + [n for n, _ in regions]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate region names in {names}")
    masks = [RegionSpec("all")] + [RegionSpec(n, read_mask(p)) for n, p in regions]
    per_pair = []
    for pred_path, label_path in zip(args.pred, args.label):
        rows = evaluate_regions(read_mask(pred_path), read_mask(label_path), masks,
                                skeleton_first=args.skeleton_first)
        per_pair.append({"pred": str(pred_path), "label": str(label_path), "regions": rows})
    mean = []
    for i, name in enumerate(names):
        mean.append({
            "region": name,
            "dice": float(np.mean([p["regions"][i]["dice"] for p in per_pair])),
            "cl_dice": float(np.mean([p["regions"][i]["cl_dice"] for p in per_pair])),
        })
    result = {"n_pairs": len(per_pair), "mean": mean, "pairs": per_pair}
    text = json.dumps(result, indent=2)
    if args.json:
        Path(args.json).write_text(text + "\n")
    else:
        print(text)
    print(format_table(mean))
    return 0


def cmd_baseline(args):
    vol, header = read_volume(args.in_path, with_header=True)
    voxel = float(header.get("voxel_size_um", 2.0))
    if args.method == "otsu":
        threshold, mask = otsu_threshold(vol)
        extra = {"method": "otsu", "threshold": threshold}
    else:
        cfg = FrangiConfig.from_mapping(_config_table(args.config, "frangi"))
        if args.vesselness_out:
            v = frangi_vesselness(vol, cfg, voxel)
            write_volume(v.astype(np.float32), args.vesselness_out, voxel, "intensity")
            mask = v >= cfg.threshold if cfg.threshold > 0 else v > 0
        else:
            mask = frangi_segment(vol, cfg, voxel)
        extra = {"method": "frangi", **cfg.to_dict()}
    write_volume(mask.astype(np.uint8), args.out, voxel, "label", extra)
    print(f"{args.method}: {int(mask.sum())} foreground voxels -> {args.out}")
    return 0


def _indices(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_render(args):
    path = Path(args.in_path)
    vol = read_volume(path / "labels" if path.is_dir() else path)
    try:
        paths = render_slices(vol, args.axis, args.indices, args.out_dir, args.prefix)
    except IndexError as exc:
        raise DataError(str(exc)) from None
    for p in paths:
        print(p)
    return 0


def cmd_pipeline(args):
    cfg = load_pipeline_config(args.config, nodes=args.nodes, edges=args.edges,
                               output_dir=args.out_dir, seed=args.seed, stages=args.stages)
    manifest = run_pipeline(cfg, threads=args.threads)
    print(f"{len(manifest['pairs'])} pair(s) written to {cfg.output_dir}; digest {manifest['digest']}")
    return 0


def cmd_demo(args):
    from .demo import write_demo_graph

    nodes, edges = write_demo_graph(args.out_dir)
    print(nodes)
    print(edges)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="octa-forge",
                                     description="Synthetic 3D OCTA volumes from vessel graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $OCTA_FORGE_THREADS or all cores)")

    p = sub.add_parser("sample", help="cut a vessel graph into screened cubic patches")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--config", help="TOML file; reads [sampler] or top-level keys")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patch-size", type=int, nargs="+", metavar="N",
                   help="patch edge in voxels: one value or three (x y z)")
    p.add_argument("--voxel-size", type=float, metavar="UM")
    p.add_argument("--min-vessels", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("voxelize", help="rasterize one patch into a labeled volume")
    p.add_argument("--patch-dir", required=True)
    p.add_argument("--out", required=True, help="output directory for the labeled volume")
    p.add_argument("--deform", action="store_true", help="apply elastic deformation")
    p.add_argument("--deform-sigma", type=float, default=8.0)
    p.add_argument("--deform-magnitude", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    threads(p)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("simulate", help="synthesize OCTA intensities for a labeled volume")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--config", help="TOML file; reads [sim] or top-level keys")
    p.add_argument("--out", required=True)
    p.add_argument("--stages", help="subset of L, T, A (e.g. LTA); overrides the config")
    p.add_argument("--seed", type=int)
    threads(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="Dice and clDice of predictions against labels")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--label", nargs="+", required=True)
    p.add_argument("--region", action="append", metavar="NAME=PATH")
    p.add_argument("--json", help="write the JSON report here instead of stdout")
    p.add_argument("--skeleton-first", action="store_true",
                   help="skeletonize full masks, then restrict skeletons to regions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="Otsu or Frangi segmentation of an intensity volume")
    p.add_argument("--method", choices=("otsu", "frangi"), required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TOML file; reads [frangi] or top-level keys")
    p.add_argument("--vesselness-out", help="also write the Frangi response (float32)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("render", help="write PNG slices of a volume")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), required=True)
    p.add_argument("--indices", type=_indices, required=True, help="e.g. 0,10,20")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="slice")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pipeline", help="run every stage from one TOML config")
    p.add_argument("--config")
    p.add_argument("--nodes")
    p.add_argument("--edges")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--stages")
    threads(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("demo", help="write the bundled demo vessel graph as CSV")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OctaForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except Exception:
        log.exception("internal error")
        return InvariantError.exit_code


if __name__ == "__main__":
    sys.exit(main())
