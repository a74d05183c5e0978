import json

import numpy as np
import pytest

from octa_forge.cli import main
from octa_forge.demo import demo_graph_files
from octa_forge.volume_io import read_volume, write_volume


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """sample -> voxelize -> simulate on the demo graph at 5 um voxels."""
    d = tmp_path_factory.mktemp("cli")
    nodes, edges = demo_graph_files()
    cfg = d / "sim.toml"
    cfg.write_text("[sim]\nsigma_n = 0.2\nseed = 3\n")
    assert main(["sample", "--nodes", str(nodes), "--edges", str(edges), "--out-dir", str(d / "patches"),
                 "--patch-size", "100", "--voxel-size", "5"]) == 0
    assert main(["voxelize", "--patch-dir", str(d / "patches" / "patch_0_0_0"),
                 "--out", str(d / "vol"), "--threads", "2"]) == 0
    assert main(["simulate", "--in", str(d / "vol"), "--config", str(cfg), "--out", str(d / "sim"),
                 "--stages", "LTA"]) == 0
    return d


def test_sample_manifest(workdir):
    m = json.loads((workdir / "patches" / "patches.json").read_text())
    assert m["grid_shape"] == [1, 1, 3] and m["n_accepted"] == 2
    assert m["config"]["voxel_size_um"] == 5.0


def test_simulate_output(workdir):
    v, h = read_volume(workdir / "sim", with_header=True)
    assert v.shape == (100, 100, 100) and v.dtype == np.float32
    assert h["stages"] == "LTA" and h["seed"] == 3


def test_simulate_is_reproducible(workdir, tmp_path):
    assert main(["simulate", "--in", str(workdir / "vol"), "--config", str(workdir / "sim.toml"),
                 "--out", str(tmp_path / "again"), "--stages", "LTA", "--threads", "3"]) == 0
    assert (tmp_path / "again.bin").read_bytes() == (workdir / "sim.bin").read_bytes()


def test_baseline_evaluate_render(workdir, capsys):
    assert main(["baseline", "--method", "otsu", "--in", str(workdir / "sim"),
                 "--out", str(workdir / "otsu")]) == 0
    mask, h = read_volume(workdir / "otsu", with_header=True)
    assert mask.dtype == np.uint8 and h["method"] == "otsu"
    region = np.zeros(mask.shape, np.uint8)
    region[:, :, :50] = 1
    write_volume(region, workdir / "top", 5.0, "label")
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(workdir / "otsu"), "--label", str(workdir / "vol"),
                 "--region", f"top={workdir / 'top'}", "--json", str(workdir / "eval.json")]) == 0
    table = capsys.readouterr().out
    assert "all" in table and "top" in table and "clDice" in table
    report = json.loads((workdir / "eval.json").read_text())
    assert [r["region"] for r in report["mean"]] == ["all", "top"]
    assert 0 <= report["mean"][0]["dice"] <= 1
    assert main(["render", "--in", str(workdir / "sim"), "--axis", "y", "--indices", "0,40,99",
                 "--out-dir", str(workdir / "png")]) == 0
    assert sorted(p.name for p in (workdir / "png").iterdir()) == \
        ["slice_y0000.png", "slice_y0040.png", "slice_y0099.png"]


def test_frangi_baseline(tmp_path):
    v = np.zeros((24, 24, 24), np.float32)
    v[10:14, 10:14, :] = 1.0
    write_volume(v, tmp_path / "in", 1.0)
    cfg = tmp_path / "f.toml"
    cfg.write_text("[frangi]\nscales_um = [2.0]\nthreshold = 0.2\n")
    assert main(["baseline", "--method", "frangi", "--in", str(tmp_path / "in"), "--out",
                 str(tmp_path / "out"), "--config", str(cfg),
                 "--vesselness-out", str(tmp_path / "vness")]) == 0
    mask = read_volume(tmp_path / "out")
    assert mask[11, 11, 12] == 1 and mask[2, 2, 12] == 0
    assert read_volume(tmp_path / "vness").max() <= 1


def test_exit_codes(tmp_path, capsys):
    nodes, _ = demo_graph_files()
    assert main(["sample", "--nodes", str(nodes), "--edges", str(tmp_path / "edges.csv"),
                 "--out-dir", str(tmp_path / "o")]) == 3
    assert "edges.csv" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("[sim]\nwhat = 1\n")
    assert main(["pipeline", "--config", str(bad)]) == 2
    assert main(["simulate", "--in", str(tmp_path), "--out", str(tmp_path / "x"), "--stages", "Q"]) == 2
    assert main(["render", "--in", str(tmp_path / "nothing"), "--axis", "x", "--indices", "0",
                 "--out-dir", str(tmp_path)]) == 3
    v = np.zeros((4, 4, 4), np.float32)
    write_volume(v, tmp_path / "v")
    assert main(["render", "--in", str(tmp_path / "v"), "--axis", "x", "--indices", "9",
                 "--out-dir", str(tmp_path)]) == 3
    assert main(["baseline", "--method", "otsu", "--in", str(tmp_path / "v"), "--out",
                 str(tmp_path / "m")]) == 3
    with pytest.raises(SystemExit) as info:
        main(["baseline", "--method", "unet", "--in", "a", "--out", "b"])
    assert info.value.code == 2


def test_demo_command(tmp_path):
    assert main(["demo", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "demo_nodes.csv").read_bytes() == demo_graph_files()[0].read_bytes()


def test_pipeline_command_with_env_threads(tmp_path, monkeypatch):
    nodes, edges = demo_graph_files()
    cfg = tmp_path / "p.toml"
    cfg.write_text(f'output_dir = "out"\n[graph]\nnodes = "{nodes}"\nedges = "{edges}"\n'
                   '[sampler]\npatch_shape_voxels = 100\nvoxel_size_um = 5.0\n')
    monkeypatch.setenv("OCTA_FORGE_THREADS", "2")
    assert main(["pipeline", "--config", str(cfg), "--stages", "LT"]) == 0
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["stages"] == "LT" and len(m["pairs"]) == 2
