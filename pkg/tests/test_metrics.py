import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from octa_forge.errors import DataError
from octa_forge.metrics import (RegionSpec, cl_dice, cl_dice_from_skeletons, dice,
                                evaluate_regions, format_table, skeletonize)

from conftest import random_tube_phantom, tube_mask


def dice_oracle(p, l):
    p, l = p.ravel().tolist(), l.ravel().tolist()
    inter = sum(1 for a, b in zip(p, l) if a and b)
    total = sum(1 for a in p if a) + sum(1 for b in l if b)
    return 1.0 if total == 0 else 2 * inter / total


def cl_dice_oracle(p, l, sp, sl):
    sp_set = set(zip(*np.nonzero(sp)))
    sl_set = set(zip(*np.nonzero(sl)))
    p_set = set(zip(*np.nonzero(p)))
    l_set = set(zip(*np.nonzero(l)))
    if not sp_set and not sl_set:
        return 1.0
    if not sp_set or not sl_set:
        return 0.0
    tprec = len(sp_set & l_set) / len(sp_set)
    tsens = len(sl_set & p_set) / len(sl_set)
    return 0.0 if tprec + tsens == 0 else 2 * tprec * tsens / (tprec + tsens)


def test_dice_examples():
    a = np.zeros((6, 6, 6), bool)
    a[1:5, 1:5, 1:3] = True
    assert dice(a, a) == 1.0
    b = np.zeros_like(a)
    b[0, 0, 5] = True
    assert dice(a, b) == 0.0
    half = a.copy()
    half[:, :, 2] = False
    assert dice(half, a) == pytest.approx(2 / 3, abs=1e-15)
    assert dice(np.zeros(4), np.zeros(4)) == 1.0
    with pytest.raises(DataError):
        dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


def test_cl_dice_examples():
    m = tube_mask((20, 20, 20), (3, 10, 10), (16, 10, 10), 2.5)
    assert cl_dice(m, m) == 1.0
    other = tube_mask((20, 20, 20), (3, 3, 3), (3, 3, 16), 1.5)
    assert cl_dice(m, other) == 0.0
    empty = np.zeros_like(m)
    assert cl_dice(empty, empty) == 1.0
    assert cl_dice(m, empty) == 0.0


def test_boundary_insensitivity():
    shape = (24, 24, 30)
    thin = tube_mask(shape, (12, 12, -5), (12, 12, 35), 2.5)
    thick = tube_mask(shape, (12, 12, -5), (12, 12, 35), 4.5)
    assert dice(thin, thick) < 0.5
    assert cl_dice(thin, thick) == 1.0


def test_oracle_on_random_pairs():
    rng = np.random.default_rng(21)
    for i in range(20):
        shape = tuple(rng.integers(6, 20, size=3))
        p = rng.random(shape) < rng.uniform(0.05, 0.5)
        l = rng.random(shape) < rng.uniform(0.05, 0.5)
        sp, sl = skeletonize(p), skeletonize(l)
        assert dice(p, l) == dice_oracle(p, l)
        assert cl_dice(p, l) == cl_dice_oracle(p, l, sp, sl)


@settings(max_examples=30, deadline=None)
@given(arrays(bool, (8, 7, 6)), arrays(bool, (8, 7, 6)))
def test_symmetry(a, b):
    assert dice(a, b) == dice(b, a)
    assert cl_dice(a, b) == cl_dice(b, a)
    if a.any():
        assert dice(a, a) == 1.0 and cl_dice(a, a) == 1.0


def test_region_all_matches_unrestricted(rng):
    p = random_tube_phantom(rng, (24, 24, 24))
    l = random_tube_phantom(rng, (24, 24, 24))
    (row,) = evaluate_regions(p, l)
    assert row["region"] == "all" and row["voxels"] == 24 ** 3
    assert row["dice"] == dice(p, l) and row["cl_dice"] == cl_dice(p, l)


def test_region_excluding_disagreement():
    p = tube_mask((20, 20, 20), (2, 10, 10), (17, 10, 10), 3.0)
    l = p.copy()
    l[:, :4, :] = False
    l[0:3, 15:, 15:] = True
    region = ~(p ^ l)
    rows = evaluate_regions(p, l, [RegionSpec("all"), RegionSpec("agree", region)])
    assert rows[0]["dice"] < 1
    assert rows[1]["dice"] == 1.0 and rows[1]["cl_dice"] == 1.0


def test_region_hand_counts():
    p = np.zeros((4, 4, 4), bool)
    l = np.zeros((4, 4, 4), bool)
    p[0, 0, :] = True       # 4 voxels, all in "left"
    l[0, 0, :2] = True      # 2 voxels, "left"
    p[3, 3, :3] = True      # 3 voxels, "right"
    l[3, 3, :] = True       # 4 voxels, "right"
    left = np.zeros((4, 4, 4), bool)
    left[:2] = True
    rows = evaluate_regions(p, l, [RegionSpec("left", left), RegionSpec("right", ~left)])
    assert rows[0]["dice"] == 2 * 2 / (4 + 2)
    assert rows[1]["dice"] == 2 * 3 / (3 + 4)
    # lines are their own skeletons: left Tprec = 2/4, Tsens = 1
    assert rows[0]["cl_dice"] == pytest.approx(2 * 0.5 * 1 / 1.5, abs=1e-15)
    assert rows[1]["cl_dice"] == pytest.approx(2 * 1 * 0.75 / 1.75, abs=1e-15)


def test_skeleton_first_option():
    p = tube_mask((20, 20, 20), (2, 10, 10), (17, 10, 10), 3.0)
    region = np.zeros(p.shape, bool)
    region[:, :, :11] = True
    a = evaluate_regions(p, p, [RegionSpec("half", region)], skeleton_first=True)[0]
    b = evaluate_regions(p, p, [RegionSpec("half", region)])[0]
    assert a["cl_dice"] == b["cl_dice"] == 1.0
    with pytest.raises(DataError):
        evaluate_regions(p, p, [RegionSpec("bad", np.ones((2, 2, 2)))])


def test_format_table():
    text = format_table([{"region": "all", "dice": 0.74829, "cl_dice": 0.5}])
    lines = text.splitlines()
    assert lines[0].split() == ["region", "Dice", "clDice"]
    assert lines[2].split() == ["all", "74.83", "50.00"]
    json.dumps({"rows": text})
