import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from glandseg.distance import edt, squared_edt
from glandseg.metrics import (
    MetricsReport, aggregate_report, evaluate_masks, extract_objects, f1_object, hausdorff,
    ImageMetrics, match_max_overlap, object_dice, object_hausdorff,
)


def box(shape, *rects):
    m = np.zeros(shape, np.int32)
    for k, (r0, r1, c0, c1) in enumerate(rects, start=1):
        m[r0:r1, c0:c1] = k
    return m


def test_extract_objects():
    assert len(extract_objects(np.zeros((4, 4), int))) == 0
    m = box((6, 6), (0, 2, 0, 2), (3, 6, 3, 5))
    objs = extract_objects(m)
    assert objs.labels == [1, 2]
    assert {tuple(p) for p in objs.objects[0]} == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert sum(objs.sizes) == np.count_nonzero(m)


def test_match_max_overlap():
    a = extract_objects(box((6, 10), (0, 1, 0, 8)))
    b_img = np.zeros((6, 10), int)
    b_img[0, 0:3] = 1
    b_img[0, 3:8] = 2
    t = match_max_overlap(a, extract_objects(b_img))
    assert t.match[0] == 1 and t.overlap[0] == 5
    same = extract_objects(box((6, 6), (0, 2, 0, 2), (3, 5, 3, 5)))
    assert list(match_max_overlap(same, same).match) == [0, 1]
    far = extract_objects(box((6, 6), (5, 6, 5, 6)))
    assert list(match_max_overlap(same, far).match) == [-1, -1]
    assert np.isclose(match_max_overlap(same, far).weights.sum(), 1)
    with pytest.raises(ValueError):
        match_max_overlap(same, extract_objects(np.zeros((3, 3), int)))


def test_object_dice_examples():
    m = box((8, 8), (0, 3, 0, 3), (4, 8, 4, 8))
    relabeled = np.where(m == 1, 7, np.where(m == 2, 3, 0))
    assert object_dice(m, relabeled) == 1
    gt = box((4, 4), (0, 2, 0, 2))
    seg = box((4, 4), (0, 2, 1, 3))
    assert object_dice(gt, seg) == pytest.approx(0.5)
    assert object_dice(np.zeros((4, 4)), np.zeros((4, 4))) == 1
    assert object_dice(gt, np.zeros((4, 4))) == 0
    with pytest.raises(ValueError):
        object_dice(gt, np.zeros((5, 5)))


def test_hausdorff_examples():
    a = np.array([[0, 0]])
    assert hausdorff(a, a) == 0
    assert hausdorff(a, np.array([[3, 4]])) == 5.0
    with pytest.raises(ValueError):
        hausdorff(a, np.empty((0, 2)))


def test_object_hausdorff_examples():
    gt = box((20, 20), (5, 10, 2, 8))
    seg = box((20, 20), (5, 10, 5, 11))
    assert object_hausdorff(gt, gt) == 0
    assert object_hausdorff(gt, seg) == pytest.approx(3.0)
    # nothing segmented: every gt object is charged the image diagonal, one direction only
    assert object_hausdorff(gt, np.zeros_like(gt)) == pytest.approx(math.hypot(20, 20) / 2)


def test_f1_examples():
    gt = box((20, 20), (0, 5, 0, 5), (10, 15, 10, 15))
    assert f1_object(gt, gt).f1 == 1
    one = box((20, 20), (0, 5, 0, 5))
    r = f1_object(gt, one)
    assert (r.precision, r.recall) == (1.0, 0.5) and r.f1 == pytest.approx(2 / 3)
    forty = box((20, 20), (0, 2, 0, 5))  # 10 of 25 px
    assert f1_object(box((20, 20), (0, 5, 0, 5)), forty).tp == 0
    assert f1_object(np.zeros((3, 3)), np.zeros((3, 3))).f1 == 1
    assert f1_object(gt, np.zeros_like(gt)).f1 == 0


def test_f1_is_one_to_one():
    gt = box((10, 10), (0, 4, 0, 4))
    seg = np.zeros((10, 10), int)
    seg[0:4, 0:3] = 1  # 12/16
    seg[0:4, 3:4] = 2  # 4/16
    seg[5:9, 5:9] = 3
    r = f1_object(gt, seg)
    assert (r.tp, r.fp, r.fn) == (1, 2, 0)


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    gt = oracles.random_label_map(rng, max_objects=5)
    seg = oracles.random_label_map(rng, max_objects=5) if seed % 4 else np.where(
        np.roll(gt, int(rng.integers(-3, 4)), axis=1) > 0, np.roll(gt, int(rng.integers(-3, 4)), axis=1), 0)
    assert abs(object_dice(gt, seg) - oracles.object_dice(gt, seg)) <= 1e-9
    assert abs(object_hausdorff(gt, seg) - oracles.object_hausdorff(gt, seg)) <= 1e-9
    assert abs(f1_object(gt, seg).f1 - oracles.f1(gt, seg)) <= 1e-9


@pytest.mark.parametrize("seed", range(40))
def test_hausdorff_edt_equals_pairwise_exactly(seed):
    rng = np.random.default_rng(seed)
    n_a, n_b = rng.integers(1, 201, 2)
    a = rng.integers(0, 40, (n_a, 2))
    b = rng.integers(0, 40, (n_b, 2)) + rng.integers(-10, 10, 2)
    b = np.abs(b)
    assert hausdorff(a, b) == oracles.pairwise_hausdorff(map(tuple, a), map(tuple, b))
    assert hausdorff(a, b) == hausdorff(b, a)


def test_edt_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = rng.random((13, 17)) < 0.1
        if not f.any():
            continue
        pts = np.argwhere(f)
        grid = np.indices(f.shape).reshape(2, -1).T
        brute = ((grid[:, None] - pts[None]) ** 2).sum(-1).min(1).reshape(f.shape)
        assert np.array_equal(squared_edt(f), brute)
        assert np.allclose(edt(f), np.sqrt(brute))
    assert np.all(squared_edt(np.zeros((3, 3), bool)) == -1)


def test_edt_matches_scipy_when_available():
    ndimage = pytest.importorskip("scipy.ndimage")
    rng = np.random.default_rng(1)
    f = rng.random((40, 33)) < 0.05
    assert np.allclose(edt(f), ndimage.distance_transform_edt(~f))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 6), st.integers(0, 6))
def test_translation_invariance_and_identity(seed, dy, dx):
    rng = np.random.default_rng(seed)
    gt = np.zeros((40, 40), np.int32)
    seg = np.zeros((40, 40), np.int32)
    gt[:32, :32] = oracles.random_label_map(rng, max_objects=4)
    seg[:32, :32] = oracles.random_label_map(rng, max_objects=4)
    shift = lambda m: np.roll(np.roll(m, dy, 0), dx, 1)  # noqa: E731
    assert object_dice(gt, seg) == pytest.approx(object_dice(shift(gt), shift(seg)), abs=1e-12)
    assert f1_object(gt, seg).f1 == f1_object(shift(gt), shift(seg)).f1
    if gt.any() and seg.any():  # the empty-side fallback depends on the image, not the objects
        assert object_hausdorff(gt, seg) == pytest.approx(object_hausdorff(shift(gt), shift(seg)), abs=1e-9)
    assert object_dice(gt, gt) == 1 and object_hausdorff(gt, gt) == 0 and f1_object(gt, gt).f1 == 1
    for s in (extract_objects(gt), extract_objects(seg)):
        if len(s):
            assert match_max_overlap(s, s).weights.sum() == pytest.approx(1)


def test_boundary_mode():
    gt = box((20, 20), (2, 12, 2, 12))
    seg = box((20, 20), (2, 12, 2, 13))
    assert object_hausdorff(gt, seg, "boundary") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        hausdorff(np.array([[0, 0]]), np.array([[1, 1]]), mode="chamfer")


def test_report(tmp_path):
    a = ImageMetrics("a", 0.8, 1.0, 3.0)
    b = ImageMetrics("b", 0.9, 0.5, 5.0)
    single = aggregate_report([a])
    assert single.mean.object_dice == 0.8 and single.mean.f1 == 1.0
    r = aggregate_report([a, b], "testA")
    assert r.mean.object_dice == pytest.approx(0.85)
    assert list(r.table_row()) == ["Object Dice", "F1 Score", "Hausdorff"]
    lines = r.write_csv(tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("name,object_dice,f1,object_hausdorff") and lines[-1].startswith("mean,")
    assert len(lines) == 4
    assert "aggregate" in r.to_dict()
    with pytest.raises(ValueError):
        aggregate_report([])
    m = evaluate_masks(box((8, 8), (0, 4, 0, 4)), box((8, 8), (0, 4, 0, 4)), "x")
    assert (m.object_dice, m.f1, m.object_hausdorff, m.n_gt) == (1.0, 1.0, 0.0, 1)
    assert isinstance(r, MetricsReport)
