import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_panoptic
from polarbev.errors import DimensionError, ValidationError
from polarbev.metrics import (
    SETTING_1,
    SETTING_2,
    EvalSetting,
    RectPrediction,
    canonicalize,
    decode_instances,
    evaluate,
    iou,
    match_instances,
    panoptic_quality,
    read_pgm,
    write_pgm,
)


def test_iou_examples():
    a = np.zeros((1, 3), bool)
    b = np.zeros((1, 3), bool)
    a[0, :2] = True
    b[0, 1:] = True
    assert iou(a, b) == pytest.approx(1 / 3)
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(DimensionError):
        iou(a, np.zeros((3, 1)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_iou_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 6, 6)) < 0.4
    assert iou(a, b) == iou(b, a)


def pq_fixture():
    """One match at IoU 0.6, one unmatched prediction, one unmatched ground truth."""
    gt = np.zeros((4, 10), np.int32)
    pred = np.zeros((4, 10), np.int32)
    gt[0, 0:3] = 1          # 3 cells
    pred[0, 0:3] = 1
    pred[1, 0:2] = 1        # pred 5 cells, gt 3, inter 3 -> 3/5
    gt[3, 8:10] = 2         # missed
    pred[3, 4:6] = 2        # spurious
    return pred, gt


def test_pq_hand_fixture():
    pred, gt = pq_fixture()
    rq, sq, pq = panoptic_quality(pred, gt)
    assert (rq, sq) == (0.5, 0.6)
    assert pq == 0.5 * 0.6
    assert pq == pytest.approx(0.3, abs=1e-15)


def test_pq_trivial_cases():
    m = np.zeros((5, 5), np.int32)
    assert panoptic_quality(m, m) == (1.0, 1.0, 1.0)
    m[1:3, 1:3] = 4
    assert panoptic_quality(m, m) == (1.0, 1.0, 1.0)
    assert panoptic_quality(m, np.zeros_like(m)) == (0.0, 0.0, 0.0)
    with pytest.raises(DimensionError):
        panoptic_quality(m, np.zeros((4, 4)))


def random_instance_map(rng, shape=(8, 8), max_inst=4):
    m = np.zeros(shape, np.int32)
    for k in range(1, int(rng.integers(0, max_inst + 1)) + 1):
        r0, c0 = rng.integers(0, shape[0]), rng.integers(0, shape[1])
        h, w = rng.integers(1, 5, size=2)
        m[r0:r0 + h, c0:c0 + w] = k
    return m


def test_pq_matches_brute_force_1000_seeds():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        pred = random_instance_map(rng)
        gt = pred.copy() if seed % 5 == 0 else random_instance_map(rng)
        if seed % 5 == 0:
            gt[rng.random(gt.shape) < 0.15] = 0
        res = match_instances(pred, gt)
        rq, sq, pq, pairs = brute_panoptic(pred, gt)
        assert (res.rq, res.sq, res.pq) == (rq, sq, pq), seed
        assert sorted((p, g) for p, g, _ in res.matches) == sorted(pairs)
        # each gt instance appears in at most one match
        assert len({g for _, g, _ in res.matches}) == res.tp


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_pq_label_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_instance_map(rng), random_instance_map(rng)
    perm = np.concatenate([[0], rng.permutation(np.arange(1, 5)) + 10])
    base = panoptic_quality(pred, gt)
    assert panoptic_quality(perm[pred], gt) == base
    assert panoptic_quality(pred, perm[gt]) == base
    rq, sq, pq = base
    assert pq == rq * sq


def test_canonicalize():
    m = np.array([[0, 7, 7], [3, 0, 9]])
    np.testing.assert_array_equal(canonicalize(m), [[0, 1, 1], [2, 0, 3]])


def blob(shape=(20, 20)):
    seg = np.zeros(shape, bool)
    seg[5:15, 4:16] = True
    return seg


def test_decode_single_peak():
    seg = np.zeros((20, 20), bool)
    seg[8:13, 8:13] = True
    cen = np.zeros(seg.shape)
    cen[10, 10] = 1.0
    inst = decode_instances(cen, np.zeros((2,) + seg.shape), seg, 0.3, 2.0, 1.0)
    np.testing.assert_array_equal(inst, seg.astype(np.int32))


def test_decode_two_peaks_split_at_midline():
    seg = blob()
    cen = np.zeros(seg.shape)
    cen[10, 6] = 0.9
    cen[10, 13] = 0.8
    rows, cols = np.indices(seg.shape)
    left = cols < 10
    off = np.zeros((2,) + seg.shape)
    off[0] = 10 - rows
    off[1] = np.where(left, 6 - cols, 13 - cols)
    inst = decode_instances(cen, off, seg, 0.3, 2.0, 1.0)
    # brute-force nearest-centre assignment of the votes
    centers = np.array([[10, 6], [10, 13]])
    expect = np.zeros(seg.shape, np.int32)
    for r, c in zip(*np.nonzero(seg)):
        vote = np.array([r + off[0, r, c], c + off[1, r, c]])
        expect[r, c] = 1 + int(np.argmin(np.linalg.norm(centers - vote, axis=1)))
    np.testing.assert_array_equal(inst, expect)
    assert set(np.unique(inst[:, :10][seg[:, :10]])) == {1}
    assert set(np.unique(inst[:, 10:][seg[:, 10:]])) == {2}


def test_decode_below_threshold_and_cutoff():
    seg = blob()
    cen = np.full(seg.shape, 0.2)
    assert not decode_instances(cen, np.zeros((2,) + seg.shape), seg, 0.3).any()
    cen = np.zeros(seg.shape)
    cen[10, 10] = 1.0
    # cells whose votes land more than 2 * nms_radius away stay background
    rows, cols = np.indices(seg.shape)
    off = np.stack([10.0 - rows, 10.0 - cols])
    off[1, :, 4] -= 10.0
    inst = decode_instances(cen, off, seg, 0.3, 2.0, 1.0)
    assert not inst[:, 4].any()
    assert inst[seg & (np.indices(seg.shape)[1] != 4)].min() == 1


def test_decode_nms_keeps_stronger_peak():
    seg = blob()
    cen = np.zeros(seg.shape)
    cen[10, 8] = 0.9
    cen[10, 10] = 0.95
    inst = decode_instances(cen, np.zeros((2,) + seg.shape), seg, 0.3, 2.5, 1.0)
    assert inst.max() == 1


def test_settings_shapes():
    assert SETTING_1.shape == (400, 200)
    assert SETTING_2.shape == (200, 200)
    assert EvalSetting.preset(2) == SETTING_2


def test_evaluate_perfect_prediction(tmp_path):
    class GT:
        pass

    gt = GT()
    setting = EvalSetting(10.0, 10.0, 0.5)
    gt.seg = np.zeros(setting.shape, bool)
    gt.seg[4:10, 6:10] = True
    gt.instances = gt.seg.astype(np.int32)
    cen = np.zeros(setting.shape)
    cen[7, 8] = 1.0
    rows, cols = np.indices(setting.shape)
    off = np.stack([(7 - rows) * 0.5, (8 - cols) * 0.5])
    pred = RectPrediction(gt.seg.copy(), cen, off)
    rep = evaluate([pred], [gt], setting)
    assert rep["aggregate"]["iou"] == 1.0
    assert rep["aggregate"]["pq"] == 1.0
    json.dumps(rep)
    with pytest.raises(DimensionError):
        evaluate([pred], [gt], SETTING_2)


def test_pgm_roundtrip_and_ascii(tmp_path):
    a = (np.arange(12).reshape(3, 4) * 20).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", a)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), a)
    (tmp_path / "b.pgm").write_text("P2\n# hand fixture\n3 2\n255\n0 1 2\n3 4 5\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "b.pgm"), [[0, 1, 2], [3, 4, 5]])
    (tmp_path / "c.pgm").write_text("P6\n1 1\n255\n")
    with pytest.raises(ValidationError):
        read_pgm(tmp_path / "c.pgm")
