from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fest.metrics import (
    MatchConfig,
    ScoreConfig,
    dataset_fa,
    dataset_iou,
    dataset_pd,
    evaluate,
    match_targets,
    percent,
    roc_sweep,
    score,
    tally_iou,
)
from fest.sensitivity import binarize
from oracles import brute_match


def disk(h, w, r0, c0, rad):
    rr, cc = np.mgrid[:h, :w]
    return (rr - r0) ** 2 + (cc - c0) ** 2 <= rad**2


# ---- IoU ----------------------------------------------------------------

def test_iou_identity(rng):
    ms = [rng.random((6, 6)) > 0.5 for _ in range(3)]
    assert dataset_iou(ms, ms) == 1.0


def test_iou_half():
    gt = np.zeros((4, 4), bool)
    gt[0, :4] = True
    pred = np.zeros((4, 4), bool)
    pred[0, :2] = True
    assert dataset_iou([pred], [gt]) == 0.5


def test_iou_both_empty():
    z = np.zeros((3, 3), bool)
    assert dataset_iou([z], [z]) == 1.0


def test_iou_counting_oracle_and_symmetry(rng):
    preds = [rng.random((9, 7)) > 0.6 for _ in range(50)]
    gts = [rng.random((9, 7)) > 0.7 for _ in range(50)]
    tp = sum(int((p & g).sum()) for p, g in zip(preds, gts))
    un = sum(int((p | g).sum()) for p, g in zip(preds, gts))
    assert dataset_iou(preds, gts) == tp / un
    assert dataset_iou(gts, preds) == tp / un
    tallies = [match_targets(p, g) for p, g in zip(preds, gts)]
    assert tally_iou(tallies) == tp / un


def test_iou_dimension_mismatch():
    with pytest.raises(ValueError):
        dataset_iou([np.zeros((2, 2), bool)], [np.zeros((2, 3), bool)])
    with pytest.raises(ValueError):
        dataset_iou([np.zeros((2, 2), bool)], [])


# ---- matching / Pd / Fa ------------------------------------------------

def test_one_of_two_detected():
    gt = disk(20, 20, 5, 5, 2) | disk(20, 20, 14, 14, 2)
    pred = disk(20, 20, 5, 5, 2)
    t = match_targets(pred, gt)
    assert t.detected == (True, False)
    assert dataset_pd([t]) == 0.5


def test_single_pixel_inside_target_detected_by_overlap():
    gt = disk(30, 30, 15, 15, 6)
    pred = np.zeros_like(gt)
    pred[15, 15] = True
    t = match_targets(pred, gt, MatchConfig(dmax=0))
    assert t.detected == (True,)
    assert t.false_pixels == 0


def test_pixel_outside_blob_dual_accounting():
    gt = disk(20, 20, 10, 10, 1)  # plus shape, centroid (10, 10)
    pred = np.zeros_like(gt)
    pred[10, 12] = True  # 2 px from the centroid, on background
    t = match_targets(pred, gt, MatchConfig(dmax=3))
    assert t.detected == (True,)
    assert t.false_pixels == 1
    assert match_targets(pred, gt, MatchConfig(dmax=1.5)).detected == (False,)


def test_one_to_one_assignment():
    gt = np.zeros((10, 10), bool)
    gt[2, 2] = gt[2, 5] = True
    pred = np.zeros_like(gt)
    pred[2, 3] = True  # within dmax of both, but may only count once
    t = match_targets(pred, gt)
    assert t.hits == 1
    assert t.detected == (True, False)


def test_fa_examples():
    gt = np.zeros((100, 100), bool)
    gt[50:53, 50:53] = True
    pred = gt.copy()
    pred[0, 0] = pred[0, 5] = pred[99, 99] = True
    assert dataset_fa([match_targets(pred, gt)]) == 3e-4
    assert dataset_fa([match_targets(gt, gt)]) == 0.0


def test_pd_errors():
    z = np.zeros((4, 4), bool)
    with pytest.raises(ValueError):
        dataset_pd([match_targets(z, z)])
    with pytest.raises(ValueError):
        dataset_fa([])


def scenes():
    mask = arrays(np.bool_, (8, 8), elements=st.booleans())
    return st.tuples(mask, mask)


@settings(max_examples=300, deadline=None)
@given(scenes(), st.sampled_from([0.0, 1.0, 3.0]), st.sampled_from([4, 8]))
def test_matching_agrees_with_brute_force(pair, dmax, conn):
    pred, gt = pair
    t = match_targets(pred, gt, MatchConfig(dmax=dmax, connectivity=conn))
    det, false_px = brute_match(pred, gt, dmax, conn)
    assert list(t.detected) == det
    assert t.false_pixels == false_px
    assert t.pixels == 64


@settings(max_examples=200, deadline=None)
@given(arrays(np.bool_, (8, 8), elements=st.booleans()), arrays(np.bool_, (8, 8), elements=st.booleans()))
def test_overlap_detection_monotone_for_single_target(pred, extra):
    gt = np.zeros((8, 8), bool)
    gt[3:5, 3:5] = True
    before = match_targets(pred, gt, MatchConfig(dmax=0))
    after = match_targets(pred | extra, gt, MatchConfig(dmax=0))
    assert after.hits >= before.hits


def test_merging_predictions_can_cost_a_hit():
    # one-to-one assignment: a single merged blob can only claim one target
    gt = np.zeros((3, 7), bool)
    gt[1, 1] = gt[1, 5] = True
    pred = gt.copy()
    assert match_targets(pred, gt, MatchConfig(dmax=0)).hits == 2
    pred[1, :] = True
    assert match_targets(pred, gt, MatchConfig(dmax=0)).hits == 1


# ---- score ---------------------------------------------------------------

def test_score_paper_rows():
    assert percent(score(0.6422, 0.8029, 20.57e-6)) == "72.26"
    assert percent(score(0.6142, 0.8998, 28.11e-6)) == "75.70"
    assert score(0.6422, 0.8029, 138.46e-6) is None


def test_score_exact_rational():
    cfg = ScoreConfig(alpha=Fraction(1, 2), fa_limit=Fraction(1, 10000))
    s = score(Fraction(6422, 10000), Fraction(8029, 10000), Fraction(2057, 10**8), cfg)
    assert abs(s * 100 - Fraction(7226, 100)) <= Fraction(5, 1000)


def test_score_midpoint_and_limit():
    assert score(0.2, 0.6, 0.0) == pytest.approx(0.4)
    assert score(0.2, 0.6, 1e-4) is None
    assert score(0.2, 0.6, 0.0, ScoreConfig(alpha=1.0)) == 0.2
    with pytest.raises(ValueError):
        ScoreConfig(alpha=1.5)


def test_percent_half_up():
    assert percent(0.72255) == "72.26"
    assert percent(0.0) == "0.00"
    assert percent(1.0) == "100.00"


def test_evaluate_report():
    gt = disk(20, 20, 10, 10, 2)
    r = evaluate([gt], [gt])
    assert (r.iou, r.pd, r.fa, r.score, r.valid) == (1.0, 1.0, 0.0, 1.0, True)
    pred = gt.copy()
    pred[0, :] = True
    r = evaluate([pred], [gt])
    assert not r.valid and r.score is None


# ---- ROC -----------------------------------------------------------------

def test_roc_prob_equals_gt():
    gt = disk(16, 16, 8, 8, 2)
    rows = roc_sweep([gt.astype(float)], [gt], [0.9, 0.5, 0.1])
    assert [(fa, pd) for _, fa, pd in rows] == [(0.0, 1.0)] * 3


def test_roc_threshold_above_max():
    gt = disk(16, 16, 8, 8, 2)
    prob = np.full(gt.shape, 0.3)
    (_, fa, pd), = roc_sweep([prob], [gt], [0.5])
    assert (fa, pd) == (0.0, 0.0)


@pytest.mark.parametrize("ths", [[], [0.5, 0.5], [0.3, 0.5], [1.0], [0.0]])
def test_roc_invalid_thresholds(ths):
    gt = np.zeros((2, 2), bool)
    gt[0, 0] = True
    with pytest.raises(ValueError):
        roc_sweep([gt.astype(float)], [gt], ths)


def test_roc_monotone_on_random_blobs(rng):
    probs, gts = [], []
    for _ in range(10):
        gt = np.zeros((32, 32), bool)
        prob = rng.random((32, 32)) * 0.04
        for r, c in [(6, 6), (6, 24), (24, 15)]:
            r, c = r + rng.integers(-2, 3), c + rng.integers(-2, 3)
            gt |= disk(32, 32, r, c, 2)
            prob = np.maximum(prob, np.where(disk(32, 32, r, c, 3), rng.uniform(0.2, 1.0), 0))
        probs.append(prob)
        gts.append(gt)
    ths = [(20 - i) / 21 for i in range(20)]
    rows = roc_sweep(probs, gts, ths)
    for (_, fa0, pd0), (_, fa1, pd1) in zip(rows, rows[1:]):
        assert pd1 >= pd0 and fa1 >= fa0
    assert rows[0][0] == ths[0]
    assert rows[-1][2] == dataset_pd([match_targets(binarize(p, ths[-1]), g) for p, g in zip(probs, gts)])
