"""Metric correctness: anchors, degenerate conventions, and a from-scratch
weighted-F cross-check.

The weighted-F oracle below recomputes the measure with explicit loops and,
crucially, brackets every choice the production code gets to make when a
background pixel has several equidistant nearest foreground pixels. The
production value must land inside [Q(worst ties), Q(best ties)]; on smooth
inputs that interval collapses below 1e-6, which is the cross-implementation
agreement the suite certifies.
"""
import math

import numpy as np
import pytest

from dss import metrics
from dss.core import DimensionError, PixelMask
from dss.metrics import (
    composite_score,
    count_instances,
    e_measure,
    evaluate_pair,
    instance_bucket,
    mae,
    s_measure,
    stratified_report,
    weighted_f,
)

_EPS = np.finfo(np.float64).eps


# ===== independent weighted-F implementation (interval form) =====

def _loop_kernel(size=7, sigma=5.0):
    half = size // 2
    k = np.empty((size, size), dtype=np.float64)
    for i in range(size):
        for j in range(size):
            k[i, j] = math.exp(-((i - half) ** 2 + (j - half) ** 2)
                               / (2.0 * sigma * sigma))
    return k / k.sum()


def _loop_smooth(field, kernel):
    h, w = field.shape
    size = kernel.shape[0]
    half = size // 2
    out = np.zeros_like(field)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(size):
                for b in range(size):
                    ii, jj = i + a - half, j + b - half
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += kernel[a, b] * field[ii, jj]
            out[i, j] = acc
    return out


def _nearest_error_bounds(err, gt):
    """Per background pixel: min/max error over ALL equidistant nearest
    foreground pixels (exact integer squared distances), plus the distance."""
    h, w = gt.shape
    fg = np.argwhere(gt).astype(np.int64)
    lo, hi = err.copy(), err.copy()
    dist = np.zeros((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            if gt[i, j]:
                continue
            d2 = (fg[:, 0] - i) ** 2 + (fg[:, 1] - j) ** 2
            m = d2.min()
            tied = fg[d2 == m]
            vals = err[tied[:, 0], tied[:, 1]]
            lo[i, j] = vals.min()
            hi[i, j] = vals.max()
            dist[i, j] = math.sqrt(float(m))
    return lo, hi, dist


def _q_from_inherited(err, ea, dist, gt, beta=1.0):
    bg = ~gt
    min_err = err.copy()
    for i, j in zip(*np.nonzero(gt)):
        if ea[i, j] < min_err[i, j]:
            min_err[i, j] = ea[i, j]
    weight = np.ones_like(err)
    weight[bg] = 2.0 - np.exp(math.log(0.5) / 5.0 * dist[bg])
    ew = min_err * weight
    tp = gt.sum() - ew[gt].sum()
    fp = ew[bg].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tp / (_EPS + tp + fp)
    b2 = beta * beta
    q = (1.0 + b2) * recall * precision / (_EPS + recall + b2 * precision)
    return min(max(q, 0.0), 1.0)


def oracle_weighted_f_interval(pred, gt):
    """Lower/upper bound on weighted-F over every admissible tie choice.

    Monotone chain: larger inherited errors -> larger smoothed errors ->
    larger per-pixel min on foreground -> smaller recall and weighted TP
    (weighted FP never touches inherited values) -> smaller Q.
    """
    err = np.abs(pred - gt.astype(np.float64))
    et_lo, et_hi, dist = _nearest_error_bounds(err, gt)
    kernel = _loop_kernel()
    ea_lo = _loop_smooth(et_lo, kernel)
    ea_hi = _loop_smooth(et_hi, kernel)
    return (_q_from_inherited(err, ea_hi, dist, gt),
            _q_from_inherited(err, ea_lo, dist, gt))


def _blob_gt(rng, h, w):
    m = np.zeros((h, w), dtype=bool)
    yy, xx = np.ogrid[:h, :w]
    for _ in range(int(rng.integers(1, 4))):
        cy = int(rng.integers(2, h - 2))
        cx = int(rng.integers(2, w - 2))
        ry = int(rng.integers(2, max(3, h // 3)))
        rx = int(rng.integers(2, max(3, w // 3)))
        m |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return m


def test_weighted_f_agrees_with_bracket_oracle_on_smooth_cases():
    # foreground error held near-constant (1e-8 jitter keeps the tie
    # machinery live), so the tie interval must collapse below 1e-6
    rng = np.random.default_rng(11)
    for _ in range(20):
        h, w = int(rng.integers(18, 25)), int(rng.integers(20, 29))
        gt = _blob_gt(rng, h, w)
        if gt.sum() < 4 or (~gt).sum() < 4:
            gt[h // 2 - 2:h // 2 + 2, w // 2 - 2:w // 2 + 2] = True
            gt[0, :] = False
        c = float(rng.uniform(0.15, 0.85))
        pred = rng.uniform(0.0, 1.0, (h, w))
        pred[gt] = 1.0 - c + 1e-8 * (rng.uniform(size=int(gt.sum())) - 0.5)
        pred = np.clip(pred, 0.0, 1.0)

        lo, hi = oracle_weighted_f_interval(pred, gt)
        got = weighted_f(pred, gt)
        assert lo - 1e-12 <= got <= hi + 1e-12
        assert hi - lo <= 1e-6
        assert abs(got - 0.5 * (lo + hi)) <= 1e-6


def test_weighted_f_inside_bracket_for_arbitrary_soft_predictions():
    # no width claim here: wild foreground errors make ties matter, but the
    # production choice must still be an admissible one
    rng = np.random.default_rng(29)
    for _ in range(10):
        h, w = int(rng.integers(16, 24)), int(rng.integers(16, 26))
        gt = _blob_gt(rng, h, w)
        if gt.sum() < 4 or (~gt).sum() < 4:
            gt[2:6, 2:6] = True
            gt[-1, :] = False
        pred = rng.uniform(0.0, 1.0, (h, w))
        lo, hi = oracle_weighted_f_interval(pred, gt)
        assert lo - 1e-9 <= weighted_f(pred, gt) <= hi + 1e-9


def test_weighted_f_exact_match_when_nearest_is_unique():
    # a full-width band has a unique nearest foreground pixel everywhere,
    # so both implementations must agree to float precision
    rng = np.random.default_rng(47)
    for _ in range(5):
        h, w = 20, 24
        gt = np.zeros((h, w), dtype=bool)
        r0 = int(rng.integers(4, 12))
        gt[r0:r0 + 5, :] = True
        pred = rng.uniform(0.0, 1.0, (h, w))
        lo, hi = oracle_weighted_f_interval(pred, gt)
        assert hi - lo <= 1e-12
        assert weighted_f(pred, gt) == pytest.approx(lo, abs=1e-9)


# ===== perfect-prediction anchors =====

def test_perfect_prediction_anchors_on_50_random_masks():
    rng = np.random.default_rng(3)
    for i in range(50):
        h, w = 16 + (i % 5) * 6, 18 + (i % 4) * 8
        if i == 0:
            gt = np.zeros((h, w), dtype=bool)
        elif i == 1:
            gt = np.ones((h, w), dtype=bool)
        else:
            gt = _blob_gt(rng, h, w)
        pred = gt.astype(np.float64)
        assert mae(pred, gt) == 0.0
        assert s_measure(pred, gt) == pytest.approx(1.0, abs=1e-9)
        assert e_measure(pred, gt) == 1.0
        assert weighted_f(pred, gt) == pytest.approx(1.0, abs=1e-9)


def test_mae_examples():
    gt = np.zeros((10, 12), dtype=bool)
    gt[2:6, 3:9] = True
    assert mae(1.0 - gt.astype(np.float64), gt) == 1.0
    assert mae(np.full((10, 12), 0.5), gt) == 0.5


def test_mae_accepts_pixel_masks():
    gt = np.zeros((6, 6), dtype=bool)
    gt[1:3, 1:3] = True
    assert mae(PixelMask(6, 6, gt), PixelMask(6, 6, gt)) == 0.0


# ===== structure measure conventions =====

def test_s_measure_degenerate_ground_truths():
    empty = np.zeros((12, 14), dtype=bool)
    full = np.ones((12, 14), dtype=bool)
    assert s_measure(np.zeros((12, 14)), empty) == 1.0
    assert s_measure(np.ones((12, 14)), empty) == 0.0
    assert s_measure(np.full((12, 14), 0.25), empty) == 0.75
    assert s_measure(np.ones((12, 14)), full) == 1.0
    assert s_measure(np.zeros((12, 14)), full) == 0.0
    assert s_measure(np.full((12, 14), 0.4), full) == pytest.approx(0.4)


def test_s_measure_prefers_aligned_over_shifted():
    gt = np.zeros((24, 24), dtype=bool)
    gt[6:14, 6:14] = True
    shifted = np.zeros((24, 24))
    shifted[12:20, 12:20] = 1.0
    assert s_measure(gt.astype(float), gt) > s_measure(shifted, gt)


# ===== enhanced alignment conventions =====

def test_e_measure_complement_scores_low():
    gt = np.zeros((16, 20), dtype=bool)
    gt[4:10, 5:15] = True
    assert e_measure(1.0 - gt.astype(np.float64), gt) < 0.25


def test_e_measure_constant_prediction_floor():
    gt = np.zeros((16, 20), dtype=bool)
    gt[4:10, 5:15] = True
    n = gt.size
    floor = (n / 4.0) / (n - 1 + _EPS)
    assert e_measure(np.zeros((16, 20)), gt) == pytest.approx(floor, abs=1e-12)
    assert e_measure(np.ones((16, 20)), gt) == pytest.approx(floor, abs=1e-12)


def test_e_measure_degenerate_ground_truths():
    empty = np.zeros((10, 10), dtype=bool)
    full = np.ones((10, 10), dtype=bool)
    assert e_measure(np.zeros((10, 10)), empty) == 1.0
    assert e_measure(np.ones((10, 10)), empty) == pytest.approx(0.0, abs=1e-12)
    assert e_measure(np.ones((10, 10)), full) == 1.0
    assert e_measure(np.zeros((10, 10)), full) == pytest.approx(0.0, abs=1e-12)


def test_e_measure_soft_sweep_matches_threshold_average():
    # soft map that binarizes to the exact gt for every threshold in
    # (0.1, 0.9]; remaining thresholds give a constant map at the floor
    gt = np.zeros((16, 20), dtype=bool)
    gt[4:10, 5:15] = True
    soft = gt.astype(np.float64) * 0.8 + 0.1
    n = gt.size
    floor = (n / 4.0) / (n - 1 + _EPS)
    n_match = sum(
        bool(((soft >= t) == gt).all()) for t in np.linspace(0.0, 1.0, 256)
    )
    assert 0 < n_match < 256
    expected = (n_match * 1.0 + (256 - n_match) * floor) / 256.0
    assert e_measure(soft, gt) == pytest.approx(expected, abs=1e-12)


def test_e_measure_rejects_single_pixel():
    with pytest.raises(DimensionError):
        e_measure(np.ones((1, 1)), np.ones((1, 1), dtype=bool))


# ===== weighted-F conventions =====

def test_weighted_f_empty_ground_truth_convention():
    empty = np.zeros((8, 8), dtype=bool)
    assert weighted_f(np.zeros((8, 8)), empty) == 1.0
    assert weighted_f(np.ones((8, 8)), empty) == 0.0
    assert weighted_f(np.full((8, 8), 1e-3), empty) == 0.0


def test_weighted_f_empty_prediction_scores_zero():
    gt = np.zeros((10, 10), dtype=bool)
    gt[3:7, 3:7] = True
    assert weighted_f(np.zeros((10, 10)), gt) == 0.0


def test_weighted_f_near_miss_beats_far_miss():
    gt = np.zeros((24, 24), dtype=bool)
    gt[8:16, 8:16] = True
    near = np.zeros((24, 24))
    near[9:17, 9:17] = 1.0
    far = np.zeros((24, 24))
    far[0:8, 0:8] = 1.0
    assert weighted_f(near, gt) > weighted_f(far, gt)


# ===== shared input validation =====

def test_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        mae(np.zeros((4, 4)), np.zeros((4, 5), dtype=bool))


def test_prediction_range_is_enforced():
    with pytest.raises(ValueError):
        mae(np.full((4, 4), 1.5), np.zeros((4, 4), dtype=bool))


# ===== composite and instance stratification =====

def test_composite_formula_is_exact():
    rng = np.random.default_rng(5)
    for _ in range(100):
        m, s, e, f = rng.uniform(0.0, 1.0, 4)
        assert composite_score(m, s, e, f) == (s + e + f) / 3.0 - m
    assert composite_score(0.0, 1.0, 1.0, 1.0) == 1.0


def test_composite_decreases_with_mae():
    assert composite_score(0.2, 0.9, 0.9, 0.9) < composite_score(0.1, 0.9, 0.9, 0.9)


def test_count_instances_uses_8_connectivity():
    g = np.zeros((6, 6), dtype=bool)
    g[1, 1] = True
    g[2, 2] = True  # touches only diagonally
    assert count_instances(g) == 1
    g2 = np.zeros((8, 8), dtype=bool)
    g2[0:2, 0:2] = True
    g2[5:7, 0:2] = True
    g2[5:7, 5:7] = True
    assert count_instances(g2) == 3
    assert count_instances(np.zeros((4, 4), dtype=bool)) == 0


def test_instance_bucket_mapping():
    assert instance_bucket(0) == "0"
    assert instance_bucket(1) == "1"
    assert instance_bucket(2) == "2"
    assert instance_bucket(3) == "3+"
    assert instance_bucket(17) == "3+"


def test_evaluate_pair_keys_and_consistency():
    gt = np.zeros((14, 14), dtype=bool)
    gt[4:9, 4:9] = True
    row = evaluate_pair(gt.astype(np.float64), gt)
    assert set(row) == {"mae", "s_measure", "e_measure", "weighted_f", "composite"}
    assert row["composite"] == composite_score(
        row["mae"], row["s_measure"], row["e_measure"], row["weighted_f"]
    )


def _rec(m, s, e, f, n):
    return {
        "mae": m, "s_measure": s, "e_measure": e, "weighted_f": f,
        "composite": composite_score(m, s, e, f), "instance_count": n,
    }


def test_stratified_report_buckets_and_relative_change():
    records = [
        _rec(0.02, 0.9, 0.92, 0.88, 1),
        _rec(0.04, 0.8, 0.86, 0.80, 1),
        _rec(0.10, 0.7, 0.75, 0.65, 2),
        _rec(0.20, 0.5, 0.55, 0.45, 5),
    ]
    report = stratified_report(records)
    assert set(report.buckets) == {"1", "2", "3+"}
    assert report.overall["count"] == 4

    b1 = report.buckets["1"]
    assert b1["mae"] == pytest.approx(0.03)
    assert b1["composite"] == pytest.approx(
        composite_score(0.03, 0.85, 0.89, 0.84)
    )
    assert b1["composite_rel_change_pct"] == pytest.approx(0.0, abs=1e-12)

    b2 = report.buckets["2"]
    base = b1["composite"]
    assert b2["composite_rel_change_pct"] == pytest.approx(
        (b2["composite"] - base) / abs(base) * 100.0
    )
    assert b2["composite_rel_change_pct"] < 0.0
    assert any("bucket" not in note for note in report.notes) or report.notes == []


def test_stratified_report_notes_missing_buckets():
    report = stratified_report([_rec(0.05, 0.9, 0.9, 0.9, 1)])
    assert "bucket 2: no images" in report.notes
    assert "bucket 3+: no images" in report.notes
    assert not any(n.startswith("bucket 0") for n in report.notes)


def test_stratified_report_without_single_instance_baseline():
    report = stratified_report([_rec(0.05, 0.9, 0.9, 0.9, 2)])
    assert report.buckets["2"]["composite_rel_change_pct"] is None


def test_stratified_report_empty_input():
    report = stratified_report([])
    assert report.notes == ["no evaluable images"]
    assert report.overall == {}
    assert report.buckets == {}


def test_stratified_report_zero_instance_bucket_appears():
    report = stratified_report([
        _rec(0.05, 0.9, 0.9, 0.9, 1),
        _rec(0.00, 1.0, 1.0, 1.0, 0),
    ])
    assert "0" in report.buckets
    assert report.buckets["0"]["count"] == 1


def test_to_dict_round_trip_shape():
    report = stratified_report([_rec(0.05, 0.9, 0.9, 0.9, 1)])
    d = report.to_dict()
    assert set(d) == {"per_image", "overall", "buckets", "notes"}
    assert d["buckets"]["1"]["count"] == 1
