"""Mask quality metrics and the stratified evaluation report.

Implements the standard saliency/camouflage metric set: MAE, structure
measure (region+object similarity), mean enhanced-alignment measure, and
boundary-aware weighted F. Degenerate ground-truth conventions follow the
reference implementations of each metric and are noted inline.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import DimensionError, PixelMask

logger = logging.getLogger(__name__)

_EPS = np.finfo(np.float64).eps
_EIGHT = np.ones((3, 3), dtype=int)


def _as_pred(pred) -> np.ndarray:
    if isinstance(pred, PixelMask):
        return pred.bits.astype(np.float64)
    arr = np.asarray(pred, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError("prediction must be 2-D")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("prediction values must lie in [0, 1]")
    return arr


def _as_gt(gt) -> np.ndarray:
    if isinstance(gt, PixelMask):
        return gt.bits
    arr = np.asarray(gt)
    if arr.ndim != 2:
        raise DimensionError("ground truth must be 2-D")
    return arr > 0.5


def _pair(pred, gt):
    p, g = _as_pred(pred), _as_gt(gt)
    if p.shape != g.shape:
        raise DimensionError(f"pred {p.shape} vs gt {g.shape}")
    return p, g


def mae(pred, gt) -> float:
    """Mean absolute error between prediction and binary ground truth."""
    p, g = _pair(pred, gt)
    return float(np.abs(p - g.astype(np.float64)).mean())


# ===== structure measure =====

def _s_object_half(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mean = x.mean()
    return float(2.0 * mean / (mean * mean + 1.0 + x.std() + _EPS))


def _s_object(pred, gt) -> float:
    fg = _s_object_half(pred[gt])
    bg = _s_object_half(1.0 - pred[~gt])
    u = gt.mean()
    return u * fg + (1.0 - u) * bg


def _ssim(pred, gt) -> float:
    n = pred.size
    if n <= 1:
        return float(pred.reshape(-1)[0] == gt.reshape(-1)[0]) if n else 0.0
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1)
    sy = ((gt - y) ** 2).sum() / (n - 1)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1)
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0.0:
        return float(a / (b + _EPS))
    return 1.0 if b == 0.0 else 0.0


def _s_region(pred, gt) -> float:
    h, w = gt.shape
    if not gt.any():
        cy, cx = h // 2, w // 2
    else:
        rows, cols = np.nonzero(gt)
        cy = int(np.round(rows.mean()))
        cx = int(np.round(cols.mean()))
    # empty quadrants get zero weight, so a border centroid is harmless
    gf = gt.astype(np.float64)
    area = h * w
    quads = []
    weights = []
    for rs, cs in (((0, cy), (0, cx)), ((0, cy), (cx, w)),
                   ((cy, h), (0, cx)), ((cy, h), (cx, w))):
        gq = gf[rs[0]:rs[1], cs[0]:cs[1]]
        pq = pred[rs[0]:rs[1], cs[0]:cs[1]]
        quads.append(_ssim(pq, gq))
        weights.append(gq.size / area)
    # last weight closes the partition (guards accumulated rounding)
    weights[3] = 1.0 - weights[0] - weights[1] - weights[2]
    return float(sum(w * q for w, q in zip(weights, quads)))


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object similarity + (1-alpha) * region SSIM.

    All-background ground truth scores 1 - mean(pred) and all-foreground
    scores mean(pred), so an exactly matching prediction always reaches 1.
    """
    p, g = _pair(pred, gt)
    u = g.mean()
    if u == 0.0:
        return float(1.0 - p.mean())
    if u == 1.0:
        return float(p.mean())
    score = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return float(min(max(score, 0.0), 1.0))


# ===== enhanced-alignment measure =====

def _enhanced_matrix(fm: np.ndarray, gt: np.ndarray) -> np.ndarray:
    # degenerate conventions: empty gt rewards empty predictions, full gt
    # rewards full ones; otherwise the centered alignment formula applies
    if not gt.any():
        return 1.0 - fm
    if gt.all():
        return fm
    gt_c = gt.astype(np.float64) - gt.mean()
    fm_c = fm - fm.mean()
    align = 2.0 * gt_c * fm_c / (gt_c * gt_c + fm_c * fm_c + _EPS)
    return (align + 1.0) ** 2 / 4.0


def e_measure(pred, gt) -> float:
    """Enhanced-alignment measure; soft inputs average a 256-threshold sweep.

    A constant prediction has zero alignment everywhere, which floors the
    non-degenerate score near 1/4 (exactly N / (4(N-1))).
    """
    p, g = _pair(pred, gt)
    n = p.size
    if n < 2:
        raise DimensionError("e_measure needs at least two pixels")

    def one(fm):
        raw = float(_enhanced_matrix(fm, g).sum() / (n - 1 + _EPS))
        # the n - 1 divisor puts an exact match a hair above 1; clamp so the
        # score stays in [0, 1] and a perfect prediction lands exactly on 1
        return min(max(raw, 0.0), 1.0)

    vals = np.unique(p)
    if np.isin(vals, (0.0, 1.0)).all():
        return one(p)
    thresholds = np.linspace(0.0, 1.0, 256)
    return float(np.mean([one((p >= t).astype(np.float64)) for t in thresholds]))


# ===== weighted F =====

def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return k / k.sum()


def weighted_f(pred, gt, beta: float = 1.0) -> float:
    """Boundary-aware weighted F measure.

    Background errors inherit the error of their nearest foreground pixel
    before smoothing, and are discounted exponentially with distance from
    the object. Empty ground truth scores 1 for an empty prediction and 0
    otherwise (the formula itself is undefined there).
    """
    p, g = _pair(pred, gt)
    if not g.any():
        return 1.0 if p.max() == 0.0 else 0.0
    dist, (inear, jnear) = ndimage.distance_transform_edt(~g, return_indices=True)
    err = np.abs(p - g.astype(np.float64))
    err_t = err.copy()
    bg = ~g
    err_t[bg] = err[inear[bg], jnear[bg]]
    smoothed = ndimage.convolve(err_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = err.copy()
    take = g & (smoothed < err)
    min_err[take] = smoothed[take]
    weight = np.ones_like(p)
    weight[bg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[bg])
    ew = min_err * weight
    tp_w = g.sum() - ew[g].sum()
    fp_w = ew[bg].sum()
    recall = 1.0 - ew[g].mean()
    precision = tp_w / (_EPS + tp_w + fp_w)
    b2 = beta * beta
    q = (1.0 + b2) * recall * precision / (_EPS + recall + b2 * precision)
    return float(min(max(q, 0.0), 1.0))


# ===== aggregation =====

def composite_score(mae_v: float, s_v: float, e_v: float, fw_v: float) -> float:
    """Single-number summary: mean of the three similarity metrics minus MAE."""
    return (s_v + e_v + fw_v) / 3.0 - mae_v


def count_instances(gt) -> int:
    """Number of 8-connected foreground components in the ground truth."""
    g = _as_gt(gt)
    _, n = ndimage.label(g, structure=_EIGHT)
    return int(n)


def instance_bucket(n_instances: int) -> str:
    if n_instances <= 0:
        return "0"
    if n_instances == 1:
        return "1"
    if n_instances == 2:
        return "2"
    return "3+"


def evaluate_pair(pred, gt) -> dict:
    """All four metrics plus the composite for one prediction."""
    m = mae(pred, gt)
    s = s_measure(pred, gt)
    e = e_measure(pred, gt)
    f = weighted_f(pred, gt)
    return {
        "mae": m, "s_measure": s, "e_measure": e, "weighted_f": f,
        "composite": composite_score(m, s, e, f),
    }


_METRIC_KEYS = ("mae", "s_measure", "e_measure", "weighted_f")


@dataclass
class EvalReport:
    """Per-image metrics plus aggregates stratified by instance count."""

    per_image: list = field(default_factory=list)
    overall: dict = field(default_factory=dict)
    buckets: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_image": self.per_image,
            "overall": self.overall,
            "buckets": self.buckets,
            "notes": self.notes,
        }


def _aggregate(records: list[dict]) -> dict:
    agg = {k: float(np.mean([r[k] for r in records])) for k in _METRIC_KEYS}
    agg["composite"] = composite_score(
        agg["mae"], agg["s_measure"], agg["e_measure"], agg["weighted_f"]
    )
    agg["count"] = len(records)
    return agg


def stratified_report(records: list[dict]) -> EvalReport:
    """Group per-image records into instance-count buckets {1, 2, 3+}.

    Each record needs the four metrics plus ``instance_count``. Bucket rows
    report mean metrics, the composite of those means, and the relative
    composite change against the single-instance bucket.
    """
    report = EvalReport(per_image=list(records))
    if not records:
        report.notes.append("no evaluable images")
        return report
    report.overall = _aggregate(records)
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(instance_bucket(int(r["instance_count"])), []).append(r)
    base = _aggregate(groups["1"])["composite"] if "1" in groups else None
    for name in ("0", "1", "2", "3+"):
        if name not in groups:
            if name != "0":
                report.notes.append(f"bucket {name}: no images")
            continue
        row = _aggregate(groups[name])
        if base is not None and abs(base) > 1e-12:
            row["composite_rel_change_pct"] = (
                (row["composite"] - base) / abs(base) * 100.0
            )
        else:
            row["composite_rel_change_pct"] = None
        report.buckets[name] = row
    return report
