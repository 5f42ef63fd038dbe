"""Similarity-driven box generation from refined cluster masks.

Each refined cluster yields a cosine-similarity map against its foreground
centroid. Near-duplicate maps (Pearson correlation above tau) merge by
entrywise mean, survivors binarize by Otsu's threshold, and each connected
foreground component becomes one box prompt in pixel coordinates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Box, DimensionError, PixelMask, SoftPatchMask

logger = logging.getLogger(__name__)

# 8-connectivity: diagonal patch adjacency joins components
_EIGHT = np.ones((3, 3), dtype=int)


@dataclass
class SimilarityMap:
    """Per-patch cosine similarity against one cluster's foreground centroid."""

    height: int
    width: int
    values: np.ndarray
    source_cluster: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise DimensionError(
                f"values shape {self.values.shape} != ({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("similarity values must be finite")
        if self.values.min() < -1.0 - 1e-9 or self.values.max() > 1.0 + 1e-9:
            raise ValueError("cosine similarities must lie in [-1, 1]")

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass
class BoxProposalSet:
    """Boxes extracted from one surviving similarity map."""

    source_cluster: int
    boxes: list
    binarized: PixelMask
    smap: "SimilarityMap | None" = None


def similarity_map(
    features: np.ndarray, mask: SoftPatchMask, source_cluster: int = 0
) -> SimilarityMap:
    """Cosine similarity of every patch against the soft foreground centroid.

    Zero-norm rows (or a zero-norm centroid) compare as 0, with a diagnostic.
    """
    x = np.asarray(features, dtype=np.float64)
    y = mask.flat()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DimensionError("features and mask disagree on patch count")
    w = y.sum()
    if w == 0.0:
        raise DimensionError("mask has no foreground weight")
    mu = (y[:, None] * x).sum(axis=0) / w
    mu_norm = np.linalg.norm(mu)
    norms = np.linalg.norm(x, axis=1)
    if mu_norm == 0.0:
        logger.warning("similarity_map: zero-norm centroid, map is all zeros")
        vals = np.zeros(y.size)
    else:
        n_zero = int((norms == 0.0).sum())
        if n_zero:
            logger.warning("similarity_map: %d zero-norm patches compare as 0", n_zero)
        denom = norms * mu_norm
        vals = np.divide(x @ mu, denom, out=np.zeros(y.size), where=denom > 0)
    vals = np.clip(vals, -1.0, 1.0)
    return SimilarityMap(mask.height, mask.width,
                         vals.reshape(mask.height, mask.width), source_cluster)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation with the convention that zero variance gives 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size or a.size < 2:
        raise DimensionError("pearson needs two equal-length arrays of size >= 2")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        return 0.0
    return float(np.clip((da * db).sum() / denom, -1.0, 1.0))


def dedup_maps(maps: list[SimilarityMap], tau: float) -> list[SimilarityMap]:
    """Merge groups of maps whose pairwise correlation exceeds tau.

    Correlation above tau defines graph edges; each connected component
    (so chains merge transitively) collapses to the entrywise mean of its
    members. Output keeps the input order of each group's first member, which
    also donates its source cluster id.
    """
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must lie in (0, 1]")
    n = len(maps)
    if n <= 1:
        return list(maps)
    shape = (maps[0].height, maps[0].width)
    for m in maps:
        if (m.height, m.width) != shape:
            raise DimensionError("all similarity maps must share one grid")
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if pearson(maps[i].flat(), maps[j].flat()) > tau:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    out = []
    for members in sorted(groups.values(), key=lambda g: g[0]):
        first = maps[members[0]]
        if len(members) == 1:
            out.append(first)
            continue
        mean_vals = np.mean([maps[i].values for i in members], axis=0)
        out.append(SimilarityMap(first.height, first.width, mean_vals,
                                 first.source_cluster))
    return out


def otsu_threshold(values: np.ndarray) -> float | None:
    """Exact Otsu threshold over raw values (no histogram binning).

    Returns the value t maximizing between-class variance for the split
    {v < t} / {v >= t}; ties resolve to the smallest such t. None when all
    values are equal (no valid split).
    """
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = v.size
    if n < 2 or v[0] == v[-1]:
        return None
    csum = np.cumsum(v)
    total = csum[-1]
    # candidate split before index i requires a value change at i
    idx = np.flatnonzero(v[1:] > v[:-1]) + 1
    counts = idx.astype(np.float64)
    mean0 = csum[idx - 1] / counts
    mean1 = (total - csum[idx - 1]) / (n - counts)
    var_between = (counts / n) * ((n - counts) / n) * (mean0 - mean1) ** 2
    best = int(np.argmax(var_between))  # argmax takes the first = smallest t
    return float(v[idx[best]])


def binarize_map(smap: SimilarityMap) -> PixelMask:
    """Binary patch-grid mask at the Otsu threshold (foreground: v >= t).

    A constant map has no threshold and yields an empty mask plus a
    diagnostic.
    """
    t = otsu_threshold(smap.values)
    if t is None:
        logger.warning("binarize_map: constant similarity map, empty mask")
        return PixelMask.empty(smap.height, smap.width)
    return PixelMask(smap.height, smap.width, smap.values >= t)


def extract_boxes(
    binary: PixelMask,
    stride_px: int,
    image_height_px: int,
    image_width_px: int,
    min_area_patches: int = 2,
) -> list[Box]:
    """Tight pixel boxes around 8-connected components of a patch-grid mask.

    Components smaller than ``min_area_patches`` are dropped. Patch (r, c)
    spans pixels [c*stride, (c+1)*stride) x [r*stride, (r+1)*stride), clipped
    to the image. Boxes come out sorted by top-left corner.
    """
    if stride_px < 1 or min_area_patches < 1:
        raise ValueError("stride_px and min_area_patches must be >= 1")
    labels, n_comp = ndimage.label(binary.bits, structure=_EIGHT)
    boxes = []
    for comp in range(1, n_comp + 1):
        rows, cols = np.nonzero(labels == comp)
        if rows.size < min_area_patches:
            continue
        box = Box(
            int(cols.min()) * stride_px,
            int(rows.min()) * stride_px,
            (int(cols.max()) + 1) * stride_px,
            (int(rows.max()) + 1) * stride_px,
        ).clipped(image_width_px, image_height_px)
        boxes.append(box)
    return sorted(boxes, key=lambda b: (b.y1, b.x1, b.y2, b.x2))


def propose_boxes(
    maps: list[SimilarityMap],
    tau: float,
    stride_px: int,
    image_height_px: int,
    image_width_px: int,
    min_area_patches: int = 2,
) -> list[BoxProposalSet]:
    """Dedup, binarize and box every similarity map; empty sets are dropped."""
    proposals = []
    for smap in dedup_maps(maps, tau):
        binarized = binarize_map(smap)
        boxes = extract_boxes(binarized, stride_px, image_height_px,
                              image_width_px, min_area_patches)
        if not boxes:
            logger.info("map from cluster %d produced no boxes; skipped",
                        smap.source_cluster)
            continue
        proposals.append(BoxProposalSet(smap.source_cluster, boxes, binarized, smap))
    return proposals
