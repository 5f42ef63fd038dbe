"""Core record types, primitive mask/feature ops, and run configuration."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Shape or dimensionality of an input violates a documented precondition."""


class DegenerateClusterError(RuntimeError):
    """A soft mask has no effective foreground or no effective background."""


class BackendError(RuntimeError):
    """A model backend call failed; safe to retry."""


class ProtocolError(BackendError):
    """A backend reply violates the wire contract (bad shape, bad payload)."""


class ContractError(RuntimeError):
    """An internal hand-off between stages violates its contract."""


class ConfigError(ValueError):
    """Bad configuration file or parameter value."""


# ===== record types =====


@dataclass
class PatchFeatureMap:
    """Dense per-patch feature grid for one image.

    ``data`` is (height, width, dim) float32; ``stride_px`` is the pixel
    footprint of one patch along each axis.
    """

    height: int
    width: int
    dim: int
    stride_px: int
    data: np.ndarray

    def __post_init__(self):
        if min(self.height, self.width, self.dim, self.stride_px) < 1:
            raise DimensionError("patch grid dims, feature dim and stride must be >= 1")
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != (self.height, self.width, self.dim):
            raise DimensionError(
                f"feature data shape {self.data.shape} != "
                f"({self.height}, {self.width}, {self.dim})"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature data must be finite")

    @property
    def n_patches(self) -> int:
        return self.height * self.width

    def flat(self) -> np.ndarray:
        """(N, dim) view in row-major patch order."""
        return self.data.reshape(-1, self.dim)


@dataclass
class SoftPatchMask:
    """Per-patch foreground probabilities on the same grid as a feature map."""

    height: int
    width: int
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (self.height, self.width):
            raise DimensionError(
                f"probs shape {self.probs.shape} != ({self.height}, {self.width})"
            )
        if self.probs.size == 0:
            raise DimensionError("empty mask grid")
        lo, hi = float(self.probs.min()), float(self.probs.max())
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0.0 or hi > 1.0:
            raise ValueError("probs must lie in [0, 1]")

    def flat(self) -> np.ndarray:
        return self.probs.reshape(-1)

    def hard(self, threshold: float = 0.5) -> np.ndarray:
        """Binary (height, width) array, foreground iff prob > threshold."""
        return self.probs > threshold


@dataclass
class PixelMask:
    """Binary mask at image resolution."""

    height_px: int
    width_px: int
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if self.bits.dtype != np.bool_:
            self.bits = self.bits.astype(bool)
        if self.bits.shape != (self.height_px, self.width_px):
            raise DimensionError(
                f"bits shape {self.bits.shape} != ({self.height_px}, {self.width_px})"
            )

    @classmethod
    def empty(cls, height_px: int, width_px: int) -> "PixelMask":
        return cls(height_px, width_px, np.zeros((height_px, width_px), dtype=bool))

    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box, half-open on neither side: covers [x1, x2) x [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self.as_tuple()}")
        if min(self.x1, self.y1) < 0:
            raise ValueError(f"negative box corner {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def clipped(self, width_px: int, height_px: int) -> "Box":
        return Box(
            max(0, self.x1), max(0, self.y1),
            min(width_px, self.x2), min(height_px, self.y2),
        )


# ===== configuration =====

# config-file keys use the short published names; right column = attribute.
_CONFIG_KEYS = {
    "r": "leiden_resolution",
    "epsilon": "energy_epsilon",
    "tau": "corr_threshold",
    "K": "top_k",
    "pca_dims": "pca_dims",
    "max_pc_iterations": "max_pc_iterations",
    "boundary_margin_px": "boundary_margin_px",
    "knn_k": "knn_k",
    "binarize_prob_threshold": "binarize_prob_threshold",
    "min_area_patches": "min_area_patches",
}

_INT_FIELDS = {
    "top_k", "pca_dims", "max_pc_iterations",
    "boundary_margin_px", "knn_k", "min_area_patches",
}


@dataclass
class Config:
    """Pipeline parameters; defaults follow the published operating point."""

    leiden_resolution: float = 0.5
    energy_epsilon: float = 1.0
    corr_threshold: float = 0.95
    top_k: int = 5
    pca_dims: int = 16
    max_pc_iterations: int = 20
    boundary_margin_px: int = 10
    knn_k: int = 15
    binarize_prob_threshold: float = 0.5
    min_area_patches: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.leiden_resolution > 0:
            raise ConfigError("r must be > 0")
        if not self.energy_epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not (0.0 < self.corr_threshold <= 1.0):
            raise ConfigError("tau must lie in (0, 1]")
        if not (0.0 < self.binarize_prob_threshold < 1.0):
            raise ConfigError("binarize_prob_threshold must lie in (0, 1)")
        for name in _INT_FIELDS:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")

    def to_dict(self) -> dict:
        return {k: getattr(self, attr) for k, attr in _CONFIG_KEYS.items()}


def load_config(path: str | Path) -> Config:
    """Parse a flat key-value config file (``key = value``, ``#`` comments).

    Unknown keys are rejected so typos cannot silently fall back to defaults.
    """
    overrides = {}
    unknown = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = parts
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            unknown.append(key)
            continue
        attr = _CONFIG_KEYS[key]
        try:
            overrides[attr] = int(value) if attr in _INT_FIELDS else float(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return Config(**overrides)


# ===== primitive ops =====


def pca_reduce(features: np.ndarray, out_dims: int) -> np.ndarray:
    """Project (N, d) rows onto their top ``out_dims`` principal axes.

    Deterministic sign convention: each component is flipped so its
    largest-magnitude loading is positive. If the centered data has rank
    below ``out_dims`` the missing columns are zero-padded and a diagnostic
    is logged.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError("features must be a non-empty (N, d) array")
    n, d = x.shape
    if not (1 <= out_dims <= d):
        raise DimensionError(f"out_dims must lie in [1, {d}], got {out_dims}")
    centered = x - x.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s[0] * max(n, d) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    keep = min(out_dims, rank)
    out = np.zeros((n, out_dims), dtype=np.float64)
    if keep:
        comps = vt[:keep]
        flip = np.sign(comps[np.arange(keep), np.abs(comps).argmax(axis=1)])
        comps = comps * flip[:, None]
        out[:, :keep] = centered @ comps.T
    if rank < out_dims:
        logger.warning(
            "pca_reduce: data rank %d < out_dims %d; padding with zero components",
            rank, out_dims,
        )
    return out


def iou(a: PixelMask, b: PixelMask) -> float:
    """Intersection over union. Two empty masks count as identical (1.0)."""
    if (a.height_px, a.width_px) != (b.height_px, b.width_px):
        raise DimensionError("iou requires same-size masks")
    inter = np.logical_and(a.bits, b.bits).sum()
    union = np.logical_or(a.bits, b.bits).sum()
    if union == 0:
        return 1.0
    return float(inter) / float(union)


def or_merge(masks: list[PixelMask]) -> PixelMask:
    """Pixelwise union of same-size masks."""
    if not masks:
        raise ValueError("or_merge needs at least one mask")
    h, w = masks[0].height_px, masks[0].width_px
    acc = np.zeros((h, w), dtype=bool)
    for m in masks:
        if (m.height_px, m.width_px) != (h, w):
            raise DimensionError("or_merge requires same-size masks")
        acc |= m.bits
    return PixelMask(h, w, acc)


def upsample_values(
    values: np.ndarray, stride_px: int, target_h: int, target_w: int
) -> np.ndarray:
    """Expand an (H', W') patch grid to pixel resolution by block replication.

    Each patch becomes a stride x stride block; the result is then cropped or
    edge-replicated to the exact target size, so residual border pixels take
    the value of the nearest patch.
    """
    grid = np.asarray(values)
    if grid.ndim != 2:
        raise DimensionError("values must be 2-D")
    if stride_px < 1:
        raise ValueError("stride_px must be >= 1")
    gh, gw = grid.shape
    # target must at least reach into the last patch row/column
    if target_h < (gh - 1) * stride_px + 1 or target_w < (gw - 1) * stride_px + 1:
        raise DimensionError(
            f"target ({target_h}, {target_w}) too small for grid "
            f"({gh}, {gw}) at stride {stride_px}"
        )
    big = np.repeat(np.repeat(grid, stride_px, axis=0), stride_px, axis=1)
    big = big[:target_h, :target_w]
    pad_h, pad_w = target_h - big.shape[0], target_w - big.shape[1]
    if pad_h or pad_w:
        big = np.pad(big, ((0, pad_h), (0, pad_w)), mode="edge")
    return big


def upsample_mask(
    mask: SoftPatchMask,
    stride_px: int,
    target_h: int,
    target_w: int,
    threshold: float = 0.5,
) -> PixelMask:
    """Binarize a soft patch mask at ``threshold`` and expand to pixel size."""
    pix = upsample_values(mask.probs, stride_px, target_h, target_w)
    return PixelMask(target_h, target_w, pix > threshold)
