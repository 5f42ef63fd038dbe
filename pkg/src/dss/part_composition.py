"""Part composition: refine a cluster mask into a feature-coherent object mask.

Each iteration recomputes soft-weighted foreground/background centroids,
reassigns every patch by relative centroid distance through a sigmoid, and
evaluates a coherence energy (mean intra-set distances minus centroid
separation). Iteration stops once the energy change falls below epsilon.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import DegenerateClusterError, DimensionError, SoftPatchMask

logger = logging.getLogger(__name__)


@dataclass
class RefinementTrace:
    """Full history of one refinement run.

    ``masks`` holds the initial mask plus one entry per completed iteration;
    ``energies`` holds one value per completed iteration. ``dropped`` marks a
    run abandoned because an update degenerated (no effective foreground or
    background left), in which case the offending iterate is discarded.
    """

    masks: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    converged: bool = False
    dropped: bool = False

    @property
    def iterations_run(self) -> int:
        return len(self.energies)

    @property
    def final_mask(self) -> SoftPatchMask:
        return self.masks[-1]


def _check_features(features: np.ndarray, n_expected: int) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("features must be (N, d)")
    if x.shape[0] != n_expected:
        raise DimensionError(
            f"{x.shape[0]} feature rows for a mask of {n_expected} patches"
        )
    return x


def centroids(features: np.ndarray, probs: np.ndarray):
    """Soft-weighted foreground and background centroids of the patch set."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(probs, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.size:
        raise DimensionError("features and probs disagree on patch count")
    w_f = y.sum()
    w_b = (1.0 - y).sum()
    if w_f == 0.0 or w_b == 0.0:
        raise DegenerateClusterError(
            "mask has no effective foreground or no effective background"
        )
    mu_f = (y[:, None] * x).sum(axis=0) / w_f
    mu_b = ((1.0 - y)[:, None] * x).sum(axis=0) / w_b
    return mu_f, mu_b


def update_soft_labels(
    features: np.ndarray, mu_f: np.ndarray, mu_b: np.ndarray
) -> np.ndarray:
    """Sigmoid of (distance to background centroid - distance to foreground)."""
    x = np.asarray(features, dtype=np.float64)
    d_f = np.linalg.norm(x - np.asarray(mu_f, dtype=np.float64), axis=1)
    d_b = np.linalg.norm(x - np.asarray(mu_b, dtype=np.float64), axis=1)
    return expit(d_b - d_f)


def coherence_energy(features: np.ndarray, probs: np.ndarray) -> float:
    """Mean intra-set centroid distances minus centroid separation.

    Centroids are soft-weighted from ``probs``; the foreground/background
    index sets are the hard split at 0.5. Lower is better. Raises when either
    hard set is empty.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(probs, dtype=np.float64).reshape(-1)
    fg = y > 0.5
    if not fg.any() or fg.all():
        raise DegenerateClusterError("hard split leaves an empty side")
    mu_f, mu_b = centroids(x, y)
    intra_f = np.linalg.norm(x[fg] - mu_f, axis=1).mean()
    intra_b = np.linalg.norm(x[~fg] - mu_b, axis=1).mean()
    return float(intra_f + intra_b - np.linalg.norm(mu_f - mu_b))


def refine_cluster(
    features: np.ndarray,
    initial: SoftPatchMask,
    epsilon: float,
    max_iterations: int,
) -> RefinementTrace:
    """Iterate the centroid/reassign/energy loop from an initial patch mask.

    Convergence is declared when two consecutive energies differ by less than
    ``epsilon`` (the test first applies at the second iteration). A run whose
    update empties one side is returned with ``dropped`` set; the caller is
    expected to discard that cluster.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    y = initial.flat().astype(np.float64)
    x = _check_features(features, y.size)
    if y.sum() == 0.0 or (1.0 - y).sum() == 0.0:
        raise DegenerateClusterError("initial mask is entirely one-sided")

    trace = RefinementTrace(masks=[initial])
    for _ in range(max_iterations):
        try:
            mu_f, mu_b = centroids(x, y)
            y_new = update_soft_labels(x, mu_f, mu_b)
            energy = coherence_energy(x, y_new)
        except DegenerateClusterError:
            trace.dropped = True
            logger.info("refinement degenerated at iteration %d; cluster dropped",
                        trace.iterations_run + 1)
            break
        y = y_new
        trace.masks.append(
            SoftPatchMask(initial.height, initial.width,
                          y.reshape(initial.height, initial.width))
        )
        trace.energies.append(energy)
        if len(trace.energies) >= 2 and abs(
            trace.energies[-1] - trace.energies[-2]
        ) < epsilon:
            trace.converged = True
            break
    return trace
