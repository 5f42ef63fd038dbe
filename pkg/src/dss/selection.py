"""Mask selection: heuristic scoring, top-K, and the judge tournament.

Candidates are scored by how well they correlate with their similarity map
plus how little they touch the image border. The top K then enter a pairwise
tournament run in ascending score order: the judge compares the current
winner ("Mask A") against each next candidate ("Mask B"), so weak masks are
eliminated before the strongest contenders appear.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import requests

from .box_generation import pearson
from .core import (
    BackendError,
    ContractError,
    PixelMask,
    ProtocolError,
    iou,
    upsample_values,
)
from .io import ImageRef, image_to_png_b64, masked_overlay
from .segmentation import CandidateMask

logger = logging.getLogger(__name__)

STRATEGIES = (
    "pairwise-asc", "pairwise-desc", "pairwise-rand", "heuristic", "topk-single",
)

JUDGE_PROMPT = """CAMOUFLAGE MASK COMPARISON TASK
IMAGE: The image may contain a few animal/insect or human whose shape, color, texture, pattern and movement closely resemble its surroundings.
Overlap A: Current overlap mask
Overlap B: New candidate overlap mask
STEP-BY-STEP PROCESS:
1. OBJECT IDENTIFICATION:
- Carefully examine the image
- Identify all hidden/concealed objects and their exact locations.
2. SELECTION CRITERIA:
- PRIMARY: Choose the mask that covers ALL identified objects completely
- SECONDARY: Among masks that meet primary criterion, choose the one with least background
- If no mask covers all objects, choose the one that covers the most objects
OUTPUT JSON (DO NOT ADD ANY EXTRA INFO, JUST JSON!):
{
    "better_mask": "Mask A" / "Mask B",
}"""


@dataclass
class ScoredMask:
    """A candidate with its heuristic score; terms are None when the score
    was assigned rather than computed (the localization fallback)."""

    candidate: CandidateMask
    score: float
    corr_term: float | None = None
    bc_term: float | None = None


def boundary_contact_ratio(mask: PixelMask, margin_px: int = 10) -> float:
    """Fraction of the border band (four margin strips) that is foreground.

    Corner squares belong to the top/bottom strips; the left/right strips
    cover only the remaining middle rows, so no pixel is counted twice.
    """
    h, w = mask.height_px, mask.width_px
    n = margin_px
    if n < 1:
        raise ValueError("margin_px must be >= 1")
    if 2 * n >= min(h, w):
        raise ValueError(f"margin {n} too large for a {h}x{w} mask")
    bits = mask.bits
    contact = (
        int(bits[:n, :].sum())
        + int(bits[h - n:, :].sum())
        + int(bits[n:h - n, :n].sum())
        + int(bits[n:h - n, w - n:].sum())
    )
    band = 2 * n * w + 2 * n * (h - 2 * n)
    return contact / band


def score_candidate(
    candidate: CandidateMask, stride_px: int, margin_px: int = 10
) -> ScoredMask:
    """Correlation with the upsampled similarity map plus border penalty.

    score = corr(mask, sim) + (1 - boundary contact). Constant inputs on
    either side of the correlation give a 0 term.
    """
    if candidate.sim_map is None:
        raise ContractError("candidate carries no similarity map to score against")
    mask = candidate.mask
    sim_pix = upsample_values(candidate.sim_map.values, stride_px,
                              mask.height_px, mask.width_px)
    corr = pearson(mask.bits.astype(np.float64).reshape(-1), sim_pix.reshape(-1))
    bc = boundary_contact_ratio(mask, margin_px)
    return ScoredMask(candidate, corr + (1.0 - bc), corr_term=corr, bc_term=bc)


def rank_top_k(scored: list[ScoredMask], k: int) -> list[ScoredMask]:
    """Highest-scoring k candidates; equal scores keep their input order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].score, i))
    return [scored[i] for i in order[:k]]


def attach_vlos_candidate(
    top_k: list[ScoredMask], vlos: CandidateMask
) -> list[ScoredMask]:
    """Append the localization-route mask, scored at the top-K mean.

    With no keyed candidates at all, the localization mask becomes the sole
    candidate at score 0.
    """
    if not top_k:
        return [ScoredMask(vlos, 0.0)]
    mean_score = float(np.mean([s.score for s in top_k]))
    return list(top_k) + [ScoredMask(vlos, mean_score)]


class Judge(Protocol):
    def compare(self, image: ImageRef, mask_a: PixelMask, mask_b: PixelMask) -> str:
        """Return "A" or "B"."""
        ...


class StaticJudge:
    """Always answers the same side; degenerate baseline for hermetic runs."""

    def __init__(self, side: str = "B"):
        if side not in ("A", "B"):
            raise ValueError("side must be 'A' or 'B'")
        self.side = side

    def compare(self, image, mask_a, mask_b):
        return self.side


class IoUOracleJudge:
    """Prefers the mask with higher overlap against a planted reference.

    Deterministic and transitive, so the tournament must return the global
    best no matter the comparison order. Ties keep the current winner.
    """

    def __init__(self, planted):
        self.planted = planted

    def _ref(self, image: ImageRef) -> PixelMask:
        if isinstance(self.planted, dict):
            return self.planted[image.image_id]
        return self.planted

    def compare(self, image, mask_a, mask_b):
        ref = self._ref(image)
        return "A" if iou(mask_a, ref) >= iou(mask_b, ref) else "B"

    def select_best(self, image, masks: list[PixelMask]) -> int:
        ref = self._ref(image)
        scores = [iou(m, ref) for m in masks]
        return int(np.argmax(scores))


class NoisyIoUJudge:
    """IoU-preferring judge that errs more often on close calls.

    The probability of picking the worse mask is
    base_error * exp(-gap / gap_scale) where gap is the IoU difference.
    Seeded, so a fixed suite of comparisons is reproducible.
    """

    def __init__(self, planted, base_error: float = 0.35, gap_scale: float = 0.25,
                 seed: int = 0):
        self.planted = planted
        self.base_error = base_error
        self.gap_scale = gap_scale
        self.rng = random.Random(seed)

    def _ref(self, image: ImageRef) -> PixelMask:
        if isinstance(self.planted, dict):
            return self.planted[image.image_id]
        return self.planted

    def _p_error(self, gap: float) -> float:
        return self.base_error * float(np.exp(-gap / self.gap_scale))

    def compare(self, image, mask_a, mask_b):
        ref = self._ref(image)
        iou_a, iou_b = iou(mask_a, ref), iou(mask_b, ref)
        better = "A" if iou_a >= iou_b else "B"
        if self.rng.random() < self._p_error(abs(iou_a - iou_b)):
            return "B" if better == "A" else "A"
        return better

    def select_best(self, image, masks: list[PixelMask]) -> int:
        # one-shot choice over many masks confuses more than a pairwise call
        ref = self._ref(image)
        noisy = [
            iou(m, ref) + self.rng.gauss(0.0, self.base_error * 0.5)
            for m in masks
        ]
        return int(np.argmax(noisy))


class HttpJudge:
    """Client for a model server's pairwise mask comparison endpoint.

    The request carries the raw image and the two overlap images (image
    masked by each candidate), plus the comparison prompt.
    """

    def __init__(self, base_url: str, prompt: str = JUDGE_PROMPT,
                 timeout: float = 120.0, attempts: int = 2, backoff: float = 0.5,
                 session=None):
        self.base_url = base_url.rstrip("/")
        self.prompt = prompt
        self.timeout = timeout
        self.attempts = max(1, attempts)
        self.backoff = backoff
        self.session = session or requests.Session()

    def compare(self, image: ImageRef, mask_a: PixelMask, mask_b: PixelMask) -> str:
        pixels = image.load()
        payload = {
            "image": image.png_b64(),
            "overlap_a": image_to_png_b64(masked_overlay(pixels, mask_a)),
            "overlap_b": image_to_png_b64(masked_overlay(pixels, mask_b)),
            "prompt": self.prompt,
        }
        last = None
        for attempt in range(self.attempts):
            try:
                resp = self.session.post(self.base_url + "/judge", json=payload,
                                         timeout=self.timeout)
                if resp.status_code != 200:
                    raise BackendError(f"/judge returned HTTP {resp.status_code}")
                body = resp.json()
                verdict = body.get("better_mask") if isinstance(body, dict) else None
                if verdict == "Mask A":
                    return "A"
                if verdict == "Mask B":
                    return "B"
                raise ProtocolError(f"unrecognized judge verdict: {verdict!r}")
            except (requests.RequestException, ValueError) as exc:
                last = BackendError(f"/judge failed: {exc}")
            except BackendError as exc:
                last = exc
            if attempt + 1 < self.attempts:
                import time
                time.sleep(self.backoff)
        raise last


def _chain(order: list[ScoredMask], judge: Judge, image: ImageRef):
    """Winner-stays comparison chain; returns (winner, judge calls)."""
    current = order[0]
    calls = 0
    for challenger in order[1:]:
        calls += 1
        try:
            verdict = judge.compare(image, current.candidate.mask,
                                    challenger.candidate.mask)
        except BackendError as exc:
            logger.warning("judge call failed (%s); keeping higher-scored mask", exc)
            verdict = "B" if challenger.score > current.score else "A"
        if verdict == "B":
            current = challenger
        elif verdict != "A":
            logger.warning("judge verdict %r invalid; keeping higher-scored mask",
                           verdict)
            if challenger.score > current.score:
                current = challenger
    return current, calls


def pairwise_tournament(
    scored: list[ScoredMask], judge: Judge, image: ImageRef
) -> tuple[ScoredMask, int]:
    """Ascending-order tournament: exactly len - 1 judge calls."""
    if not scored:
        raise ValueError("tournament needs at least one candidate")
    order = sorted(range(len(scored)), key=lambda i: (scored[i].score, i))
    return _chain([scored[i] for i in order], judge, image)


def select_mask(
    scored: list[ScoredMask],
    judge: Judge,
    image: ImageRef,
    strategy: str = "pairwise-asc",
    rng: random.Random | None = None,
) -> tuple[ScoredMask, int]:
    """Pick the final mask under one of the selection strategies."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if not scored:
        raise ValueError("no candidates to select from")
    if strategy == "heuristic":
        best = max(range(len(scored)), key=lambda i: (scored[i].score, -i))
        return scored[best], 0
    if strategy == "topk-single":
        if not hasattr(judge, "select_best"):
            raise ValueError("judge does not support single-pass selection")
        idx = judge.select_best(image, [s.candidate.mask for s in scored])
        return scored[idx], 1
    if len(scored) == 1:
        return scored[0], 0
    if strategy == "pairwise-asc":
        return pairwise_tournament(scored, judge, image)
    if strategy == "pairwise-desc":
        order = sorted(range(len(scored)), key=lambda i: (-scored[i].score, i))
        return _chain([scored[i] for i in order], judge, image)
    # pairwise-rand
    order = list(range(len(scored)))
    (rng or random.Random(0)).shuffle(order)
    return _chain([scored[i] for i in order], judge, image)
