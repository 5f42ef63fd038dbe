"""Promptable segmentation backends and candidate mask assembly.

A backend turns an image plus box prompts into one pixel mask per box. The
HTTP client speaks to a model server; the bundled mocks let the pipeline run
hermetically (box interiors, or intersection with a planted mask).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import requests

from .box_generation import BoxProposalSet, SimilarityMap
from .core import BackendError, Box, DimensionError, PixelMask, ProtocolError, or_merge
from .io import ImageRef, png_b64_to_mask

logger = logging.getLogger(__name__)

SOURCE_FOD = "fod"
SOURCE_VLOS = "vlos"


@dataclass
class SegmentRequest:
    image: ImageRef
    boxes: list

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("segment request needs at least one box")
        h, w = self.image.height_px, self.image.width_px
        for b in self.boxes:
            if b.x2 > w or b.y2 > h:
                raise DimensionError(f"box {b.as_tuple()} exceeds image {w}x{h}")


@dataclass
class CandidateMask:
    """One selectable mask with its provenance."""

    mask: PixelMask
    source: str
    source_cluster: int | None = None
    sim_map: SimilarityMap | None = None
    boxes: list = field(default_factory=list)


class Segmenter(Protocol):
    def segment_boxes(self, image: ImageRef, boxes: list) -> list[PixelMask]:
        ...


class MockSegmenter:
    """Returns each box interior as its mask; hermetic stand-in for tests."""

    def segment_boxes(self, image: ImageRef, boxes: list) -> list[PixelMask]:
        h, w = image.height_px, image.width_px
        out = []
        for b in boxes:
            bits = np.zeros((h, w), dtype=bool)
            c = b.clipped(w, h)
            bits[c.y1:c.y2, c.x1:c.x2] = True
            out.append(PixelMask(h, w, bits))
        return out


class OracleMockSegmenter:
    """Returns the planted mask clipped to each box.

    ``planted`` maps image id to its ground-truth pixel mask; a single mask
    serves every image. Used for end-to-end validation where the ideal
    segmenter response is known.
    """

    def __init__(self, planted):
        self.planted = planted

    def _mask_for(self, image: ImageRef) -> PixelMask:
        if isinstance(self.planted, dict):
            try:
                return self.planted[image.image_id]
            except KeyError:
                raise BackendError(f"no planted mask for image {image.image_id}")
        return self.planted

    def segment_boxes(self, image: ImageRef, boxes: list) -> list[PixelMask]:
        planted = self._mask_for(image)
        h, w = planted.height_px, planted.width_px
        out = []
        for b in boxes:
            bits = np.zeros((h, w), dtype=bool)
            c = b.clipped(w, h)
            bits[c.y1:c.y2, c.x1:c.x2] = planted.bits[c.y1:c.y2, c.x1:c.x2]
            out.append(PixelMask(h, w, bits))
        return out


class HttpSegmenter:
    """Client for a model server's box-prompted segmentation endpoint."""

    def __init__(self, base_url: str, timeout: float = 120.0, attempts: int = 2,
                 backoff: float = 0.5, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.attempts = max(1, attempts)
        self.backoff = backoff
        self.session = session or requests.Session()

    def segment_boxes(self, image: ImageRef, boxes: list) -> list[PixelMask]:
        payload = {
            "image": image.png_b64(),
            "boxes": [list(b.as_tuple()) for b in boxes],
        }
        body = self._post_json("/segment", payload)
        if not isinstance(body, dict) or "masks" not in body:
            raise ProtocolError("segment reply missing 'masks'")
        try:
            return [png_b64_to_mask(m) for m in body["masks"]]
        except Exception as exc:
            raise ProtocolError(f"undecodable mask in segment reply: {exc}") from exc

    def _post_json(self, route: str, payload: dict):
        last = None
        for attempt in range(self.attempts):
            try:
                resp = self.session.post(self.base_url + route, json=payload,
                                         timeout=self.timeout)
                if resp.status_code != 200:
                    raise BackendError(
                        f"{route} returned HTTP {resp.status_code}: {resp.text[:200]}"
                    )
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = BackendError(f"{route} failed: {exc}")
            except BackendError as exc:
                last = exc
            if attempt + 1 < self.attempts:
                time.sleep(self.backoff)
        raise last


def segment(request: SegmentRequest, backend: Segmenter) -> list[PixelMask]:
    """Run the backend and enforce the reply contract: one mask per box,
    each at the image's pixel dimensions."""
    masks = backend.segment_boxes(request.image, request.boxes)
    if len(masks) != len(request.boxes):
        raise ProtocolError(
            f"backend returned {len(masks)} masks for {len(request.boxes)} boxes"
        )
    h, w = request.image.height_px, request.image.width_px
    for m in masks:
        if (m.height_px, m.width_px) != (h, w):
            raise ProtocolError(
                f"backend mask is {m.height_px}x{m.width_px}, image is {h}x{w}"
            )
    return masks


def fod_candidates(
    image: ImageRef, proposals: list[BoxProposalSet], backend: Segmenter
) -> list[CandidateMask]:
    """One candidate per proposal set: per-box masks unioned into one mask."""
    out = []
    for prop in proposals:
        masks = segment(SegmentRequest(image, prop.boxes), backend)
        out.append(CandidateMask(
            mask=or_merge(masks),
            source=SOURCE_FOD,
            source_cluster=prop.source_cluster,
            sim_map=prop.smap,
            boxes=list(prop.boxes),
        ))
    return out
