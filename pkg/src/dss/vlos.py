"""Locate-then-segment baseline and fallback route.

A multimodal locator is asked for camouflaged-object boxes as strict JSON;
the reply is parsed defensively (models wrap JSON in fences or prose), each
box prompts the segmenter, and the per-box masks union into one candidate.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Protocol

import requests

from .core import BackendError, Box, PixelMask, ProtocolError, or_merge
from .io import ImageRef
from .segmentation import SOURCE_VLOS, CandidateMask, SegmentRequest, Segmenter, segment

logger = logging.getLogger(__name__)

LOCATE_PROMPT = """The image may contain a few animal/insect or human whose shape, color, texture, pattern and movement closely resemble its surroundings. Please identify them and provide their locations in the format of coordinates, as precisely as possible. The output should be in JSON format, e.g.:
{
    "bbox_2d": [[x1, y1, x2, y2],[x1, y1, x2, y2]],
    "label": "dog"
}
DO NOT ADD ANY EXTRA INFO, JUST JSON!"""


@dataclass
class Localization:
    """Parsed locator reply; empty boxes mean nothing was found (or parsed)."""

    boxes: list = field(default_factory=list)
    label: str | None = None
    raw_text: str = ""


class Locator(Protocol):
    def locate_text(self, image: ImageRef, prompt: str) -> str:
        ...


class MockLocator:
    """Replays a fixed reply text; per-image replies via a dict."""

    def __init__(self, reply: str | dict = ""):
        self.reply = reply

    def locate_text(self, image: ImageRef, prompt: str) -> str:
        if isinstance(self.reply, dict):
            return self.reply.get(image.image_id, "")
        return self.reply


class HttpLocator:
    """Client for a model server's localization endpoint.

    The server returns raw model text; all parsing stays client-side so
    prompt experiments never require server changes.
    """

    def __init__(self, base_url: str, timeout: float = 120.0, attempts: int = 2,
                 backoff: float = 0.5, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.attempts = max(1, attempts)
        self.backoff = backoff
        self.session = session or requests.Session()

    def locate_text(self, image: ImageRef, prompt: str) -> str:
        payload = {"image": image.png_b64(), "prompt": prompt}
        last = None
        for attempt in range(self.attempts):
            try:
                resp = self.session.post(self.base_url + "/locate", json=payload,
                                         timeout=self.timeout)
                if resp.status_code != 200:
                    raise BackendError(f"/locate returned HTTP {resp.status_code}")
                body = resp.json()
                if not isinstance(body, dict) or "text" not in body:
                    raise ProtocolError("locate reply missing 'text'")
                return str(body["text"])
            except (requests.RequestException, ValueError) as exc:
                last = BackendError(f"/locate failed: {exc}")
            except BackendError as exc:
                last = exc
            if attempt + 1 < self.attempts:
                import time
                time.sleep(self.backoff)
        raise last


def extract_json_object(text: str) -> dict | None:
    """First parseable JSON object in a reply, tolerating fences and prose."""
    stripped = text.strip()
    if stripped.startswith("```"):
        # drop the fence line and a trailing fence if present
        lines = stripped.splitlines()
        body = [ln for ln in lines[1:] if not ln.strip().startswith("```")]
        stripped = "\n".join(body).strip()
    for attempt in (stripped, text):
        try:
            obj = json.loads(attempt)
            if isinstance(obj, dict):
                return obj
        except (json.JSONDecodeError, ValueError):
            pass
    # walk to the first balanced brace region that parses
    start = text.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start:i + 1])
                        if isinstance(obj, dict):
                            return obj
                    except (json.JSONDecodeError, ValueError):
                        pass
                    break
        start = text.find("{", start + 1)
    return None


def parse_localization(text: str, image_width: int, image_height: int) -> Localization:
    """Boxes and label from locator text; unparseable input gives no boxes.

    Accepts ``bbox_2d`` as one flat [x1, y1, x2, y2] or a list of them.
    Coordinates clip to the image; boxes with non-positive area drop out.
    """
    obj = extract_json_object(text)
    if obj is None:
        if text.strip():
            logger.warning("locator reply had no parseable JSON: %.80r", text)
        return Localization(raw_text=text)
    raw = obj.get("bbox_2d", [])
    if isinstance(raw, (list, tuple)) and len(raw) == 4 and all(
        isinstance(v, (int, float)) for v in raw
    ):
        raw = [raw]
    boxes = []
    for item in raw if isinstance(raw, (list, tuple)) else []:
        if not (isinstance(item, (list, tuple)) and len(item) == 4):
            logger.warning("skipping malformed box entry %r", item)
            continue
        try:
            x1, y1, x2, y2 = (int(float(v)) for v in item)
        except (TypeError, ValueError):
            logger.warning("skipping non-numeric box entry %r", item)
            continue
        x1, x2 = max(0, min(x1, x2)), min(image_width, max(x1, x2))
        y1, y2 = max(0, min(y1, y2)), min(image_height, max(y1, y2))
        if x2 - x1 < 1 or y2 - y1 < 1:
            logger.warning("dropping degenerate box %r", item)
            continue
        boxes.append(Box(x1, y1, x2, y2))
    label = obj.get("label")
    return Localization(boxes=boxes, label=label if isinstance(label, str) else None,
                        raw_text=text)


def locate(
    image: ImageRef, locator: Locator, prompt: str = LOCATE_PROMPT
) -> Localization:
    """Query the locator and parse its reply; locator failure means no boxes."""
    try:
        text = locator.locate_text(image, prompt)
    except BackendError as exc:
        logger.warning("locator unavailable (%s); empty localization", exc)
        return Localization()
    return parse_localization(text, image.width_px, image.height_px)


def vlos_mask(
    image: ImageRef, localization: Localization, backend: Segmenter
) -> CandidateMask:
    """Segment every located box and union the results into one candidate.

    No boxes (nothing found, or parsing failed) yields an empty mask so the
    candidate can still enter selection and lose on merit.
    """
    if not localization.boxes:
        return CandidateMask(
            PixelMask.empty(image.height_px, image.width_px), SOURCE_VLOS,
            boxes=[],
        )
    masks = segment(SegmentRequest(image, localization.boxes), backend)
    return CandidateMask(or_merge(masks), SOURCE_VLOS,
                         boxes=list(localization.boxes))
