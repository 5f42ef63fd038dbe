"""Request/response schemas for the serving endpoints.

Requests reject unknown fields so client typos fail loudly. Replies are
serialized with null fields dropped, so the normal wire shapes are exactly
{"masks": [...]}, {"text": ...} and {"better_mask": ...}; the optional
``outbound`` block appears only on dry-run replies.
"""
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FeaturesRequest(_StrictModel):
    image: str  # base64 PNG


class SegmentRequest(_StrictModel):
    image: str
    boxes: list[list[int]] = Field(..., description="[x1, y1, x2, y2] per box")


class SegmentReply(BaseModel):
    masks: list[str]  # base64 PNG, one per box, image-sized


class LocateRequest(_StrictModel):
    image: str
    # omitted prompt falls back to the server's localization template
    prompt: str | None = None
    dry_run: bool = False


class JudgeRequest(_StrictModel):
    image: str
    overlap_a: str
    overlap_b: str
    prompt: str | None = None
    dry_run: bool = False


class ContentPart(BaseModel):
    type: Literal["text", "image"]
    text: str | None = None
    image: str | None = None


class Message(BaseModel):
    role: str
    content: list[ContentPart]


class OutboundCall(BaseModel):
    """The request the server would send to its model, images elided."""

    model: str
    messages: list[Message]


class LocateReply(BaseModel):
    text: str
    outbound: OutboundCall | None = None


class JudgeReply(BaseModel):
    better_mask: Literal["Mask A", "Mask B"]
    outbound: OutboundCall | None = None
