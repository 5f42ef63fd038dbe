"""FastAPI application wiring the model bundle to the wire contract.

Handlers are stateless; the bundle is loaded once and shared read-only.
A bounded semaphore caps in-flight model work, oversized bodies are
rejected with 413 before parsing, and per-request model failures surface
as 5xx with a JSON body so clients can retry.

Dry runs: /locate and /judge accept ``dry_run: true`` and reply with the
exact outbound model call (images elided to positional markers) instead of
invoking the model. Dry-run /judge verdicts are a fixed placeholder; only
the ``outbound`` block is meaningful.
"""
import os
import threading

from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse

from dss.io import features_to_bytes, mask_to_png_b64
from dss.selection import JUDGE_PROMPT
from dss.vlos import LOCATE_PROMPT, extract_json_object

from . import messages as msg
from .imaging import ImageDecodeError, png_b64_to_array
from .schemas import (
    FeaturesRequest,
    JudgeReply,
    JudgeRequest,
    LocateReply,
    LocateRequest,
    SegmentReply,
    SegmentRequest,
)
from .stub import StubBundle

_VERDICTS = ("Mask A", "Mask B")


def bundle_from_env():
    """Backend selection: $DSS_SERVER_BACKEND = stub (default) | real."""
    kind = os.environ.get("DSS_SERVER_BACKEND", "stub")
    if kind == "stub":
        return StubBundle(stride_px=int(os.environ.get("DSS_STUB_STRIDE", 14)))
    if kind == "real":
        from .real import RealBundle
        return RealBundle()
    raise RuntimeError(f"unknown DSS_SERVER_BACKEND {kind!r}")


def create_app(bundle=None, max_payload_bytes: int | None = None,
               max_concurrency: int | None = None) -> FastAPI:
    bundle = bundle if bundle is not None else bundle_from_env()
    cap = max_payload_bytes or int(
        os.environ.get("DSS_MAX_PAYLOAD_BYTES", 32 << 20))
    width = max_concurrency or int(os.environ.get("DSS_MAX_CONCURRENCY", 4))

    app = FastAPI(title="dss model server", version="0.1.0")
    limiter = threading.BoundedSemaphore(width)

    @app.middleware("http")
    async def payload_cap(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > cap:
            return JSONResponse({"detail": f"payload exceeds {cap} bytes"},
                                status_code=413)
        return await call_next(request)

    def decode(image_b64: str):
        try:
            return png_b64_to_array(image_b64)
        except ImageDecodeError as exc:
            raise HTTPException(422, str(exc))

    def run_model(fn, *args):
        try:
            with limiter:
                return fn(*args)
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(500, f"model failure: {exc}")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "backend": bundle.name}

    @app.post("/features")
    def features(req: FeaturesRequest):
        fm = run_model(bundle.extract_features, decode(req.image))
        return Response(content=features_to_bytes(fm),
                        media_type="application/octet-stream")

    @app.post("/segment", response_model=SegmentReply)
    def segment(req: SegmentRequest):
        for box in req.boxes:
            if len(box) != 4:
                raise HTTPException(422, f"box needs 4 coordinates: {box}")
        masks = run_model(bundle.segment_boxes, decode(req.image), req.boxes)
        return SegmentReply(masks=[mask_to_png_b64(m) for m in masks])

    @app.post("/locate", response_model=LocateReply,
              response_model_exclude_none=True)
    def locate(req: LocateRequest):
        prompt = req.prompt if req.prompt is not None else LOCATE_PROMPT
        outbound = msg.locate_messages(req.image, prompt)
        if req.dry_run:
            preview = msg.elide_images(outbound, [msg.ORIGINAL_MARKER])
            return LocateReply(text="", outbound={
                "model": bundle.model_id, "messages": preview})
        return LocateReply(text=run_model(bundle.generate, outbound))

    @app.post("/judge", response_model=JudgeReply,
              response_model_exclude_none=True)
    def judge(req: JudgeRequest):
        prompt = req.prompt if req.prompt is not None else JUDGE_PROMPT
        outbound = msg.judge_messages(req.image, req.overlap_a,
                                      req.overlap_b, prompt)
        if req.dry_run:
            preview = msg.elide_images(outbound, [
                msg.ORIGINAL_MARKER, msg.OVERLAP_A_MARKER,
                msg.OVERLAP_B_MARKER])
            return JudgeReply(better_mask="Mask A", outbound={
                "model": bundle.model_id, "messages": preview})
        raw = run_model(bundle.generate, outbound)
        obj = extract_json_object(raw)
        verdict = obj.get("better_mask") if obj else raw.strip()
        if verdict not in _VERDICTS:
            raise HTTPException(502, f"unparseable judge reply: {raw[:200]!r}")
        return JudgeReply(better_mask=verdict)

    return app
