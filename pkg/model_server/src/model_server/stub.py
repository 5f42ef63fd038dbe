"""Deterministic CPU-only backend: real request path, toy models.

The stub answers every endpoint with cheap image statistics so the serving
layer, schemas and clients can be exercised end to end without weights. It
is intentionally honest about shapes (feature grids follow the configured
stride, segment replies are image-sized, judge replies are strict JSON) and
makes no claim to quality.
"""
import json

import numpy as np

from dss.core import PatchFeatureMap, PixelMask

from .imaging import png_b64_to_array

# fixed projection lifting 6 block statistics to the served feature width
_PROJECTION_SEED = 2718


class StubBundle:
    name = "stub"
    model_id = "stub-deterministic"

    def __init__(self, stride_px: int = 14, feature_dim: int = 24):
        if stride_px < 1 or feature_dim < 1:
            raise ValueError("stride_px and feature_dim must be positive")
        self.stride_px = stride_px
        self.feature_dim = feature_dim
        rng = np.random.default_rng(_PROJECTION_SEED)
        self._proj = rng.standard_normal((6, feature_dim))

    def extract_features(self, image: np.ndarray) -> PatchFeatureMap:
        """Per-block mean/std of RGB, projected to the served width.

        The grid is floor(H / stride) x floor(W / stride); edge remainders
        are dropped, matching how patch encoders tile their input.
        """
        h, w = image.shape[:2]
        s = self.stride_px
        gh, gw = max(1, h // s), max(1, w // s)
        pix = image.astype(np.float64) / 255.0
        stats = np.empty((gh, gw, 6))
        for gy in range(gh):
            for gx in range(gw):
                block = pix[gy * s:min((gy + 1) * s, h),
                            gx * s:min((gx + 1) * s, w)]
                flat = block.reshape(-1, 3)
                stats[gy, gx, :3] = flat.mean(axis=0)
                stats[gy, gx, 3:] = flat.std(axis=0)
        data = (stats @ self._proj).astype(np.float32)
        return PatchFeatureMap(gh, gw, self.feature_dim, s, data)

    def segment_boxes(self, image: np.ndarray,
                      boxes: list[list[int]]) -> list[PixelMask]:
        """One image-sized mask per box: the box interior, clamped to bounds.

        Boxes that fall entirely outside (or are degenerate) yield an empty
        mask rather than an error; the wire contract promises a mask per box.
        """
        h, w = image.shape[:2]
        out = []
        for x1, y1, x2, y2 in boxes:
            bits = np.zeros((h, w), dtype=bool)
            xa, ya = max(0, x1), max(0, y1)
            xb, yb = min(w, x2), min(h, y2)
            if xa < xb and ya < yb:
                bits[ya:yb, xa:xb] = True
            out.append(PixelMask(h, w, bits))
        return out

    def generate(self, messages: list[dict]) -> str:
        """Scripted text generation for the localization and judging turns.

        A single-image turn is a localization request: reply with a JSON box
        over the image center. A three-image turn is a judging request:
        prefer the overlap that keeps more pixels lit (a bigger candidate
        mask), deterministically.
        """
        images = [part["image"] for msg in messages for part in msg["content"]
                  if part["type"] == "image"]
        if len(images) == 1:
            h, w = png_b64_to_array(images[0]).shape[:2]
            return json.dumps({
                "bbox_2d": [[w // 4, h // 4, max(w // 4 + 1, 3 * w // 4),
                             max(h // 4 + 1, 3 * h // 4)]],
                "label": "object",
            })
        if len(images) == 3:
            lit_a = int((png_b64_to_array(images[1]).max(axis=2) > 0).sum())
            lit_b = int((png_b64_to_array(images[2]).max(axis=2) > 0).sum())
            verdict = "Mask A" if lit_a >= lit_b else "Mask B"
            return json.dumps({"better_mask": verdict})
        raise RuntimeError(f"unsupported message shape: {len(images)} images")
