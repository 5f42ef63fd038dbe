"""Lazy adapters for the real model stack (GPU strongly recommended).

Nothing here is imported until a real backend is requested, so the stub
path never pays for torch. Model handles are loaded once at startup and
treated as read-only afterwards; inference is serialized behind one lock
per process, which stands in for a per-device queue.

Environment:
    DSS_DEVICE                cuda | cpu (default: cuda when available)
    DSS_FEATURES_MODEL        HF id or local path of the patch encoder
    DSS_SEGMENTER_CHECKPOINT  promptable segmenter checkpoint (.pt)
    DSS_SEGMENTER_CONFIG      matching model config (.yaml)
    DSS_MLLM_MODEL            HF id or local path of the chat VLM
"""
import base64
import io
import os
import threading

import numpy as np
from PIL import Image

from dss.core import PatchFeatureMap, PixelMask


def _b64_to_pil(data: str) -> Image.Image:
    return Image.open(io.BytesIO(base64.b64decode(data))).convert("RGB")


class RealBundle:
    name = "real"

    def __init__(self,
                 device: str | None = None,
                 features_model: str | None = None,
                 segmenter_checkpoint: str | None = None,
                 segmenter_config: str | None = None,
                 mllm_model: str | None = None):
        try:
            import torch
            from transformers import (AutoImageProcessor, AutoModel,
                                      AutoModelForVision2Seq, AutoProcessor)
        except ImportError as exc:
            raise RuntimeError(
                f"real backend needs torch and transformers installed: {exc}"
            ) from exc

        self._torch = torch
        self.device = device or os.environ.get(
            "DSS_DEVICE", "cuda" if torch.cuda.is_available() else "cpu")
        self._lock = threading.Lock()

        feat_id = features_model or os.environ.get(
            "DSS_FEATURES_MODEL", "facebook/dinov2-large")
        mllm_id = mllm_model or os.environ.get(
            "DSS_MLLM_MODEL", "Qwen/Qwen2.5-VL-7B-Instruct")
        ckpt = segmenter_checkpoint or os.environ.get("DSS_SEGMENTER_CHECKPOINT")
        seg_cfg = segmenter_config or os.environ.get("DSS_SEGMENTER_CONFIG")

        try:
            self._feat_proc = AutoImageProcessor.from_pretrained(feat_id)
            self._feat_model = AutoModel.from_pretrained(feat_id).to(
                self.device).eval()
            self.stride_px = int(self._feat_model.config.patch_size)
            self.model_id = mllm_id

            from sam2.build_sam import build_sam2
            from sam2.sam2_image_predictor import SAM2ImagePredictor
            if not ckpt:
                raise RuntimeError("DSS_SEGMENTER_CHECKPOINT is not set")
            self._predictor = SAM2ImagePredictor(
                build_sam2(seg_cfg, ckpt, device=self.device))

            self._mllm_proc = AutoProcessor.from_pretrained(mllm_id)
            self._mllm = AutoModelForVision2Seq.from_pretrained(
                mllm_id, torch_dtype="auto").to(self.device).eval()
        except RuntimeError:
            raise
        except Exception as exc:
            raise RuntimeError(f"model load failed: {exc}") from exc

    def extract_features(self, image: np.ndarray) -> PatchFeatureMap:
        with self._lock, self._torch.no_grad():
            inputs = self._feat_proc(
                images=Image.fromarray(image), return_tensors="pt"
            ).to(self.device)
            hidden = self._feat_model(**inputs).last_hidden_state
            _, _, in_h, in_w = inputs["pixel_values"].shape
        gh, gw = in_h // self.stride_px, in_w // self.stride_px
        # drop the CLS token; the rest is the patch grid in row-major order
        patches = hidden[0, 1:1 + gh * gw].float().cpu().numpy()
        data = patches.reshape(gh, gw, -1).astype(np.float32)
        # the header records the stride at the model's input scale; clients
        # own any mapping back to the original resolution
        return PatchFeatureMap(gh, gw, data.shape[2], self.stride_px, data)

    def segment_boxes(self, image: np.ndarray,
                      boxes: list[list[int]]) -> list[PixelMask]:
        h, w = image.shape[:2]
        with self._lock, self._torch.no_grad():
            self._predictor.set_image(image)
            out = []
            for box in boxes:
                masks, scores, _ = self._predictor.predict(
                    box=np.asarray(box, dtype=np.float32),
                    multimask_output=False)
                out.append(PixelMask(h, w, masks[0].astype(bool)))
        return out

    def generate(self, messages: list[dict]) -> str:
        pils = [_b64_to_pil(part["image"]) for msg in messages
                for part in msg["content"] if part["type"] == "image"]
        with self._lock, self._torch.no_grad():
            text = self._mllm_proc.apply_chat_template(
                messages, tokenize=False, add_generation_prompt=True)
            inputs = self._mllm_proc(
                text=[text], images=pils, return_tensors="pt").to(self.device)
            generated = self._mllm.generate(
                **inputs, max_new_tokens=512, do_sample=False)
            trimmed = generated[:, inputs["input_ids"].shape[1]:]
        return self._mllm_proc.batch_decode(
            trimmed, skip_special_tokens=True)[0]
