"""On-disk and on-wire formats: feature containers, mask PNGs, image refs."""
from __future__ import annotations

import base64
import io as _io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import DimensionError, PatchFeatureMap, PixelMask

MAGIC = b"DSSF"
_HEADER = struct.Struct("<4sIIII")  # magic, height, width, dim, stride_px


def features_to_bytes(fm: PatchFeatureMap) -> bytes:
    """Serialize a feature map to the binary container format."""
    payload = np.ascontiguousarray(fm.data, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, fm.height, fm.width, fm.dim, fm.stride_px)
    return header + payload


def write_features(fm: PatchFeatureMap, path: str | Path) -> None:
    """Write the binary feature container to disk."""
    Path(path).write_bytes(features_to_bytes(fm))


def read_features(data: bytes | str | Path) -> PatchFeatureMap:
    """Parse the binary feature container (bytes or a file path)."""
    if not isinstance(data, bytes):
        data = Path(data).read_bytes()
    if len(data) < _HEADER.size:
        raise DimensionError("feature container truncated before header end")
    magic, h, w, d, stride = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DimensionError(f"bad feature container magic {magic!r}")
    expected = _HEADER.size + h * w * d * 4
    if len(data) != expected:
        raise DimensionError(
            f"feature container payload is {len(data) - _HEADER.size} bytes, "
            f"expected {expected - _HEADER.size} for {h}x{w}x{d}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, d)
    return PatchFeatureMap(h, w, d, stride, np.array(arr, dtype=np.float32))


def write_mask_png(mask: PixelMask, path: str | Path) -> None:
    """Persist as 8-bit single-channel PNG with values in {0, 255}."""
    img = Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L")
    img.save(Path(path), format="PNG")


def read_mask_png(path: str | Path) -> PixelMask:
    """Load a mask PNG; any nonzero pixel counts as foreground."""
    arr = np.asarray(Image.open(Path(path)).convert("L"))
    return PixelMask(arr.shape[0], arr.shape[1], arr > 0)


def mask_to_png_bytes(mask: PixelMask) -> bytes:
    buf = _io.BytesIO()
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_mask(data: bytes) -> PixelMask:
    arr = np.asarray(Image.open(_io.BytesIO(data)).convert("L"))
    return PixelMask(arr.shape[0], arr.shape[1], arr > 0)


def image_to_png_b64(arr: np.ndarray) -> str:
    """Encode an (H, W, 3) uint8 array as a base64 PNG string."""
    buf = _io.BytesIO()
    Image.fromarray(arr.astype(np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def mask_to_png_b64(mask: PixelMask) -> str:
    return base64.b64encode(mask_to_png_bytes(mask)).decode("ascii")


def png_b64_to_mask(data: str) -> PixelMask:
    return png_bytes_to_mask(base64.b64decode(data))


@dataclass
class ImageRef:
    """Handle to one dataset image; pixel data loads lazily and is cached."""

    image_id: str
    path: Path | None = None
    array: np.ndarray | None = field(default=None, repr=False)

    def load(self) -> np.ndarray:
        """(H, W, 3) uint8 pixels."""
        if self.array is None:
            if self.path is None:
                raise ValueError(f"image {self.image_id} has neither path nor array")
            img = Image.open(self.path).convert("RGB")
            self.array = np.asarray(img, dtype=np.uint8)
        return self.array

    @property
    def height_px(self) -> int:
        return self.load().shape[0]

    @property
    def width_px(self) -> int:
        return self.load().shape[1]

    def png_b64(self) -> str:
        return image_to_png_b64(self.load())


def masked_overlay(image: np.ndarray, mask: PixelMask) -> np.ndarray:
    """Pixelwise product of image and mask: background drops to black."""
    if image.shape[:2] != (mask.height_px, mask.width_px):
        raise DimensionError("overlay requires image and mask of equal size")
    return (image * mask.bits[:, :, None]).astype(np.uint8)
