"""Base64 PNG decoding for request payloads."""
import base64
import binascii
import io

import numpy as np
from PIL import Image


class ImageDecodeError(ValueError):
    pass


def png_b64_to_array(data: str) -> np.ndarray:
    """Decode a base64 PNG into an (H, W, 3) uint8 array."""
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("RGB"))
    except (binascii.Error, OSError, ValueError) as exc:
        raise ImageDecodeError(f"undecodable image payload: {exc}") from exc
