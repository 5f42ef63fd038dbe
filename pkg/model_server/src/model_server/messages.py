"""Canonical outbound chat messages for the text-generating endpoints.

Both the live call and the dry-run preview are built here, so what a dry
run shows is exactly what the model receives. Message order is part of the
served contract:

- locate: one user turn, [prompt text, original image]
- judge:  one user turn, [prompt text, original image, overlap for Mask A,
  overlap for Mask B] -- the two overlaps follow the original in the order
  the prompt labels them.
"""

ORIGINAL_MARKER = "<original image>"
OVERLAP_A_MARKER = "<overlap Mask A>"
OVERLAP_B_MARKER = "<overlap Mask B>"


def locate_messages(image_b64: str, prompt: str) -> list[dict]:
    return [{
        "role": "user",
        "content": [
            {"type": "text", "text": prompt},
            {"type": "image", "image": image_b64},
        ],
    }]


def judge_messages(image_b64: str, overlap_a_b64: str, overlap_b_b64: str,
                   prompt: str) -> list[dict]:
    return [{
        "role": "user",
        "content": [
            {"type": "text", "text": prompt},
            {"type": "image", "image": image_b64},
            {"type": "image", "image": overlap_a_b64},
            {"type": "image", "image": overlap_b_b64},
        ],
    }]


def elide_images(messages: list[dict], markers: list[str]) -> list[dict]:
    """Replace image payloads with positional markers for dry-run replies."""
    out = []
    it = iter(markers)
    for msg in messages:
        content = []
        for part in msg["content"]:
            if part["type"] == "image":
                content.append({"type": "image",
                                "image": next(it, "<image>")})
            else:
                content.append(dict(part))
        out.append({"role": msg["role"], "content": content})
    return out
