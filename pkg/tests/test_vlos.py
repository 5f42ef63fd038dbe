"""Locator reply parsing and the locate-then-segment candidate."""
import json

import numpy as np
import pytest

from dss.core import BackendError, Box, PixelMask
from dss.io import ImageRef
from dss.segmentation import MockSegmenter, OracleMockSegmenter
from dss.vlos import (
    LOCATE_PROMPT,
    Localization,
    MockLocator,
    extract_json_object,
    locate,
    parse_localization,
    vlos_mask,
)


def _image(h=50, w=60):
    return ImageRef("img", array=np.zeros((h, w, 3), dtype=np.uint8))


def test_locate_prompt_demands_strict_json():
    assert "bbox_2d" in LOCATE_PROMPT
    assert "JUST JSON!" in LOCATE_PROMPT
    assert LOCATE_PROMPT.startswith("The image may contain")


# ===== json extraction =====

def test_extract_plain_json():
    obj = extract_json_object('{"bbox_2d": [[1, 2, 3, 4]], "label": "dog"}')
    assert obj["label"] == "dog"


def test_extract_fenced_json():
    text = '```json\n{"bbox_2d": [[1, 2, 3, 4]], "label": "cat"}\n```'
    assert extract_json_object(text)["label"] == "cat"


def test_extract_json_inside_prose():
    text = 'Sure! Here are the results: {"bbox_2d": [[0, 0, 5, 5]]} Hope it helps.'
    assert extract_json_object(text) == {"bbox_2d": [[0, 0, 5, 5]]}


def test_extract_garbage_returns_none():
    assert extract_json_object("no objects found, sorry") is None
    assert extract_json_object("{broken: json") is None
    assert extract_json_object("") is None


# ===== localization parsing =====

def test_parse_two_boxes_with_label():
    text = json.dumps({"bbox_2d": [[5, 6, 20, 25], [30, 31, 50, 45]],
                       "label": "crab"})
    loc = parse_localization(text, 60, 50)
    assert [b.as_tuple() for b in loc.boxes] == [(5, 6, 20, 25), (30, 31, 50, 45)]
    assert loc.label == "crab"
    assert loc.raw_text == text


def test_parse_single_flat_box():
    loc = parse_localization('{"bbox_2d": [3, 4, 10, 12]}', 60, 50)
    assert [b.as_tuple() for b in loc.boxes] == [(3, 4, 10, 12)]


def test_parse_clips_out_of_range_coordinates():
    loc = parse_localization('{"bbox_2d": [[-5, -2, 120, 70]]}', 60, 50)
    assert [b.as_tuple() for b in loc.boxes] == [(0, 0, 60, 50)]


def test_parse_drops_degenerate_and_malformed_boxes():
    text = json.dumps({"bbox_2d": [[10, 10, 10, 30], [1, 2, 3], "junk",
                                   [5, 5, 9, 9]]})
    loc = parse_localization(text, 60, 50)
    assert [b.as_tuple() for b in loc.boxes] == [(5, 5, 9, 9)]


def test_parse_float_coordinates_coerced():
    loc = parse_localization('{"bbox_2d": [[1.6, 2.2, 10.9, 12.1]]}', 60, 50)
    assert [b.as_tuple() for b in loc.boxes] == [(1, 2, 10, 12)]


def test_parse_garbage_gives_empty_localization():
    loc = parse_localization("I cannot see anything hidden here.", 60, 50)
    assert loc.boxes == []
    assert loc.raw_text.startswith("I cannot")


# ===== locate =====

def test_locate_via_mock_locator():
    img = _image()
    loc = locate(img, MockLocator('{"bbox_2d": [[0, 0, 10, 10]]}'))
    assert len(loc.boxes) == 1


class _DownLocator:
    def locate_text(self, image, prompt):
        raise BackendError("offline")


def test_locate_backend_failure_is_empty_not_fatal():
    loc = locate(_image(), _DownLocator())
    assert loc.boxes == []


# ===== vlos mask =====

def test_vlos_mask_unions_disjoint_boxes():
    img = _image()
    loc = Localization(boxes=[Box(0, 0, 10, 10), Box(20, 20, 40, 30)])
    cand = vlos_mask(img, loc, MockSegmenter())
    assert cand.source == "vlos"
    assert cand.mask.area() == 100 + 200


def test_vlos_mask_empty_localization_is_empty_candidate():
    img = _image()
    cand = vlos_mask(img, Localization(), MockSegmenter())
    assert cand.mask.area() == 0
    assert cand.mask.height_px == 50 and cand.mask.width_px == 60


def test_vlos_mask_contained_in_located_boxes():
    rng = np.random.default_rng(0)
    img = _image()
    planted = PixelMask(50, 60, rng.random((50, 60)) > 0.5)
    seg = OracleMockSegmenter({"img": planted})
    boxes = [Box(5, 5, 25, 20), Box(30, 25, 55, 45)]
    cand = vlos_mask(img, Localization(boxes=boxes), seg)
    allowed = np.zeros((50, 60), dtype=bool)
    for b in boxes:
        allowed[b.y1:b.y2, b.x1:b.x2] = True
    assert not np.logical_and(cand.mask.bits, ~allowed).any()
    assert not np.logical_and(cand.mask.bits, ~planted.bits).any()
