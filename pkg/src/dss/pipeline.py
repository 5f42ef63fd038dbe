"""Per-image orchestration and batched dataset runs.

The per-image flow is discover (features -> clusters -> refined masks ->
similarity maps -> boxes), segment (promptable backend per box set, plus the
localization route), select (heuristic scoring, top-K, judged tournament).
Failures are contained per image: a failed stage yields a skipped entry and
the batch carries on.
"""
from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests
from PIL import Image, ImageDraw

from .box_generation import propose_boxes, similarity_map
from .clustering import build_knn_graph, clusters_to_masks, leiden_partition
from .core import (
    BackendError,
    Config,
    DegenerateClusterError,
    PatchFeatureMap,
    PixelMask,
    pca_reduce,
)
from .io import ImageRef, read_features, read_mask_png, write_mask_png
from .metrics import count_instances, evaluate_pair, stratified_report
from .part_composition import refine_cluster
from .segmentation import (
    HttpSegmenter,
    MockSegmenter,
    OracleMockSegmenter,
    Segmenter,
    fod_candidates,
)
from .selection import (
    IoUOracleJudge,
    Judge,
    StaticJudge,
    HttpJudge,
    attach_vlos_candidate,
    rank_top_k,
    score_candidate,
    select_mask,
)
from .vlos import HttpLocator, Locator, MockLocator, locate, vlos_mask

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class Backends:
    """The pluggable model-facing pieces one run needs."""

    segmenter: Segmenter
    judge: Judge
    locator: Locator | None = None
    features_url: str | None = None
    description: str = "custom"


@dataclass
class ImageResult:
    image_id: str
    status: str
    mask: PixelMask | None = None
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    error: str | None = None
    n_candidates: int = 0
    judge_calls: int = 0
    chosen_source: str | None = None


@dataclass
class RunManifest:
    """Run-level record: config, backends, one entry per input image."""

    schema_version: int
    config: dict
    backends: str
    strategy: str
    seed: int
    entries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "backends": self.backends,
            "strategy": self.strategy,
            "seed": self.seed,
            "entries": self.entries,
        }


def build_mock_backends(kind: str, dataset_dir: str | Path | None = None) -> Backends:
    """Offline backends: ``box`` fills box interiors and keeps the judge
    trivial; ``oracle`` replays the dataset's ground truth through the
    segmenter, locator and judge (needs gt/ next to images/)."""
    if kind == "box":
        return Backends(
            segmenter=MockSegmenter(),
            judge=StaticJudge("B"),  # challenger wins: highest score prevails
            locator=MockLocator(""),
            description="mock-box",
        )
    if kind == "oracle":
        if dataset_dir is None:
            raise ValueError("oracle mocks need the dataset directory")
        gt_dir = Path(dataset_dir) / "gt"
        if not gt_dir.is_dir():
            raise FileNotFoundError(f"oracle mocks need ground truth at {gt_dir}")
        planted: dict[str, PixelMask] = {}
        replies: dict[str, str] = {}
        for path in sorted(gt_dir.glob("*.png")):
            mask = read_mask_png(path)
            planted[path.stem] = mask
            replies[path.stem] = json.dumps({
                "bbox_2d": _component_boxes(mask), "label": "object",
            })
        return Backends(
            segmenter=OracleMockSegmenter(planted),
            judge=IoUOracleJudge(planted),
            locator=MockLocator(replies),
            description="mock-oracle",
        )
    raise ValueError(f"unknown mock kind {kind!r}; choose box or oracle")


def build_http_backends(base_url: str) -> Backends:
    return Backends(
        segmenter=HttpSegmenter(base_url),
        judge=HttpJudge(base_url),
        locator=HttpLocator(base_url),
        features_url=base_url,
        description=base_url,
    )


def _component_boxes(mask: PixelMask) -> list[list[int]]:
    from scipy import ndimage

    labeled, n = ndimage.label(mask.bits, structure=np.ones((3, 3), int))
    boxes = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        boxes.append([sl[1].start, sl[0].start, sl[1].stop, sl[0].stop])
    return boxes


def fetch_features(base_url: str, image: ImageRef,
                   timeout: float = 120.0) -> PatchFeatureMap:
    """Pull a feature container for one image from the serving endpoint."""
    url = base_url.rstrip("/") + "/features"
    last: Exception | None = None
    for attempt in range(2):
        try:
            resp = requests.post(url, json={"image": image.png_b64()},
                                 timeout=timeout)
            resp.raise_for_status()
            return read_features(resp.content)
        except (requests.RequestException, ValueError) as exc:
            last = exc
            if attempt == 0:
                time.sleep(0.5)
    raise BackendError(f"feature fetch failed for {image.image_id}: {last}")


def _discover(image: ImageRef, features: PatchFeatureMap, config: Config,
              seed: int, debug: "_DebugSink | None"):
    # containers narrower than the configured dimensionality keep their width
    out_dims = min(config.pca_dims, features.dim)
    reduced = pca_reduce(features.flat().astype(np.float64), out_dims)
    gh, gw = features.height, features.width
    n = reduced.shape[0]
    k = min(config.knn_k, n - 1)
    traces = []
    if k >= 1:
        graph = build_knn_graph(reduced, k)
        assignment = leiden_partition(graph, config.leiden_resolution, seed=seed)
        for c, mask in enumerate(clusters_to_masks(assignment, gh, gw)):
            try:
                trace = refine_cluster(reduced, mask, config.energy_epsilon,
                                       config.max_pc_iterations)
            except DegenerateClusterError:
                continue
            if trace.dropped:
                continue
            traces.append((c, trace))
    maps = [
        similarity_map(reduced, trace.final_mask, source_cluster=c)
        for c, trace in traces
    ]
    proposals = propose_boxes(
        maps, config.corr_threshold, features.stride_px,
        image.height_px, image.width_px, config.min_area_patches,
    )
    if debug is not None:
        debug.dump_discover(image, features, config, traces, maps, proposals)
    return proposals


def run_image(
    image: ImageRef,
    features: PatchFeatureMap,
    config: Config,
    backends: Backends,
    strategy: str = "pairwise-asc",
    seed: int = 0,
    debug_dir: str | Path | None = None,
) -> ImageResult:
    """Produce one final mask; any stage failure turns into a skipped entry."""
    result = ImageResult(image_id=image.image_id, status="ok")
    debug = _DebugSink(debug_dir, image.image_id) if debug_dir else None
    stage = "discover"
    try:
        t0 = time.perf_counter()
        proposals = _discover(image, features, config, seed, debug)
        result.timings["discover"] = time.perf_counter() - t0

        stage = "segment"
        t0 = time.perf_counter()
        candidates = fod_candidates(image, proposals, backends.segmenter)
        vlos_candidate = None
        if backends.locator is not None:
            localization = locate(image, backends.locator)
            vlos_candidate = vlos_mask(image, localization, backends.segmenter)
        result.timings["segment"] = time.perf_counter() - t0

        stage = "select"
        t0 = time.perf_counter()
        scored = [
            score_candidate(c, features.stride_px, config.boundary_margin_px)
            for c in candidates
        ]
        pool = rank_top_k(scored, config.top_k) if scored else []
        if not pool:
            result.warnings.append("no foreground proposals survived discovery")
        if vlos_candidate is not None:
            pool = attach_vlos_candidate(pool, vlos_candidate)
        result.n_candidates = len(pool)
        if pool:
            rng = random.Random(f"{seed}:{image.image_id}")
            winner, calls = select_mask(pool, backends.judge, image,
                                        strategy=strategy, rng=rng)
            result.mask = winner.candidate.mask
            result.judge_calls = calls
            result.chosen_source = winner.candidate.source
        else:
            result.mask = PixelMask.empty(image.height_px, image.width_px)
            result.warnings.append("no candidates at all; final mask empty")
        if result.mask.area() == 0:
            result.warnings.append("final mask is empty")
        result.timings["select"] = time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001 - isolation contract per image
        logger.exception("image %s failed during %s", image.image_id, stage)
        return ImageResult(
            image_id=image.image_id, status=f"skipped:{stage}",
            error=f"{stage}: {exc}", timings=result.timings,
        )
    if result.warnings:
        result.status = "ok-with-warning"
    return result


class _DebugSink:
    """Writes per-image intermediates when --debug-dumps is on."""

    def __init__(self, root: str | Path, image_id: str):
        self.dir = Path(root) / image_id
        self.dir.mkdir(parents=True, exist_ok=True)

    def dump_discover(self, image, features, config, traces, maps, proposals):
        for c, trace in traces:
            payload = {
                "cluster": c,
                "energies": trace.energies,
                "converged": trace.converged,
                "iterations_run": trace.iterations_run,
                "binarized_iterates": [
                    m.hard(config.binarize_prob_threshold).astype(int).tolist()
                    for m in trace.masks
                ],
            }
            path = self.dir / f"refine_cluster_{c}.json"
            path.write_text(json.dumps(payload, indent=1))
        for smap in maps:
            gray = ((smap.values + 1.0) * 127.5).astype(np.uint8)
            Image.fromarray(gray, mode="L").save(
                self.dir / f"simmap_cluster_{smap.source_cluster}.png")
        overlay = Image.fromarray(image.load().copy())
        draw = ImageDraw.Draw(overlay)
        for prop in proposals:
            for box in prop.boxes:
                draw.rectangle(box.as_tuple(), outline=(255, 0, 0))
        overlay.save(self.dir / "boxes.png")


def _list_images(dataset_dir: Path) -> list[ImageRef]:
    images_dir = dataset_dir / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"dataset has no images directory: {images_dir}")
    refs = []
    for path in sorted(images_dir.iterdir()):
        if path.suffix.lower() in _IMAGE_SUFFIXES:
            refs.append(ImageRef(image_id=path.stem, path=path))
    return refs


def _features_for(image: ImageRef, dataset_dir: Path,
                  backends: Backends) -> PatchFeatureMap:
    on_disk = dataset_dir / "features" / f"{image.image_id}.dssf"
    if on_disk.exists():
        return read_features(on_disk)
    if backends.features_url:
        return fetch_features(backends.features_url, image)
    raise BackendError(
        f"no features for {image.image_id}: no container on disk and no endpoint"
    )


def _result_entry(result: ImageResult, mask_path: str | None) -> dict:
    return {
        "id": result.image_id,
        "status": result.status,
        "timings": {k: round(v, 6) for k, v in result.timings.items()},
        "warnings": result.warnings,
        "error": result.error,
        "n_candidates": result.n_candidates,
        "judge_calls": result.judge_calls,
        "chosen_source": result.chosen_source,
        "mask_path": mask_path,
    }


def run_dataset(
    dataset_dir: str | Path,
    out_dir: str | Path,
    config: Config,
    backends: Backends,
    strategy: str = "pairwise-asc",
    seed: int = 0,
    workers: int = 4,
    debug_dumps: bool = False,
) -> tuple[RunManifest, "EvalOutcome"]:
    """Process a dataset directory and persist masks, manifest and report.

    Images are independent: one failure never stops the batch. Evaluation
    runs only for images with ground truth. Masks and report are
    deterministic for fixed seed/config with mock backends; the manifest
    records wall-clock timings and is not meant to be byte-stable.
    """
    dataset = Path(dataset_dir)
    out = Path(out_dir)
    refs = _list_images(dataset)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    debug_dir = out / "debug" if debug_dumps else None

    def work(ref: ImageRef) -> ImageResult:
        try:
            features = _features_for(ref, dataset, backends)
        except Exception as exc:  # noqa: BLE001
            logger.exception("features unavailable for %s", ref.image_id)
            return ImageResult(image_id=ref.image_id, status="skipped:features",
                               error=f"features: {exc}")
        return run_image(ref, features, config, backends, strategy=strategy,
                         seed=seed, debug_dir=debug_dir)

    if workers > 1 and len(refs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, refs))
    else:
        results = [work(ref) for ref in refs]

    manifest = RunManifest(
        schema_version=MANIFEST_SCHEMA_VERSION,
        config=config.to_dict(),
        backends=backends.description,
        strategy=strategy,
        seed=seed,
    )
    records = []
    skipped = 0
    for result in sorted(results, key=lambda r: r.image_id):
        mask_path = None
        if result.mask is not None:
            mask_path = f"masks/{result.image_id}.png"
            write_mask_png(result.mask, out / mask_path)
        else:
            skipped += 1
        manifest.entries.append(_result_entry(result, mask_path))
        gt_path = dataset / "gt" / f"{result.image_id}.png"
        if result.mask is not None and gt_path.exists():
            gt = read_mask_png(gt_path)
            row = evaluate_pair(result.mask, gt)
            row["id"] = result.image_id
            row["instance_count"] = count_instances(gt.bits)
            records.append(row)

    report = stratified_report(records)
    outcome = EvalOutcome(report=report, n_images=len(refs), n_skipped=skipped)
    (out / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=1, sort_keys=True))
    (out / "report.json").write_text(
        json.dumps({"schema_version": REPORT_SCHEMA_VERSION,
                    **report.to_dict()}, indent=1, sort_keys=True))
    return manifest, outcome


@dataclass
class EvalOutcome:
    report: object
    n_images: int
    n_skipped: int

    @property
    def hard_failures(self) -> int:
        return self.n_skipped
