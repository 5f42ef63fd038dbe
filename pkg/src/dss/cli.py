"""Command-line entry points: run, ablate, eval, synth."""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import report as report_mod
from .core import Config, load_config
from .io import read_mask_png
from .metrics import count_instances, evaluate_pair, stratified_report
from .pipeline import build_http_backends, build_mock_backends, run_dataset
from .selection import STRATEGIES


@click.group()
@click.option("--verbose", is_flag=True, help="Debug-level logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _resolve_backends(backend, mock, dataset):
    if (backend is None) == (mock is None):
        raise click.UsageError("choose exactly one of --backend URL or --mock KIND")
    if backend is not None:
        return build_http_backends(backend)
    try:
        return build_mock_backends(mock, dataset)
    except FileNotFoundError as exc:
        raise click.UsageError(str(exc))


def _execute_run(dataset, out, config, backend, mock, seed, strategy,
                 debug_dumps, workers):
    cfg = load_config(config) if config else Config()
    backends = _resolve_backends(backend, mock, dataset)
    manifest, outcome = run_dataset(
        dataset, out, cfg, backends, strategy=strategy, seed=seed,
        workers=workers, debug_dumps=debug_dumps,
    )
    paths = report_mod.render_all(outcome.report, out)
    ok = sum(e["status"] == "ok" for e in manifest.entries)
    warned = sum(e["status"] == "ok-with-warning" for e in manifest.entries)
    skipped = [e for e in manifest.entries if e["status"].startswith("skipped")]
    click.echo(f"processed {len(manifest.entries)} images: "
               f"{ok} ok, {warned} with warnings, {len(skipped)} skipped")
    for entry in skipped:
        click.echo(f"  skipped {entry['id']}: {entry['error']}")
    if outcome.report.overall:
        click.echo("overall composite: "
                   f"{outcome.report.overall['composite']:.4f}")
    click.echo(f"masks and reports under {Path(out).resolve()}")
    for fig in paths["figures"]:
        click.echo(f"figure: {fig}")
    sys.exit(1 if outcome.hard_failures else 0)


_SHARED_RUN_OPTIONS = [
    click.option("--dataset", required=True,
                 type=click.Path(exists=True, file_okay=False)),
    click.option("--out", required=True, type=click.Path(file_okay=False)),
    click.option("--config", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="Key=value parameter file."),
    click.option("--backend", default=None, metavar="URL",
                 help="Model server base URL."),
    click.option("--mock", default=None, type=click.Choice(["box", "oracle"]),
                 help="Offline backends; oracle replays gt/ masks."),
    click.option("--seed", default=0, show_default=True, type=int),
    click.option("--debug-dumps", is_flag=True,
                 help="Write per-image intermediates under out/debug."),
    click.option("--workers", default=4, show_default=True, type=int),
]


def _with_run_options(fn):
    for opt in reversed(_SHARED_RUN_OPTIONS):
        fn = opt(fn)
    return fn


@main.command()
@_with_run_options
def run(dataset, out, config, backend, mock, seed, debug_dumps, workers):
    """Segment every image in a dataset directory."""
    _execute_run(dataset, out, config, backend, mock, seed,
                 "pairwise-asc", debug_dumps, workers)


@main.command()
@_with_run_options
@click.option("--strategy", required=True, type=click.Choice(list(STRATEGIES)))
def ablate(dataset, out, config, backend, mock, seed, debug_dumps, workers,
           strategy):
    """Run with an alternative mask-selection strategy."""
    _execute_run(dataset, out, config, backend, mock, seed,
                 strategy, debug_dumps, workers)


def _load_soft_pred(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64)
    return arr / 255.0


@main.command("eval")
@click.option("--pred", "pred_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--gt", "gt_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def eval_cmd(pred_dir, gt_dir, out):
    """Score prediction masks against ground truth by filename stem."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    records, failures = [], 0
    preds = sorted(p for p in pred_dir.iterdir()
                   if p.suffix.lower() == ".png")
    notes = []
    for pred_path in preds:
        gt_path = gt_dir / pred_path.name
        if not gt_path.exists():
            notes.append(f"{pred_path.stem}: no ground truth")
            continue
        try:
            gt = read_mask_png(gt_path)
            row = evaluate_pair(_load_soft_pred(pred_path), gt)
        except Exception as exc:  # noqa: BLE001 - per-pair isolation
            click.echo(f"failed on {pred_path.stem}: {exc}", err=True)
            failures += 1
            continue
        row["id"] = pred_path.stem
        row["instance_count"] = count_instances(gt.bits)
        records.append(row)
    report = stratified_report(records)
    report.notes.extend(notes)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    import json

    (out / "report.json").write_text(
        json.dumps({"schema_version": 1, **report.to_dict()},
                   indent=1, sort_keys=True))
    report_mod.render_all(report, out)
    click.echo(f"evaluated {len(records)} prediction/gt pairs")
    if report.overall:
        click.echo(f"overall composite: {report.overall['composite']:.4f}")
    sys.exit(1 if failures or not records else 0)


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--images", default=20, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def synth(out, images, seed):
    """Write a synthetic dataset (images/, gt/, features/) for offline runs."""
    from .synthetic import write_synthetic_dataset

    rows = write_synthetic_dataset(out, n_images=images, seed=seed)
    click.echo(f"wrote {len(rows)} images under {Path(out).resolve()}")


if __name__ == "__main__":
    main()
