"""Command-line interface: `semref <subcommand>`.

Every subcommand exits non-zero when an input violates a format or type
invariant. File formats are documented in the README.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .classifier import PixelClassifier, TrainConfig, load_model, predict, save_model, train, weights_from_labels
from .ontology import load_ontology, default_ontology_path
from .pipeline import (
    DSM_NONE,
    confusion_metrics,
    format_confusion,
    parse_loop_config,
    run_loop,
    write_report,
)
from .raster import (
    KINDS,
    MAGIC,
    MultiChannelRaster,
    concat_channels,
    load_raster,
    save_raster,
)
from .referee import (
    all_pair_relations,
    characterize_errors,
    infer_region_verdicts,
    synthesize_channels,
)
from .rcc8 import Rcc8
from .regions import RegionPartition, extract_regions, grid_segments, score_regions
from .synth import CLASS_NAMES, SceneSpec, generate_scene, load_scene, save_scene


def _fail(message: str) -> None:
    raise click.ClickException(message)


@click.group()
@click.version_option(__version__, prog_name="semref")
def main() -> None:
    """Semantic-referee toolkit for per-pixel land-cover classification."""


# -- synth --------------------------------------------------------------------


@main.command()
@click.option("--seed", type=int, required=True)
@click.option("--size", default="256x256", show_default=True, help="Scene size HxW.")
@click.option("--buildings", type=int, default=12, show_default=True)
@click.option("--roads", type=int, default=4, show_default=True)
@click.option("--waters", type=int, default=2, show_default=True)
@click.option("--railroads", type=int, default=1, show_default=True)
@click.option("--light", default="SE", show_default=True, help="Light direction (compass).")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth(seed, size, buildings, roads, waters, railroads, light, out_dir):
    """Generate a synthetic scene into a directory of rasters."""
    try:
        height, width = (int(t) for t in size.lower().split("x"))
        spec = SceneSpec(
            seed=seed,
            height=height,
            width=width,
            buildings=buildings,
            roads=roads,
            waters=waters,
            railroads=railroads,
            light_direction=light,
        )
        bundle = generate_scene(spec)
    except ValueError as exc:
        _fail(str(exc))
    save_scene(bundle, out_dir)
    click.echo(f"wrote scene (seed {seed}, {height}x{width}) to {out_dir}")


# -- raster check ---------------------------------------------------------------


@main.group()
def raster() -> None:
    """Raster file utilities."""


@raster.command()
@click.argument("path", type=click.Path(exists=True))
def check(path):
    """Validate a raster file against its declared kind."""
    try:
        with open(path, "rb") as fh:
            magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
            header = fh.readline().decode("ascii", errors="replace").split()
        if magic != MAGIC or len(header) != 4 or header[0] not in KINDS:
            _fail(f"{path}: not a valid raster file (header {magic!r} / {header})")
        raster_obj = load_raster(path, header[0])
    except ValueError as exc:
        _fail(str(exc))
    kind = header[0]
    click.echo(
        f"{path}: ok ({kind}, {raster_obj.height}x{raster_obj.width}, "
        f"{getattr(raster_obj, 'channels', getattr(raster_obj, 'num_classes', 1))} plane(s))"
    )


# -- train / predict ------------------------------------------------------------


def _load_input(rgb_path, channels_path) -> MultiChannelRaster:
    rgb = load_raster(rgb_path, "channels")
    if channels_path:
        extra = load_raster(channels_path, "channels")
    else:
        extra = MultiChannelRaster(np.zeros((rgb.height, rgb.width, 3), np.float32))
    return concat_channels(rgb, extra)


@main.command(name="train")
@click.option("--rgb", "rgb_path", type=click.Path(exists=True), required=True)
@click.option("--labels", "labels_path", type=click.Path(exists=True), required=True)
@click.option("--channels", "channels_path", type=click.Path(exists=True), default=None,
              help="Feedback channels; all-zero when omitted.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--classes", type=int, default=len(CLASS_NAMES), show_default=True)
@click.option("--base-filters", type=int, default=8, show_default=True)
@click.option("--learning-rate", type=float, default=1e-4, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--epochs", type=int, default=50, show_default=True)
@click.option("--patch-size", type=int, default=64, show_default=True)
@click.option("--val-fraction", type=float, default=0.1, show_default=True)
@click.option("--patience", type=int, default=5, show_default=True)
@click.option("--steps-per-epoch", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def train_cmd(rgb_path, labels_path, channels_path, out_path, classes, base_filters,
              learning_rate, batch_size, epochs, patch_size, val_fraction, patience,
              steps_per_epoch, seed):
    """Train a classifier on one scene and save a checkpoint."""
    try:
        inputs = _load_input(rgb_path, channels_path)
        labels = load_raster(labels_path, "label", num_classes=classes)
        config = TrainConfig(
            learning_rate=learning_rate,
            batch_size=batch_size,
            max_epochs=epochs,
            patch_size=patch_size,
            val_fraction=val_fraction,
            patience=patience,
            seed=seed,
            steps_per_epoch=steps_per_epoch,
        )
        weights, absent = weights_from_labels(labels.values, classes)
        model = PixelClassifier(inputs.channels, classes, base_filters, seed)
        history = train(model, [(inputs.values, labels.values)], weights, config)
    except (ValueError, FloatingPointError) as exc:
        _fail(str(exc))
    save_model(model, out_path)
    if absent:
        click.echo(f"warning: classes absent from labels: {absent}", err=True)
    final = history[-1] if history else {"val_accuracy": float("nan")}
    click.echo(
        f"trained {len(history)} epoch(s), val accuracy {final['val_accuracy']:.4f}; "
        f"saved {out_path}"
    )


@main.command(name="predict")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--rgb", "rgb_path", type=click.Path(exists=True), required=True)
@click.option("--channels", "channels_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def predict_cmd(model_path, rgb_path, channels_path, out_path):
    """Write the per-pixel class distribution for a scene."""
    try:
        model = load_model(model_path)
        inputs = _load_input(rgb_path, channels_path)
        probs = predict(model, inputs)
    except ValueError as exc:
        _fail(str(exc))
    save_raster(probs, out_path)
    click.echo(f"wrote probabilities {probs.height}x{probs.width}x{probs.num_classes} to {out_path}")


# -- regions / rcc8 / referee ---------------------------------------------------


@main.command()
@click.argument("labels_path", type=click.Path(exists=True))
@click.argument("probs_path", type=click.Path(exists=True))
@click.option("--threshold", type=float, default=0.7, show_default=True)
@click.option("--connectivity", type=click.Choice(["4", "8"]), default="4", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def regions(labels_path, probs_path, threshold, connectivity, out_path):
    """Extract regions, score their certainty, and write them as JSON."""
    try:
        labels = load_raster(labels_path, "label")
        probs = load_raster(probs_path, "probability")
        regs = extract_regions(labels, int(connectivity))
        partition = score_regions(regs, probs, threshold)
    except ValueError as exc:
        _fail(str(exc))
    payload = {
        "labels_path": str(labels_path),
        "connectivity": int(connectivity),
        "threshold": threshold,
        "height": labels.height,
        "width": labels.width,
        "regions": [
            {
                "id": r.id,
                "class": r.class_id,
                "certainty": round(float(r.certainty), 6),
                "bbox": list(r.bbox),
                "area": r.area,
            }
            for r in regs
        ],
    }
    Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    click.echo(
        f"{len(regs)} regions ({len(partition.misclassified)} below certainty {threshold}) "
        f"-> {out_path}"
    )


def _reload_regions(regions_json: dict):
    labels = load_raster(regions_json["labels_path"], "label")
    regs = extract_regions(labels, regions_json["connectivity"])
    listed = regions_json["regions"]
    if len(regs) != len(listed):
        _fail(
            f"{regions_json['labels_path']} yields {len(regs)} regions but the JSON lists "
            f"{len(listed)}; regenerate the region file"
        )
    for reg, row in zip(regs, listed):
        reg.class_id = row["class"]
        reg.certainty = row["certainty"]
    return labels, regs


@main.command()
@click.argument("regions_path", type=click.Path(exists=True))
@click.option("--segment-grid", "tile_size", type=int, default=64, show_default=True)
@click.option("--include-dc", is_flag=True, help="Also emit disconnected pairs.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def rcc8(regions_path, tile_size, include_dc, out_path):
    """RCC-8 relations between co-segment region pairs, as CSV."""
    try:
        payload = json.loads(Path(regions_path).read_text())
        labels, regs = _reload_regions(payload)
        grid = grid_segments(labels.height, labels.width, tile_size).assign_regions(regs)
        rels = all_pair_relations(regs, grid, include_dc=include_dc)
    except (ValueError, KeyError) as exc:
        _fail(str(exc))
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_a", "region_b", "relation"])
        for (a, b), rel in sorted(rels.items()):
            writer.writerow([a, b, rel.value])
    click.echo(f"{len(rels)} relating pairs -> {out_path}")


@main.command()
@click.option("--regions", "regions_path", type=click.Path(exists=True), required=True)
@click.option("--relations", "relations_path", type=click.Path(exists=True), required=True)
@click.option("--ontology", "ontology_path", type=click.Path(exists=True), default=None)
@click.option("--dsm", "dsm_path", type=click.Path(exists=True), default=None)
@click.option("--round0-zero", is_flag=True, help="Force all three channels to zero.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
def referee(regions_path, relations_path, ontology_path, dsm_path, round0_zero, out_path, report_path):
    """Arbitrate scored regions against the ontology; emit feedback channels."""
    try:
        onto = load_ontology(ontology_path or default_ontology_path())
        payload = json.loads(Path(regions_path).read_text())
        labels, regs = _reload_regions(payload)
        threshold = payload["threshold"]
        classified = tuple(r.id for r in regs if r.certainty >= threshold)
        misclassified = tuple(r.id for r in regs if r.certainty < threshold)
        partition = RegionPartition(classified, misclassified, threshold)
        by_id = {r.id: r for r in regs}
        rels = {}
        with open(relations_path, newline="") as fh:
            for row in csv.DictReader(fh):
                a, b = int(row["region_a"]), int(row["region_b"])
                rel = Rcc8.from_name(row["relation"])
                if a in by_id and b in by_id:
                    if a in misclassified and b in classified:
                        rels[(a, b)] = rel
                    if b in misclassified and a in classified:
                        rels[(b, a)] = rel.inverse()
        grid = grid_segments(labels.height, labels.width, payload.get("tile_size", 64))
        hist, dominant, concepts = characterize_errors(grid, partition, regs, onto, rels)
        verdicts = infer_region_verdicts(partition, regs, rels, onto)
        dsm = load_raster(dsm_path, "channels").values[:, :, 0] if dsm_path else None
        channels = synthesize_channels(
            verdicts, regs, partition, onto, (labels.height, labels.width),
            dsm=dsm, round0_zero=round0_zero,
        )
    except (ValueError, KeyError) as exc:
        _fail(str(exc))
    save_raster(channels.to_raster(), out_path)
    counts = {"shadow": 0, "inconsistent": 0, "none": 0}
    for v in verdicts:
        counts[v.verdict] += 1
    report = {
        "pairs_by_relation_and_concept": [
            {"relation": rel, "concept": con, "pairs": n,
             "regions": hist.region_counts()[(rel, con)]}
            for (rel, con), n in sorted(hist.counts.items())
        ],
        "total_pairs": hist.total_pairs(),
        "dominant": None if dominant is None else {"relation": dominant[0], "concept": dominant[1]},
        "inferred_concepts": concepts,
        "verdict_counts": counts,
        "verdicts": [
            {
                "region": v.region_id,
                "verdict": v.verdict,
                "concept": v.concept,
                "violations": [str(violation) for violation in v.violations],
            }
            for v in verdicts
        ],
    }
    Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    click.echo(
        f"verdicts: {counts['shadow']} shadow, {counts['inconsistent']} inconsistent, "
        f"{counts['none']} none -> {out_path}, {report_path}"
    )


# -- loop / eval ------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def loop(config_path, out_dir):
    """Run the full referee loop from a key-value config file.

    Scene sources: either `train_scene_dirs`/`test_scene_dirs` pointing at
    `semref synth` output, or `synth.train_seeds`/`synth.test_seeds` plus
    optional `synth.*` generator knobs.
    """
    try:
        config, extra = parse_loop_config(Path(config_path).read_text())
        train_bundles, test_bundles = _bundles_from_config(extra)
        result = run_loop(config, train_bundles, test_bundles)
    except (ValueError, FloatingPointError) as exc:
        _fail(str(exc))
    report_path, csv_path = write_report(result, out_dir)
    click.echo(
        f"rounds: {len(result.rounds)}, baseline {result.baseline_overall:.2f}, "
        f"final {result.final_overall:.2f} ({result.improvement:+.2f}) -> {report_path}"
    )


def _bundles_from_config(extra: dict):
    def synth_bundles(key: str):
        seeds = [int(s) for s in extra.get(key, [])]
        size = extra.get("synth.size", ["256x256"])[0]
        height, width = (int(t) for t in size.lower().split("x"))
        kwargs = {}
        for name in ("buildings", "roads", "waters", "railroads"):
            if f"synth.{name}" in extra:
                kwargs[name] = int(extra[f"synth.{name}"][0])
        lights = extra.get("synth.light", ["SE"])
        return [
            generate_scene(
                SceneSpec(seed=s, height=height, width=width,
                          light_direction=lights[i % len(lights)], **kwargs)
            )
            for i, s in enumerate(seeds)
        ]

    train_bundles = [load_scene(d) for d in extra.get("train_scene_dirs", [])]
    test_bundles = [load_scene(d) for d in extra.get("test_scene_dirs", [])]
    train_bundles += synth_bundles("synth.train_seeds")
    test_bundles += synth_bundles("synth.test_seeds")
    if not train_bundles or not test_bundles:
        raise ValueError(
            "config must name training and test scenes via train_scene_dirs/test_scene_dirs "
            "or synth.train_seeds/synth.test_seeds"
        )
    return train_bundles, test_bundles


@main.command(name="eval")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval_cmd(pred_path, truth_path, out_path):
    """Confusion matrix and accuracy of a predicted label raster."""
    try:
        pred = load_raster(pred_path, "label")
        truth = load_raster(truth_path, "label")
        metrics = confusion_metrics(pred, truth)
    except ValueError as exc:
        _fail(str(exc))
    click.echo(format_confusion(metrics))
    if out_path:
        Path(out_path).write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
        click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    sys.exit(main())
