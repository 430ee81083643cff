"""Command-line front end: augment, train, eval, predict, audit-params,
synth-data."""

from __future__ import annotations

import json
import math
import shutil
import time
from pathlib import Path

import click
import numpy as np

from . import augment as aug
from . import metrics, synth, trainer
from .checkpoint import load_checkpoint
from .dataset import DatasetManifest, _load_resized, load_directory, split_train_valid
from .model import (
    PUBLISHED_MODEL_SIZES_M,
    audit_reference_counts,
    build_pvfaultnet,
    count_parameters,
    shape_propagate,
)
from .nn import softmax

# Default per-class expansion ratio: the reference augmentation grew a
# 153/75 dataset to 361/177 (228 -> 538 total).
DEFAULT_EXPANSION = 538 / 228


class _cleanup_on_failure:
    """Remove a freshly created output directory if the command fails, so
    failures never leave partial output trees behind."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.created = not self.path.exists()

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        return self.path

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and self.created:
            shutil.rmtree(self.path, ignore_errors=True)
        return False


def _load_manifest(root: Path) -> DatasetManifest:
    manifest_file = root / "manifest.jsonl"
    if manifest_file.is_file():
        return DatasetManifest.load(manifest_file)
    return load_directory(root)


@click.group()
def main():
    """Lightweight CNN toolkit for binary PV-cell defect classification."""


@main.command("synth-data")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--n-per-class", default=16, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--size", default=128, show_default=True, type=int, help="Image side in pixels.")
def synth_data(out, n_per_class, seed, size):
    """Generate a synthetic two-class EL-style fixture dataset."""
    try:
        with _cleanup_on_failure(out):
            manifest = synth.generate_dataset(out, n_per_class, seed, size)
            (out / "config.json").write_text(
                json.dumps({"command": "synth-data", "n_per_class": n_per_class, "seed": seed, "size": size}, indent=2)
            )
    except Exception as exc:
        raise click.ClickException(str(exc))
    for name, count in manifest.counts().items():
        click.echo(f"{name}: {count}")


@main.command("augment")
@click.option("--root", required=True, type=click.Path(path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option(
    "--target",
    "targets",
    multiple=True,
    metavar="CLASS=COUNT",
    help="Per-class target count; default scales every class by 538/228.",
)
def augment_cmd(root, out, seed, targets):
    """Expand a class-foldered dataset with the seeded augmentation pipeline."""
    try:
        manifest = _load_manifest(root)
        before = manifest.counts()
        class_targets = {name: int(round(n * DEFAULT_EXPANSION)) for name, n in before.items()}
        for item in targets:
            name, _, count = item.partition("=")
            if name not in class_targets:
                raise ValueError(f"unknown class '{name}' in --target")
            class_targets[name] = int(count)
        spec = aug.AugmentationSpec(seed=seed, class_targets=class_targets)
        with _cleanup_on_failure(out):
            result = aug.expand_dataset(manifest, spec, out)
    except Exception as exc:
        raise click.ClickException(str(exc))
    after = result.counts()
    for name in result.class_names:
        click.echo(f"{name}: {before.get(name, 0)} -> {after[name]}")
    click.echo(f"total: {sum(before.values())} -> {sum(after.values())}")


@main.command("audit-params")
@click.option("--input", "input_side", default=224, show_default=True, type=int)
def audit_params(input_side):
    """Print the per-layer shape/parameter audit and the published-size
    comparison block."""
    try:
        config = build_pvfaultnet(input_side)
        audit = count_parameters(config)
        reference = audit_reference_counts(config)
    except Exception as exc:
        raise click.ClickException(str(exc))
    published = {r.label: r for r in reference.rows}
    click.echo(f"{'Layer':<16}{'Output':<16}{'Params':>12}  {'Published':>12}  Status")
    c, h, w = config.input_shape
    click.echo(f"{'Input':<16}{f'{c}x{h}x{w}':<16}{'-':>12}")
    for entry in audit.entries:
        if isinstance(entry.output_shape, tuple):
            shape = "x".join(str(e) for e in entry.output_shape)
        else:
            shape = str(entry.output_shape)
        ref = published.get(entry.label)
        if ref is None:
            click.echo(f"{entry.label:<16}{shape:<16}{entry.params or '-':>12}")
        else:
            status = "ok" if ref.match else f"MISMATCH (delta {ref.delta:+,})"
            click.echo(f"{entry.label:<16}{shape:<16}{entry.params:>12,}  {ref.published:>12,}  {status}")
    total_status = "ok" if reference.total_computed == reference.total_published else (
        f"MISMATCH (delta {reference.total_computed - reference.total_published:+,})"
    )
    click.echo(
        f"{'Total':<16}{'':<16}{reference.total_computed:>12,}  "
        f"{reference.total_published:>12,}  {total_status}"
    )
    click.echo("\nModel size comparison (millions of parameters):")
    for name, size in PUBLISHED_MODEL_SIZES_M.items():
        click.echo(f"  {name:<12}{size:>8.2f}")


@main.command("train")
@click.option("--root", required=True, type=click.Path(path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--epochs", default=50, show_default=True, type=int)
@click.option("--batch-size", default=32, show_default=True, type=int)
@click.option("--learning-rate", default=0.02, show_default=True, type=float)
@click.option("--momentum", default=0.9, show_default=True, type=float)
@click.option("--decay", default=0.01, show_default=True, type=float)
@click.option("--decay-mode", default="weight_decay", show_default=True,
              type=click.Choice(trainer.DECAY_MODES))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--input", "input_side", default=224, show_default=True, type=int)
@click.option("--variant", default="base", show_default=True, type=click.Choice(trainer.VARIANTS))
@click.option("--valid-count", default=48, show_default=True, type=int)
@click.option("--valid-originals-only", is_flag=True,
              help="Keep augmented samples out of the validation split.")
@click.option("--checkpoint-every", default=0, show_default=True, type=int)
@click.option("--clip-norm", default=5.0, show_default=True, type=float,
              help="Global gradient-norm cap; 0 disables clipping.")
def train_cmd(root, out, epochs, batch_size, learning_rate, momentum, decay, decay_mode,
              seed, input_side, variant, valid_count, valid_originals_only, checkpoint_every,
              clip_norm):
    """Train on a class-foldered dataset; defaults match the published
    global hyper-parameters (batch 32, lr 0.02, SGD-M, decay 0.01)."""
    try:
        manifest = _load_manifest(root)
        if not manifest.subset("valid"):
            split_train_valid(manifest, valid_count, seed, valid_originals_only)
        config = trainer.TrainConfig(
            epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
            momentum=momentum, decay=decay, decay_mode=decay_mode, seed=seed,
            variant=variant, input_side=input_side, checkpoint_every=checkpoint_every,
            clip_norm=clip_norm,
        )
        with _cleanup_on_failure(out):
            record = trainer.train(config, manifest, out)
            for report in record.reports:
                click.echo(metrics.report_serialize(report))
            click.echo(f"checkpoint: {record.checkpoint_path}")
    except Exception as exc:
        raise click.ClickException(str(exc))


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(path_type=Path))
@click.option("--root", required=True, type=click.Path(path_type=Path))
@click.option("--split", default="valid", show_default=True)
@click.option("--batch-size", default=32, show_default=True, type=int)
@click.option("--input", "input_side", default=None, type=int,
              help="Assert the checkpoint's input resolution.")
def eval_cmd(checkpoint_path, root, split, batch_size, input_side):
    """Evaluate a checkpoint over one split of a dataset."""
    try:
        manifest = _load_manifest(root)
        report = trainer.evaluate(checkpoint_path, manifest, split, batch_size, input_side)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(metrics.summary_table(report))


@main.command("predict")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(path_type=Path))
@click.argument("images", nargs=-1, required=True, type=click.Path(path_type=Path))
def predict_cmd(checkpoint_path, images):
    """Classify images; prints path, class and softmax confidence."""
    try:
        net, meta = load_checkpoint(checkpoint_path)
        class_names = meta.get("class_names", ["defective", "normal"])
        side = net.config.input_shape[1]
        for path in images:
            image = _load_resized(str(path), side)
            cls, probs = net.predict(image)
            click.echo(f"{path}\t{class_names[cls]}\t{probs[cls]:.4f}")
    except Exception as exc:
        raise click.ClickException(str(exc))


@main.command("bench")
@click.option("--input", "input_side", default=224, show_default=True, type=int)
@click.option("--repeats", default=5, show_default=True, type=int)
def bench_cmd(input_side, repeats):
    """Time a single-image inference forward pass."""
    try:
        net = trainer.Network(build_pvfaultnet(input_side), seed=0)
        image = np.zeros((3, input_side, input_side), dtype=np.float32)
        net.forward(image)  # warm-up
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            net.forward(image)
            best = min(best, time.perf_counter() - t0)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"forward pass at {input_side}x{input_side}: {best * 1000:.2f} ms (best of {repeats})")
