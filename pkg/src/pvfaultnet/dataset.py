"""Class-foldered image datasets: manifests, stratified train/validation
splits, and seeded shuffled mini-batches.

On disk a dataset is `root/<class>/*.png|jpg`, plus an optional
`manifest.jsonl` (one JSON record per sample: path, label, split,
provenance). Paths in manifests are relative to the root.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass
class Sample:
    path: str  # relative to the manifest root
    label: str
    split: str = "train"
    provenance: dict | None = None


@dataclass
class DatasetManifest:
    root: Path
    samples: list

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def class_names(self) -> list:
        return sorted({s.label for s in self.samples})

    def counts(self, split: str | None = None) -> dict:
        out = {name: 0 for name in self.class_names}
        for s in self.samples:
            if split is None or s.split == split:
                out[s.label] += 1
        return out

    def subset(self, split: str) -> list:
        return [s for s in self.samples if s.split == split]

    def save(self, path) -> None:
        # Paths are rewritten relative to the manifest file's directory so a
        # manifest saved outside the data root (e.g. into a run directory)
        # still resolves to the same images when reloaded.
        path = Path(path)
        with open(path, "w") as fh:
            for s in self.samples:
                record = asdict(s)
                record["path"] = os.path.relpath(self.root / s.path, path.parent)
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        samples = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    samples.append(Sample(**json.loads(line)))
        return cls(path.parent, samples)


@dataclass
class Batch:
    images: np.ndarray  # (B, 3, H, W) float32 in [0,1]
    labels: np.ndarray  # (B,) int class indices
    paths: list


def read_image(path) -> np.ndarray:
    """Decode to a (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except Exception as exc:
        raise ValueError(f"cannot decode image: {path}") from exc


def write_image(path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def load_directory(root) -> DatasetManifest:
    """Build a manifest from one subdirectory per class; files sorted, so the
    ordering is deterministic."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"no class subdirectories under {root}")
    samples = []
    for class_dir in class_dirs:
        files = sorted(p for p in class_dir.iterdir() if p.is_file())
        kept = 0
        for p in files:
            if p.suffix.lower() not in IMAGE_EXTENSIONS:
                log.warning("skipping %s: unknown extension", p)
                continue
            samples.append(Sample(str(p.relative_to(root)), class_dir.name))
            kept += 1
        if kept == 0:
            raise ValueError(f"class '{class_dir.name}' has no images")
    return DatasetManifest(root, samples)


def split_train_valid(
    manifest: DatasetManifest,
    valid_count: int = 48,
    seed: int = 0,
    originals_only_valid: bool = False,
) -> DatasetManifest:
    """Stratified random split: per-class validation quotas by largest
    remainder, samples drawn by a seeded shuffle. With originals_only_valid
    set, augmented samples are never placed in the validation split."""
    total = len(manifest.samples)
    if not 0 < valid_count < total:
        raise ValueError(f"valid_count must be in (0, {total}), got {valid_count}")

    def eligible(s: Sample) -> bool:
        if not originals_only_valid:
            return True
        return s.provenance is None or s.provenance.get("origin") != "augmented"

    classes = manifest.class_names
    by_class = {name: [s for s in manifest.samples if s.label == name] for name in classes}
    fractions = {name: valid_count * len(by_class[name]) / total for name in classes}
    quotas = {name: int(fractions[name]) for name in classes}
    leftover = valid_count - sum(quotas.values())
    for name in sorted(classes, key=lambda n: fractions[n] - quotas[n], reverse=True)[:leftover]:
        quotas[name] += 1

    for s in manifest.samples:
        s.split = "train"
    for ci, name in enumerate(classes):
        pool = [s for s in by_class[name] if eligible(s)]
        if quotas[name] > len(pool):
            raise ValueError(
                f"class '{name}' needs {quotas[name]} validation samples but only "
                f"{len(pool)} are eligible"
            )
        rng = np.random.default_rng([seed, ci])
        order = rng.permutation(len(pool))
        for idx in order[: quotas[name]]:
            pool[idx].split = "valid"
    return manifest


@lru_cache(maxsize=2048)
def _load_resized(path: str, side: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (side, side):
                rgb = rgb.resize((side, side), Image.BILINEAR)
            pixels = np.asarray(rgb)
    except ValueError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode image: {path}") from exc
    return (pixels.astype(np.float32) / 255.0).transpose(2, 0, 1)


def batches(
    manifest: DatasetManifest,
    split: str,
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    input_side: int = 224,
    shuffle: bool = True,
):
    """Yield Batch objects over one split. The shuffle is keyed by
    (seed, epoch); with shuffle=False samples come in manifest order.
    The final partial batch is included."""
    samples = manifest.subset(split)
    if not samples:
        raise ValueError(f"split '{split}' is empty")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    class_index = {name: i for i, name in enumerate(manifest.class_names)}
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        images = np.stack([_load_resized(str(manifest.root / s.path), input_side) for s in chunk])
        labels = np.array([class_index[s.label] for s in chunk], dtype=np.int64)
        yield Batch(images, labels, [s.path for s in chunk])
