"""Seeded image-augmentation pipeline.

Images are (H, W, 3) uint8 arrays. Each augmented copy applies an
independent random subset of the configured transforms (each included with
probability 0.5, parameters uniform within range), with the random stream
derived from (seed, class index, copy index) so serial reruns are
byte-identical and every sample can be replayed from its provenance record.

Transform semantics:
  brightness  additive shift delta*255 per channel
  exposure    multiplicative gain 2**delta
both clamped to [0, 255] with round-half-to-even; Gaussian blur is separable
with radius ceil(3*sigma) and clamp-to-edge borders; salt-and-pepper corrupts
exactly round(fraction*W*H) distinct pixels to 0 or 255 across all channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, Sample, read_image, write_image

BRIGHTNESS_RANGE = (-0.25, 0.25)
EXPOSURE_RANGE = (-0.15, 0.15)
BLUR_SIGMA_RANGE = (0.0, 3.5)
SALT_PEPPER_FRACTION = 0.018


@dataclass(frozen=True)
class TransformRange:
    kind: str
    low: float = 0.0
    high: float = 0.0

    _BOUNDS = {
        "flip_vertical": None,
        "flip_horizontal": None,
        "brightness": BRIGHTNESS_RANGE,
        "exposure": EXPOSURE_RANGE,
        "gaussian_blur": BLUR_SIGMA_RANGE,
        "salt_pepper": (0.0, 1.0),
    }

    def __post_init__(self):
        if self.kind not in self._BOUNDS:
            raise ValueError(f"unknown transform kind '{self.kind}'")
        bounds = self._BOUNDS[self.kind]
        if bounds is not None:
            lo, hi = bounds
            if not (lo <= self.low <= self.high <= hi):
                raise ValueError(
                    f"{self.kind} range [{self.low}, {self.high}] outside allowed [{lo}, {hi}]"
                )
        if self.kind == "salt_pepper" and not 0 < self.low < 1:
            raise ValueError(f"salt_pepper fraction must be in (0,1), got {self.low}")


def default_transforms() -> tuple:
    return (
        TransformRange("flip_vertical"),
        TransformRange("flip_horizontal"),
        TransformRange("brightness", *BRIGHTNESS_RANGE),
        TransformRange("exposure", *EXPOSURE_RANGE),
        TransformRange("gaussian_blur", *BLUR_SIGMA_RANGE),
        TransformRange("salt_pepper", SALT_PEPPER_FRACTION, SALT_PEPPER_FRACTION),
    )


@dataclass
class AugmentationSpec:
    seed: int
    class_targets: dict
    transforms: tuple = field(default_factory=default_transforms)
    include_probability: float = 0.5


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected (H,W,3) uint8 image, got shape {img.shape} dtype {img.dtype}")


def flip_vertical(img: np.ndarray) -> np.ndarray:
    _check_image(img)
    return img[::-1].copy()


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    _check_image(img)
    return img[:, ::-1].copy()


def _clamp_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def adjust_brightness(img: np.ndarray, delta: float) -> np.ndarray:
    _check_image(img)
    lo, hi = BRIGHTNESS_RANGE
    if not lo <= delta <= hi:
        raise ValueError(f"brightness delta {delta} outside [{lo}, {hi}]")
    return _clamp_u8(img.astype(np.float64) + delta * 255.0)


def adjust_exposure(img: np.ndarray, delta: float) -> np.ndarray:
    _check_image(img)
    lo, hi = EXPOSURE_RANGE
    if not lo <= delta <= hi:
        raise ValueError(f"exposure delta {delta} outside [{lo}, {hi}]")
    return _clamp_u8(img.astype(np.float64) * 2.0**delta)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    _check_image(img)
    lo, hi = BLUR_SIGMA_RANGE
    if not lo <= sigma <= hi:
        raise ValueError(f"blur sigma {sigma} outside [{lo}, {hi}]")
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    radius = len(k) // 2
    acc = img.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (radius, radius)
        padded = np.pad(acc, pad, mode="edge")
        acc = np.zeros_like(acc)
        for i, weight in enumerate(k):
            sl = [slice(None)] * 3
            sl[axis] = slice(i, i + img.shape[axis])
            acc += weight * padded[tuple(sl)]
    return _clamp_u8(acc)


def salt_pepper(img: np.ndarray, fraction: float = SALT_PEPPER_FRACTION, seed=0) -> np.ndarray:
    _check_image(img)
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0,1), got {fraction}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, w = img.shape[:2]
    count = int(round(fraction * h * w))
    out = img.copy()
    if count == 0:
        return out
    positions = rng.choice(h * w, size=count, replace=False)
    values = (rng.integers(0, 2, size=count) * 255).astype(np.uint8)
    flat = out.reshape(-1, 3)
    flat[positions] = values[:, None]
    return out


def sample_transforms(spec: AugmentationSpec, rng: np.random.Generator) -> list:
    """Draw one augmented copy's transform records, in a fixed pipeline order."""
    records = []
    for tr in spec.transforms:
        if rng.random() >= spec.include_probability:
            continue
        if tr.kind in ("flip_vertical", "flip_horizontal"):
            records.append({"kind": tr.kind})
        elif tr.kind == "brightness":
            records.append({"kind": tr.kind, "delta": rng.uniform(tr.low, tr.high)})
        elif tr.kind == "exposure":
            records.append({"kind": tr.kind, "delta": rng.uniform(tr.low, tr.high)})
        elif tr.kind == "gaussian_blur":
            records.append({"kind": tr.kind, "sigma": rng.uniform(tr.low, tr.high)})
        elif tr.kind == "salt_pepper":
            records.append(
                {"kind": tr.kind, "fraction": tr.low, "seed": int(rng.integers(2**63))}
            )
    return records


def apply_transforms(img: np.ndarray, records: list) -> np.ndarray:
    """Replay a provenance transform list; byte-deterministic."""
    out = img
    for rec in records:
        kind = rec["kind"]
        if kind == "flip_vertical":
            out = flip_vertical(out)
        elif kind == "flip_horizontal":
            out = flip_horizontal(out)
        elif kind == "brightness":
            out = adjust_brightness(out, rec["delta"])
        elif kind == "exposure":
            out = adjust_exposure(out, rec["delta"])
        elif kind == "gaussian_blur":
            out = gaussian_blur(out, rec["sigma"])
        elif kind == "salt_pepper":
            out = salt_pepper(out, rec["fraction"], rec["seed"])
        else:
            raise ValueError(f"unknown transform kind '{kind}'")
    return out


def expand_dataset(manifest: DatasetManifest, spec: AugmentationSpec, out_dir) -> DatasetManifest:
    """Copy the originals into out_dir and generate augmented samples until
    each class reaches its target count. Augmented provenance records the
    source image, the transform parameters, and the random-stream key."""
    out_dir = Path(out_dir)
    classes = manifest.class_names
    for name in classes:
        if name not in spec.class_targets:
            raise ValueError(f"no target count for class '{name}'")
    samples = []
    for ci, name in enumerate(classes):
        originals = [s for s in manifest.samples if s.label == name]
        target = spec.class_targets[name]
        if target < len(originals):
            raise ValueError(
                f"class '{name}': target {target} is below the {len(originals)} originals"
            )
        class_dir = out_dir / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for src in originals:
            pixels = read_image(manifest.root / src.path)
            dst = class_dir / (Path(src.path).stem + ".png")
            write_image(dst, pixels)
            samples.append(
                Sample(str(dst.relative_to(out_dir)), name, provenance={"origin": "original", "source": src.path})
            )
        for i in range(target - len(originals)):
            src = originals[i % len(originals)]
            stream = [spec.seed, ci, i]
            records = sample_transforms(spec, np.random.default_rng(stream))
            pixels = apply_transforms(read_image(manifest.root / src.path), records)
            dst = class_dir / f"aug_{i:05d}.png"
            write_image(dst, pixels)
            samples.append(
                Sample(
                    str(dst.relative_to(out_dir)),
                    name,
                    provenance={
                        "origin": "augmented",
                        "source": src.path,
                        "stream": stream,
                        "transforms": records,
                    },
                )
            )
    result = DatasetManifest(out_dir, samples)
    result.save(out_dir / "manifest.jsonl")
    return result
