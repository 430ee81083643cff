"""Synthetic two-class EL-style fixture generator.

Renders textured gray cell squares with bright vertical busbar stripes;
"defective" cells additionally carry thin dark crack polylines and blob
contaminations. Exists to make the pipeline testable end to end; manifests
mark every sample as synthetic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, Sample, write_image

CLASSES = ("defective", "normal")
CRACK_DARKENING = 70
BLOB_DARKENING = 50


def _box_smooth(field: np.ndarray, radius: int) -> np.ndarray:
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(field, pad, mode="edge")
        acc = np.zeros_like(field)
        for i in range(2 * radius + 1):
            sl = [slice(None)] * 2
            sl[axis] = slice(i, i + field.shape[axis])
            acc += padded[tuple(sl)]
        field = acc / (2 * radius + 1)
    return field


def render_cell(rng: np.random.Generator, size: int, defective: bool) -> tuple[np.ndarray, np.ndarray]:
    """One synthetic cell image plus the boolean crack-pixel mask."""
    coarse = rng.normal(0.0, 14.0, (size // 8 + 1, size // 8 + 1))
    texture = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)[:size, :size]
    texture = _box_smooth(texture, 4)
    grain = rng.normal(0.0, 4.0, (size, size))
    img = 150.0 + texture + grain

    bar_width = max(2, size // 32)
    for _ in range(int(rng.integers(2, 4))):
        x = int(rng.integers(0, size - bar_width))
        img[:, x : x + bar_width] += rng.uniform(25.0, 55.0)

    crack_mask = np.zeros((size, size), dtype=bool)
    if defective:
        for _ in range(int(rng.integers(2, 5))):
            y, x = rng.uniform(0, size, 2)
            angle = rng.uniform(0, 2 * np.pi)
            thickness = int(rng.integers(2, 4))
            for _ in range(int(rng.integers(size // 2, size))):
                yi, xi = int(y), int(x)
                if 0 <= yi < size and 0 <= xi < size:
                    crack_mask[yi : yi + thickness, xi : xi + thickness] = True
                angle += rng.normal(0, 0.3)
                y += np.sin(angle)
                x += np.cos(angle)
        for _ in range(int(rng.integers(2, 4))):
            cy, cx = rng.uniform(size * 0.1, size * 0.9, 2)
            ry, rx = rng.uniform(4, 10, 2)
            yy, xx = np.mgrid[0:size, 0:size]
            blob = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            img[blob] -= BLOB_DARKENING
        img[crack_mask] -= CRACK_DARKENING

    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return np.repeat(pixels[:, :, None], 3, axis=2), crack_mask


def generate_dataset(out_dir, n_per_class: int, seed: int = 0, size: int = 128) -> DatasetManifest:
    """Write n_per_class PNGs per class under out_dir/<class>/ and return the
    manifest. Deterministic for a fixed seed."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be positive, got {n_per_class}")
    out_dir = Path(out_dir)
    samples = []
    for ci, name in enumerate(sorted(CLASSES)):
        class_dir = out_dir / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, ci, i])
            img, _ = render_cell(rng, size, defective=(name == "defective"))
            path = class_dir / f"{name}_{i:05d}.png"
            write_image(path, img)
            samples.append(Sample(str(path.relative_to(out_dir)), name, provenance={"origin": "synthetic"}))
    manifest = DatasetManifest(out_dir, samples)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
