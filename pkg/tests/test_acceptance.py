"""End-to-end acceptance checks. Each test prints one pass/fail line (visible
even under output capture) and asserts the same condition, so the suite both
reports and enforces every criterion."""

import time

import numpy as np
import pytest

from conftest import naive_conv2d, rel_error
from pvfaultnet import augment as aug
from pvfaultnet import synth
from pvfaultnet.dataset import DatasetManifest, Sample, split_train_valid, write_image
from pvfaultnet.model import (
    ArchitectureConfig,
    LayerSpec,
    Network,
    audit_reference_counts,
    build_pvfaultnet,
    shape_propagate,
)
from pvfaultnet.nn import ConvKernel, conv2d, conv2d_grad
from pvfaultnet.trainer import TrainConfig, train


def _report(capsys, number: int, label: str, ok: bool, detail: str = ""):
    suffix = f" ({detail})" if detail else ""
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {label}{suffix}")
    assert ok, f"criterion {number}: {label}{suffix}"


def test_criterion_01_parameter_audit(capsys):
    t0 = time.perf_counter()
    ref224 = audit_reference_counts(build_pvfaultnet(224))
    ref300 = audit_reference_counts(build_pvfaultnet(300))
    elapsed = time.perf_counter() - t0
    per_layer = [r.computed for r in ref224.rows]
    published = [r.published for r in ref224.rows]
    fc300 = next(r for r in ref300.rows if r.label == "FC-01")
    ok = (
        per_layer == published == [140, 460, 2_916_100, 5_050, 102]
        and ref224.total_computed == ref224.total_published == 2_921_852
        and elapsed < 1.0
        and not fc300.match
        and fc300.computed == 5_329_100
    )
    _report(capsys, 1, "parameter audit: 224-input counts exact, 300-input FC-01 flagged",
            ok, f"total {ref224.total_computed:,}, FC-01@300 {fc300.computed:,}, {elapsed * 1000:.0f} ms")


def test_criterion_02_shape_propagation(capsys):
    shapes = shape_propagate(build_pvfaultnet(300))
    sides = [s[1] for s in shapes if isinstance(s, tuple) and len(s) == 3][1:5]
    ok = sides == [298, 149, 147, 73]
    _report(capsys, 2, "shape propagation at 300 input gives 298/149/147/73",
            ok, "->".join(map(str, sides)))


def _toy_config(side=8):
    return ArchitectureConfig(
        "toy",
        (3, side, side),
        (
            LayerSpec("conv", filters=4, kernel=3),
            LayerSpec("maxpool"),
            LayerSpec("flatten"),
            LayerSpec("fully_connected", units=8),
            LayerSpec("relu"),
            LayerSpec("output", units=2),
        ),
    )


def _whole_net_numeric(net, x, labels, eps):
    numeric = {}
    for name, arr in net.parameters():
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp, _ = net.backward(net.forward(x)[1], labels)
            flat[i] = orig - eps
            fm, _ = net.backward(net.forward(x)[1], labels)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        numeric[name] = g
    return numeric


def test_criterion_03_gradient_checks(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)

    # Per-layer, double precision: convolution against central differences.
    kernel = ConvKernel(rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2))
    x = rng.standard_normal((3, 6, 6))
    upstream = rng.standard_normal((2, 4, 4))
    gx, gw, gb = conv2d_grad(x, kernel, upstream)
    eps = 1e-6
    worst_layer = 0.0

    def fd(arr, analytic, loss):
        nonlocal worst_layer
        numeric = np.zeros_like(arr)
        flat, nflat = arr.ravel(), numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss()
            flat[i] = orig - eps
            fm = loss()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * eps)
        worst_layer = max(worst_layer, rel_error(analytic, numeric))

    conv_loss = lambda: float((conv2d(x, kernel) * upstream).sum())
    fd(x, gx, conv_loss)
    fd(kernel.weights, gw, conv_loss)
    fd(kernel.bias, gb, conv_loss)

    # Whole toy network: double-precision numeric reference against the
    # single-precision analytic gradients.
    net32 = Network(_toy_config(), seed=7)
    net64 = Network(_toy_config(), seed=7)
    for name, arr in net32.parameters():
        net64.set_parameter(name, arr.astype(np.float64))
    x_img = rng.standard_normal((2, 3, 8, 8))
    labels = np.array([0, 1])
    _, grads32 = net32.backward(net32.forward(x_img.astype(np.float32))[1], labels)
    numeric = _whole_net_numeric(net64, x_img, labels, eps=1e-5)
    worst_net = max(rel_error(grads32[name], numeric[name]) for name in numeric)

    elapsed = time.perf_counter() - t0
    ok = worst_layer < 1e-4 and worst_net < 1e-3 and elapsed < 60.0
    _report(capsys, 3, "finite-difference gradient checks",
            ok, f"per-layer {worst_layer:.2e} < 1e-4, whole-net {worst_net:.2e} < 1e-3, {elapsed:.1f} s")


def test_criterion_04_convolution_oracle(capsys):
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(1000):
        k_out, c_in = rng.integers(1, 3, size=2)
        kh = int(rng.choice([1, 3]))
        h = int(rng.integers(kh, 9))
        w = int(rng.integers(kh, 9))
        kernel = ConvKernel(
            rng.standard_normal((k_out, c_in, kh, kh)), rng.standard_normal(k_out)
        )
        x = rng.standard_normal((c_in, h, w))
        if not np.array_equal(conv2d(x, kernel), naive_conv2d(x, kernel)):
            mismatches += 1
    ok = mismatches == 0
    _report(capsys, 4, "conv2d bitwise-matches the nested-loop oracle on 1,000 cases",
            ok, f"{mismatches} mismatches")


def test_criterion_05_augmentation_counts(capsys, tmp_path):
    rng = np.random.default_rng(11)
    root = tmp_path / "fixture"
    samples = []
    for name, count in (("defective", 153), ("normal", 75)):
        (root / name).mkdir(parents=True)
        for i in range(count):
            img = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
            rel = f"{name}/{name}_{i:05d}.png"
            write_image(root / rel, img)
            samples.append(Sample(rel, name))
    manifest = DatasetManifest(root, samples)
    spec = aug.AugmentationSpec(seed=0, class_targets={"defective": 361, "normal": 177})
    expanded = aug.expand_dataset(manifest, spec, tmp_path / "out")
    counts = expanded.counts()

    base = rng.integers(0, 256, (100, 100, 3), dtype=np.uint8)
    corrupted = int((aug.salt_pepper(base, seed=5) != base).any(axis=2).sum())

    flips_ok = all(
        np.array_equal(aug.flip_vertical(aug.flip_vertical(img)), img)
        and np.array_equal(aug.flip_horizontal(aug.flip_horizontal(img)), img)
        for img in (rng.integers(0, 256, (9, 7, 3), dtype=np.uint8) for _ in range(1000))
    )
    ok = (
        counts == {"defective": 361, "normal": 177}
        and sum(counts.values()) == 538
        and corrupted == round(0.018 * 100 * 100)
        and flips_ok
    )
    _report(capsys, 5, "augmentation: 153/75 -> 361/177, exact salt-pepper count, flip involutions",
            ok, f"counts {counts}, corrupted {corrupted}/180")


def test_criterion_06_f1_fixtures(capsys):
    fixtures = [(0.75, 1.00, 86), (0.93, 0.78, 85), (0.89, 0.89, 89), (0.91, 0.89, 90)]
    worst = max(abs(200 * p * r / (p + r) - expected) for p, r, expected in fixtures)
    ok = worst <= 0.5
    _report(capsys, 6, "F1 from published precision/recall pairs within +/-0.5%",
            ok, f"worst deviation {worst:.3f}%")


def test_criterion_07_memorization(capsys, tmp_path):
    manifest = synth.generate_dataset(tmp_path / "data", 16, seed=2, size=64)
    for s in manifest.samples:
        s.split = "train"
    config = TrainConfig(input_side=64, seed=0)  # published defaults otherwise
    t0 = time.perf_counter()
    record = train(config, manifest, tmp_path / "run")
    elapsed = time.perf_counter() - t0
    hit = next((r.epoch for r in record.reports if r.train_accuracy == 1.0), None)
    ok = hit is not None and elapsed < 600.0
    _report(capsys, 7, "32-image fixture memorized to 100% train accuracy within 50 epochs",
            ok, f"first at epoch {hit}, {elapsed:.0f} s")


def test_criterion_08_learning(capsys, tmp_path):
    manifest = synth.generate_dataset(tmp_path / "data", 224, seed=4, size=64)
    split_train_valid(manifest, 48, seed=0)
    config = TrainConfig(epochs=20, input_side=64, seed=0)
    record = train(config, manifest, tmp_path / "run")
    best = max(r.valid_accuracy for r in record.reports)
    hit = next((r.epoch for r in record.reports if r.valid_accuracy >= 0.90), None)
    ok = hit is not None
    _report(capsys, 8, "400/48 synthetic set reaches >=90% validation accuracy within 50 epochs",
            ok, f"best {best * 100:.1f}%, first >=90% at epoch {hit}")


def test_criterion_09_determinism(capsys, tmp_path):
    manifest = synth.generate_dataset(tmp_path / "data", 12, seed=6, size=32)
    split_train_valid(manifest, 6, seed=0)
    config = TrainConfig(epochs=3, batch_size=8, input_side=32, seed=9)
    a = train(config, manifest, tmp_path / "a")
    b = train(config, manifest, tmp_path / "b")
    losses_equal = [r.train_loss for r in a.reports] == [r.train_loss for r in b.reports]
    bytes_equal = (
        (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    )
    ok = losses_equal and bytes_equal
    _report(capsys, 9, "identical seeds give identical loss sequences and checkpoints",
            ok, f"losses equal: {losses_equal}, checkpoint bytes equal: {bytes_equal}")


def test_criterion_10_inference_latency(capsys):
    net = Network(build_pvfaultnet(224), seed=0)
    image = np.zeros((3, 224, 224), dtype=np.float32)
    net.forward(image)  # warm-up
    best = min(
        (lambda t0: (net.forward(image), time.perf_counter() - t0)[1])(time.perf_counter())
        for _ in range(5)
    )
    ok = best < 0.100
    _report(capsys, 10, "single-image forward pass at 224 input under 100 ms",
            ok, f"measured {best * 1000:.1f} ms")
