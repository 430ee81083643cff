"""Training loop: epoch iteration over seeded mini-batches, per-epoch
validation reports, checkpointing, and the variant experiments
(plain / batchnorm / dropout / both)."""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import metrics, model, nn
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import DatasetManifest, batches
from .metrics import ConfusionMatrix, EpochReport
from .model import Network, build_pvfaultnet, with_batchnorm, with_dropout

VARIANTS = ("base", "batchnorm", "dropout25", "batchnorm+dropout25")
DECAY_MODES = ("weight_decay", "lr_decay")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.02
    momentum: float = 0.9
    decay: float = 0.01
    decay_mode: str = "weight_decay"
    seed: int = 0
    variant: str = "base"
    input_side: int = 224
    checkpoint_every: int = 0  # extra per-epoch checkpoints; 0 = final only
    # Without clipping the flatten->FC block diverges at the default learning
    # rate (loss curvature along FC-01 exceeds the stable step size); a global
    # gradient-norm cap keeps the published hyper-parameters usable. 0 disables.
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.decay_mode not in DECAY_MODES:
            raise ValueError(f"decay_mode must be one of {DECAY_MODES}, got '{self.decay_mode}'")

    def build_architecture(self) -> model.ArchitectureConfig:
        config = build_pvfaultnet(self.input_side)
        if "batchnorm" in self.variant:
            config = with_batchnorm(config)
        if "dropout25" in self.variant:
            config = with_dropout(config, 0.25)
        return config


@dataclass
class RunRecord:
    config: dict
    class_names: list
    reports: list
    checkpoint_path: str
    environment: str


def _epoch_lr(config: TrainConfig, epoch: int) -> float:
    if config.decay_mode == "lr_decay":
        return config.learning_rate / (1 + config.decay * (epoch - 1))
    return config.learning_rate


def _clip_gradients(grads: list, max_norm: float) -> None:
    if not max_norm:
        return
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale


def _evaluate_network(net: Network, manifest: DatasetManifest, split: str, batch_size: int, input_side: int) -> ConfusionMatrix:
    cm = ConfusionMatrix()
    if not manifest.subset(split):
        return cm
    for batch in batches(manifest, split, batch_size, input_side=input_side, shuffle=False):
        logits, _ = net.forward(batch.images, train=False)
        cm.update_batch(batch.labels, np.argmax(logits, axis=1))
    return cm


def train(config: TrainConfig, manifest: DatasetManifest, out_dir) -> RunRecord:
    """Run the full training loop, writing a reconstructible run directory:
    config echo, metrics log, manifest copy, and checkpoints."""
    if not manifest.subset("train"):
        raise ValueError("manifest has no training samples")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    arch = config.build_architecture()
    net = Network(arch, seed=config.seed)
    params = net.parameters()
    arrays = [a for _, a in params]
    names = [n for n, _ in params]
    decay = config.decay if config.decay_mode == "weight_decay" else 0.0
    state = nn.OptimizerState.for_params(arrays, config.learning_rate, config.momentum, decay)

    class_names = manifest.class_names
    base_meta = {
        "class_names": class_names,
        "normalization": "scale_1_255",
        "decay_mode": config.decay_mode,
        "train_config": asdict(config),
    }
    (out / "config.json").write_text(json.dumps({**asdict(config), "architecture": arch.to_dict()}, indent=2))
    manifest.save(out / "manifest.jsonl")
    metrics_path = out / "metrics.log"
    metrics_path.write_text("")
    last_path = out / "last.ckpt"

    n_train = len(manifest.subset("train"))
    reports = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        state.learning_rate = _epoch_lr(config, epoch)
        loss_sum = 0.0
        correct = 0
        for bi, batch in enumerate(
            batches(manifest, "train", config.batch_size, config.seed, epoch, config.input_side)
        ):
            rng = np.random.default_rng([config.seed, epoch, bi])
            logits, cache = net.forward(batch.images, train=True, rng=rng)
            if not np.all(np.isfinite(logits)):
                raise TrainingDiverged(
                    f"non-finite logits at epoch {epoch}, batch {bi}; "
                    f"last good checkpoint: {last_path if last_path.exists() else 'none'}"
                )
            loss, grads = net.backward(cache, batch.labels)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi}; "
                    f"last good checkpoint: {last_path if last_path.exists() else 'none'}"
                )
            loss_sum += loss * len(batch.labels)
            correct += int((np.argmax(logits, axis=1) == batch.labels).sum())
            grad_list = [grads[n] for n in names]
            _clip_gradients(grad_list, config.clip_norm)
            nn.sgd_momentum_step(arrays, grad_list, state)
        if not np.isfinite(loss_sum):
            raise TrainingDiverged(
                f"non-finite accumulated loss at epoch {epoch}; "
                f"last good checkpoint: {last_path if last_path.exists() else 'none'}"
            )
        cm = _evaluate_network(net, manifest, "valid", config.batch_size, config.input_side)
        report = EpochReport.from_confusion(
            epoch, loss_sum / n_train, correct / n_train, cm, time.perf_counter() - t0
        )
        reports.append(report)
        with open(metrics_path, "a") as fh:
            fh.write(metrics.report_serialize(report) + "\n")
        meta = {
            **base_meta,
            "epoch": epoch,
            "train_loss": report.train_loss,
            "train_accuracy": report.train_accuracy,
        }
        save_checkpoint(last_path, net, meta)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(out / f"epoch_{epoch:03d}.ckpt", net, meta)

    final_path = out / "final.ckpt"
    save_checkpoint(final_path, net, meta)
    record = RunRecord(
        config=asdict(config),
        class_names=class_names,
        reports=reports,
        checkpoint_path=str(final_path),
        environment=f"python {platform.python_version()}, numpy {np.__version__}, {platform.machine()}",
    )
    (out / "run.json").write_text(
        json.dumps(
            {
                "config": record.config,
                "class_names": record.class_names,
                "checkpoint": record.checkpoint_path,
                "environment": record.environment,
                "reports": [metrics.report_serialize(r) for r in record.reports],
            },
            indent=2,
        )
    )
    return record


def evaluate(checkpoint_path, manifest: DatasetManifest, split: str = "valid", batch_size: int = 32, input_side: int | None = None) -> EpochReport:
    """Inference-mode evaluation of a checkpoint over one manifest split."""
    net, meta = load_checkpoint(checkpoint_path)
    side = net.config.input_shape[1]
    if input_side is not None and input_side != side:
        raise CheckpointError(
            f"checkpoint expects {side}x{side} input but {input_side}x{input_side} was requested"
        )
    stored = meta.get("class_names")
    if stored and stored != manifest.class_names and manifest.samples:
        raise CheckpointError(
            f"checkpoint classes {stored} do not match manifest classes {manifest.class_names}"
        )
    cm = _evaluate_network(net, manifest, split, batch_size, side)
    return EpochReport.from_confusion(
        meta.get("epoch", 0), meta.get("train_loss", 0.0), meta.get("train_accuracy", 0.0), cm
    )
