"""Confusion-matrix accumulation and derived rates.

Class 0 (defective) is the positive class: counts are indexed
(actual, predicted), so TP = counts[0][0]. Zero-denominator rates are
reported as 0.0 together with a flag rather than raising, so degenerate
epochs still produce a report row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP, localcontext

import numpy as np

POSITIVE_CLASS = 0  # defective


@dataclass
class ConfusionMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=np.int64))

    def update(self, actual: int, predicted: int) -> None:
        if actual not in (0, 1) or predicted not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got actual={actual} predicted={predicted}")
        self.counts[actual, predicted] += 1

    def update_batch(self, actual, predicted) -> None:
        for a, p in zip(np.asarray(actual).ravel(), np.asarray(predicted).ravel()):
            self.update(int(a), int(p))

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def tp(self) -> int:
        return int(self.counts[0, 0])

    @property
    def fn(self) -> int:
        return int(self.counts[0, 1])

    @property
    def fp(self) -> int:
        return int(self.counts[1, 0])

    @property
    def tn(self) -> int:
        return int(self.counts[1, 1])

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def precision(cm: ConfusionMatrix) -> float:
    denom = cm.tp + cm.fp
    return cm.tp / denom if denom else 0.0


def recall(cm: ConfusionMatrix) -> float:
    denom = cm.tp + cm.fn
    return cm.tp / denom if denom else 0.0


def f1(cm: ConfusionMatrix) -> float:
    p, r = precision(cm), recall(cm)
    return 2 * p * r / (p + r) if p + r else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return (cm.tp + cm.tn) / cm.total if cm.total else 0.0


def zero_denominator_flags(cm: ConfusionMatrix) -> tuple:
    flags = []
    if cm.tp + cm.fp == 0:
        flags.append("precision-undefined")
    if cm.tp + cm.fn == 0:
        flags.append("recall-undefined")
    if precision(cm) + recall(cm) == 0:
        flags.append("f1-undefined")
    if cm.total == 0:
        flags.append("empty-evaluation")
    return tuple(flags)


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: ConfusionMatrix
    seconds: float = 0.0
    flags: tuple = ()

    @classmethod
    def from_confusion(cls, epoch, train_loss, train_accuracy, cm, seconds=0.0) -> "EpochReport":
        return cls(
            epoch,
            train_loss,
            train_accuracy,
            accuracy(cm),
            precision(cm),
            recall(cm),
            f1(cm),
            cm,
            seconds,
            zero_denominator_flags(cm),
        )


def round_half_up(value: float, places: int = 2) -> float:
    value = float(value)
    if not math.isfinite(value):
        return value
    q = Decimal(1).scaleb(-places)
    with localcontext() as ctx:
        ctx.prec = 350  # enough digits to quantize any finite double
        return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def _fmt(value: float, places: int) -> str:
    return f"{round_half_up(value, places):.{places}f}"


def report_serialize(report: EpochReport) -> str:
    """One line per epoch; rates round half-up to 2 decimals."""
    cm = report.confusion
    fields = [
        f"epoch={report.epoch}",
        f"train_loss={_fmt(report.train_loss, 4)}",
        f"train_acc={_fmt(report.train_accuracy, 2)}",
        f"valid_acc={_fmt(report.valid_accuracy, 2)}",
        f"precision={_fmt(report.precision, 2)}",
        f"recall={_fmt(report.recall, 2)}",
        f"f1={_fmt(report.f1, 2)}",
        f"tp={cm.tp}",
        f"fn={cm.fn}",
        f"fp={cm.fp}",
        f"tn={cm.tn}",
        f"seconds={_fmt(report.seconds, 2)}",
        "flags=" + (",".join(report.flags) if report.flags else "-"),
    ]
    return " ".join(fields)


def report_parse(line: str) -> EpochReport:
    kv = dict(part.split("=", 1) for part in line.split())
    cm = ConfusionMatrix(
        np.array([[int(kv["tp"]), int(kv["fn"])], [int(kv["fp"]), int(kv["tn"])]], dtype=np.int64)
    )
    flags = () if kv["flags"] == "-" else tuple(kv["flags"].split(","))
    return EpochReport(
        epoch=int(kv["epoch"]),
        train_loss=float(kv["train_loss"]),
        train_accuracy=float(kv["train_acc"]),
        valid_accuracy=float(kv["valid_acc"]),
        precision=float(kv["precision"]),
        recall=float(kv["recall"]),
        f1=float(kv["f1"]),
        confusion=cm,
        seconds=float(kv["seconds"]),
        flags=flags,
    )


def summary_table(report: EpochReport) -> str:
    rows = [
        ("Train Accuracy", f"{round_half_up(report.train_accuracy * 100):.2f}%"),
        ("Valid Accuracy", f"{round_half_up(report.valid_accuracy * 100):.2f}%"),
        ("Precision", f"{round_half_up(report.precision * 100):.2f}%"),
        ("Recall", f"{round_half_up(report.recall * 100):.2f}%"),
        ("F1-Score", f"{round_half_up(report.f1 * 100):.2f}%"),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"Performance metrics, epoch {report.epoch}"]
    lines += [f"  {name:<{width}}  {value}" for name, value in rows]
    cm = report.confusion
    lines.append(f"  Confusion [actual x predicted]: [[{cm.tp}, {cm.fn}], [{cm.fp}, {cm.tn}]]")
    if report.flags:
        lines.append("  Flags: " + ", ".join(report.flags))
    return "\n".join(lines)


CSV_HEADER = "epoch,train_loss,train_accuracy,valid_accuracy,precision,recall,f1,tp,fn,fp,tn,seconds"


def csv_export(reports: list) -> str:
    lines = [CSV_HEADER]
    for r in reports:
        cm = r.confusion
        lines.append(
            f"{r.epoch},{_fmt(r.train_loss, 4)},{_fmt(r.train_accuracy, 4)},"
            f"{_fmt(r.valid_accuracy, 4)},{_fmt(r.precision, 4)},{_fmt(r.recall, 4)},"
            f"{_fmt(r.f1, 4)},{cm.tp},{cm.fn},{cm.fp},{cm.tn},{_fmt(r.seconds, 2)}"
        )
    return "\n".join(lines) + "\n"
