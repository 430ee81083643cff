import numpy as np
import pytest

from pvfaultnet.metrics import (
    ConfusionMatrix,
    EpochReport,
    accuracy,
    csv_export,
    f1,
    precision,
    recall,
    report_parse,
    report_serialize,
    round_half_up,
    summary_table,
    zero_denominator_flags,
)


def cm_from(tp, fn, fp, tn):
    return ConfusionMatrix(np.array([[tp, fn], [fp, tn]], dtype=np.int64))


class TestUpdate:
    def test_defective_hit_increments_tp(self):
        cm = ConfusionMatrix()
        cm.update(0, 0)
        assert cm.tp == 1 and cm.total == 1

    def test_total_equals_updates(self, rng):
        cm = ConfusionMatrix()
        n = 57
        for _ in range(n):
            cm.update(int(rng.integers(2)), int(rng.integers(2)))
        assert cm.total == n

    def test_fixture_replay_matches_hand_count(self):
        actual = [0, 0, 0, 1, 1, 0, 1, 0]
        predicted = [0, 1, 0, 1, 0, 0, 1, 0]
        cm = ConfusionMatrix()
        cm.update_batch(actual, predicted)
        # hand count: tp=4 (a0p0), fn=1 (a0p1), fp=1 (a1p0), tn=2 (a1p1)
        assert (cm.tp, cm.fn, cm.fp, cm.tn) == (4, 1, 1, 2)

    def test_invalid_label_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix().update(2, 0)

    def test_merge_is_cellwise_addition(self):
        merged = cm_from(1, 2, 3, 4).merge(cm_from(5, 6, 7, 8))
        assert (merged.tp, merged.fn, merged.fp, merged.tn) == (6, 8, 10, 12)


class TestRates:
    @pytest.mark.parametrize(
        "p,r,expected_pct",
        [(0.75, 1.00, 86), (0.93, 0.78, 85), (0.89, 0.89, 89), (0.91, 0.89, 90)],
    )
    def test_published_f1_fixtures(self, p, r, expected_pct):
        harmonic = 2 * p * r / (p + r)
        assert abs(harmonic * 100 - expected_pct) <= 0.5

    def test_rates_from_matrix(self):
        cm = cm_from(36, 4, 4, 4)
        assert precision(cm) == 0.9
        assert recall(cm) == 0.9
        assert f1(cm) == pytest.approx(0.9)
        assert accuracy(cm) == 40 / 48

    def test_degenerate_all_defective_predictor(self):
        # 48 samples, 36 defective, everything predicted defective
        cm = cm_from(36, 0, 12, 0)
        assert recall(cm) == 1.0
        assert precision(cm) == 0.75
        assert accuracy(cm) == 0.75

    def test_zero_denominators_flagged_not_raised(self):
        cm = cm_from(0, 0, 0, 5)
        assert precision(cm) == 0.0
        assert recall(cm) == 0.0
        assert f1(cm) == 0.0
        flags = zero_denominator_flags(cm)
        assert "precision-undefined" in flags and "recall-undefined" in flags

    def test_f1_between_precision_and_recall(self, rng):
        for _ in range(200):
            cm = cm_from(*(int(v) for v in rng.integers(0, 50, 4)))
            p, r, h = precision(cm), recall(cm), f1(cm)
            if p > 0 and r > 0:
                assert min(p, r) - 1e-12 <= h <= max(p, r) + 1e-12
            if p == r:
                assert h == pytest.approx(p)

    def test_accuracy_invariant_under_joint_transpose(self, rng):
        for _ in range(50):
            tp, fn, fp, tn = (int(v) for v in rng.integers(0, 50, 4))
            if tp + fn + fp + tn == 0:
                continue
            assert accuracy(cm_from(tp, fn, fp, tn)) == accuracy(cm_from(tn, fp, fn, tp))


class TestSerialization:
    def report(self):
        cm = cm_from(32, 4, 3, 9)
        return EpochReport.from_confusion(50, 0.01234, 1.0, cm, seconds=12.5)

    def test_line_contains_published_style_values(self):
        cm = cm_from(89, 11, 9, 91)  # P ~= 0.908, R = 0.89
        line = report_serialize(EpochReport.from_confusion(50, 0.0, 1.0, cm))
        assert "precision=0.91" in line and "recall=0.89" in line and "f1=0.90" in line

    def test_round_trip(self):
        line = report_serialize(self.report())
        assert report_serialize(report_parse(line)) == line

    def test_empty_evaluation_all_zero_flagged(self):
        report = EpochReport.from_confusion(1, 0.0, 0.0, ConfusionMatrix())
        assert report.valid_accuracy == report.precision == report.recall == report.f1 == 0.0
        assert "empty-evaluation" in report.flags
        assert "flags=" in report_serialize(report)

    def test_round_half_up(self):
        assert round_half_up(0.855) == 0.86
        assert round_half_up(0.8449) == 0.84
        assert round_half_up(0.125) == 0.13  # half goes up, not to even

    def test_summary_table_layout(self):
        table = summary_table(self.report())
        assert "Precision" in table and "%" in table and "Valid Accuracy" in table

    def test_csv_export_header_and_rows(self):
        text = csv_export([self.report()])
        lines = text.strip().splitlines()
        assert lines[0].startswith("epoch,train_loss")
        assert len(lines) == 2 and lines[1].startswith("50,")
