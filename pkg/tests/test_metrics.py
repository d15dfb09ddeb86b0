import numpy as np
import pytest

from stancecl import (CLASS_ORDER, ConfusionTable, EvalStyle, MetricReport,
                      SplitProtocol, Stance, f1_per_class, headline_metric,
                      style_for_protocol, vast_headline)


def brute_force_f1(gold, predicted, stance):
    tp = sum(1 for g, p in zip(gold, predicted) if g == stance and p == stance)
    fp = sum(1 for g, p in zip(gold, predicted) if g != stance and p == stance)
    fn = sum(1 for g, p in zip(gold, predicted) if g == stance and p != stance)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def random_labels(rng, n):
    classes = list(CLASS_ORDER)
    return ([classes[i] for i in rng.integers(0, 3, size=n)],
            [classes[i] for i in rng.integers(0, 3, size=n)])


def brute_force_like_f1(tp, fp, fn):
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


class TestConfusionTable:
    def test_from_labels_counts(self):
        gold = [Stance.FAVOR, Stance.FAVOR, Stance.AGAINST]
        pred = [Stance.FAVOR, Stance.NEUTRAL, Stance.AGAINST]
        table = ConfusionTable.from_labels(gold, pred)
        assert table.counts[0, 0] == 1
        assert table.counts[0, 2] == 1
        assert table.counts[1, 1] == 1
        assert table.total == 3

    def test_validation(self):
        with pytest.raises(ValueError, match="3x3"):
            ConfusionTable(np.zeros((2, 2)))
        with pytest.raises(ValueError, match="nonnegative"):
            ConfusionTable(np.full((3, 3), -1))


class TestF1PerClass:
    def test_perfect_diagonal(self):
        table = ConfusionTable(np.diag([5, 7, 2]))
        assert all(value == 1.0 for value in f1_per_class(table).values())

    def test_hand_case_two_thirds(self):
        # FAVOR: TP=2, FP=1, FN=1 -> P = R = 2/3 -> F1 = 2/3.
        counts = np.zeros((3, 3), dtype=int)
        counts[0, 0] = 2
        counts[1, 0] = 1
        counts[0, 1] = 1
        counts[1, 1] = 5
        table = ConfusionTable(counts)
        assert f1_per_class(table)[Stance.FAVOR] == pytest.approx(2 / 3)

    def test_absent_class_zero(self):
        counts = np.zeros((3, 3), dtype=int)
        counts[0, 0] = 4
        table = ConfusionTable(counts)
        assert f1_per_class(table)[Stance.NEUTRAL] == 0.0

    def test_matches_brute_force_on_random_cases(self):
        rng = np.random.default_rng(100)
        for _ in range(200):
            gold, pred = random_labels(rng, int(rng.integers(1, 40)))
            table = ConfusionTable.from_labels(gold, pred)
            ours = f1_per_class(table)
            for stance in CLASS_ORDER:
                assert ours[stance] == brute_force_f1(gold, pred, stance)


class TestHeadline:
    def test_favor_against_mean(self):
        counts = np.zeros((3, 3), dtype=int)
        counts[0, 0] = 3  # FAVOR perfect
        counts[1, 2] = 4  # AGAINST all wrong
        table = ConfusionTable(counts)
        per_class = f1_per_class(table)
        expected = (per_class[Stance.FAVOR] + per_class[Stance.AGAINST]) / 2
        assert headline_metric(table, EvalStyle.FAVOR_AGAINST) == pytest.approx(expected)

    def test_all_class_is_three_way_mean(self):
        rng = np.random.default_rng(5)
        gold, pred = random_labels(rng, 60)
        table = ConfusionTable.from_labels(gold, pred)
        per_class = f1_per_class(table)
        expected = np.mean([per_class[c] for c in CLASS_ORDER])
        assert headline_metric(table, EvalStyle.ALL_CLASS) == pytest.approx(expected)

    def test_reported_vast_row_reproduced(self):
        assert vast_headline([0.606, 0.673, 0.898]) == pytest.approx(0.7256667,
                                                                     abs=5e-7)
        assert abs(vast_headline([0.606, 0.673, 0.898]) - 0.725) < 0.05

    def test_cross_target_perfect_on_subset(self):
        # Perfect on gold FAVOR/AGAINST; NEUTRAL golds predicted wrong must
        # not matter.
        counts = np.zeros((3, 3), dtype=int)
        counts[0, 0] = 6
        counts[1, 1] = 4
        counts[2, 0] = 3  # neutral gold predicted favor
        table = ConfusionTable(counts)
        assert headline_metric(table, EvalStyle.CROSS_TARGET) == pytest.approx(1.0)

    def test_cross_target_micro_binary(self):
        # gold FAVOR: 2 right, 1 predicted AGAINST, 1 predicted NEUTRAL;
        # gold AGAINST: 3 right.
        counts = np.zeros((3, 3), dtype=int)
        counts[0, 0] = 2
        counts[0, 1] = 1
        counts[0, 2] = 1
        counts[1, 1] = 3
        table = ConfusionTable(counts)
        # micro: TP=5, FP=1, FN=2 -> 2*5/(2*5+1+2); macro from per-class on
        # the restricted subset.
        micro = 10 / 13
        f1_favor = 2 * (2 / 2) * (2 / 4) / ((2 / 2) + (2 / 4))
        f1_against = 2 * (3 / 4) * (3 / 3) / ((3 / 4) + (3 / 3))
        expected = (micro + (f1_favor + f1_against) / 2) / 2
        assert headline_metric(table, EvalStyle.CROSS_TARGET) == pytest.approx(expected)

    def test_cross_target_three_class_micro_is_accuracy(self):
        rng = np.random.default_rng(6)
        gold, pred = random_labels(rng, 50)
        table = ConfusionTable.from_labels(gold, pred)
        accuracy = np.trace(table.counts) / 50

        def restricted_f1(me, other):
            tp = table.counts[me, me]
            fp = table.counts[other, me]
            fn = table.counts[me, :].sum() - tp
            return brute_force_like_f1(tp, fp, fn)

        macro = (restricted_f1(0, 1) + restricted_f1(1, 0)) / 2
        value = headline_metric(table, EvalStyle.CROSS_TARGET,
                                cross_target_micro="three_class")
        assert value == pytest.approx((accuracy + macro) / 2)

    def test_unknown_style_rejected(self):
        table = ConfusionTable(np.zeros((3, 3), dtype=int))
        with pytest.raises(ValueError):
            headline_metric(table, "bogus")


class TestStyleForProtocol:
    def test_mapping(self):
        assert style_for_protocol(SplitProtocol.ZERO_SHOT) == EvalStyle.FAVOR_AGAINST
        assert style_for_protocol(SplitProtocol.FEW_SHOT) == EvalStyle.ALL_CLASS
        assert style_for_protocol(SplitProtocol.CROSS_TARGET) == EvalStyle.CROSS_TARGET


class TestMetricReport:
    def test_headline_recomputable_from_table(self):
        rng = np.random.default_rng(7)
        for style in EvalStyle:
            gold, pred = random_labels(rng, 30)
            table = ConfusionTable.from_labels(gold, pred)
            report = MetricReport.from_table(table, style, run_seed=3)
            assert report.headline == headline_metric(table, style)

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(8)
        gold, pred = random_labels(rng, 25)
        table = ConfusionTable.from_labels(gold, pred)
        report = MetricReport.from_table(table, EvalStyle.ALL_CLASS, run_seed=9)
        loaded = MetricReport.from_dict(report.to_dict())
        assert loaded.headline == report.headline
        assert loaded.per_class_f1 == report.per_class_f1
        assert np.array_equal(loaded.table.counts, report.table.counts)

    def test_inconsistent_headline_rejected(self):
        table = ConfusionTable(np.diag([3, 3, 3]))
        report = MetricReport.from_table(table, EvalStyle.ALL_CLASS)
        payload = report.to_dict()
        payload["headline"] = 0.123
        with pytest.raises(ValueError, match="inconsistent"):
            MetricReport.from_dict(payload)

    def test_support_counts(self):
        gold = [Stance.FAVOR] * 3 + [Stance.NEUTRAL] * 2
        pred = [Stance.FAVOR] * 5
        report = MetricReport.from_table(ConfusionTable.from_labels(gold, pred),
                                         EvalStyle.FAVOR_AGAINST)
        assert report.support[Stance.FAVOR] == 3
        assert report.support[Stance.AGAINST] == 0
        assert report.support[Stance.NEUTRAL] == 2
