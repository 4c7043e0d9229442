import numpy as np
import pytest

from fedransim import metrics, nn


def brute_force_metrics(y_true, y_pred, q):
    """Scalar-loop reference implementation of all four macro metrics."""
    n = len(y_true)
    correct = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    precisions, recalls, f1s = [], [], []
    for c in range(q):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    return (
        correct / n,
        sum(precisions) / q,
        sum(recalls) / q,
        sum(f1s) / q,
    )


class TestConfusionMatrix:
    def test_hand_example(self):
        cm = metrics.confusion_matrix([0, 0, 1, 1, 2], [0, 1, 1, 1, 0], 3)
        assert cm.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 0]]

    def test_total_preserved(self):
        rng = np.random.default_rng(0)
        y_true = rng.integers(0, 5, 333)
        y_pred = rng.integers(0, 5, 333)
        assert metrics.confusion_matrix(y_true, y_pred, 5).sum() == 333

    def test_empty_rejected(self):
        with pytest.raises(metrics.EvalError):
            metrics.confusion_matrix([], [], 3)


class TestMacroMetrics:
    def test_perfect_predictions(self):
        y = np.arange(4).repeat(10)
        m = metrics.metrics_from_confusion(metrics.confusion_matrix(y, y, 4))
        assert m.accuracy == m.precision == m.recall == m.f1 == 1.0

    def test_hand_computed_binary_case(self):
        # true: 6 of class 0, 4 of class 1; predictions miss one each way
        y_true = [0] * 6 + [1] * 4
        y_pred = [0] * 5 + [1] + [1] * 3 + [0]
        cm = metrics.confusion_matrix(y_true, y_pred, 2)
        m = metrics.metrics_from_confusion(cm)
        assert m.accuracy == pytest.approx(0.8, abs=1e-15)
        assert m.precision == pytest.approx((5 / 6 + 3 / 4) / 2, abs=1e-15)
        assert m.recall == pytest.approx((5 / 6 + 3 / 4) / 2, abs=1e-15)

    def test_never_predicted_class_contributes_zero(self):
        y_true = [0, 1, 2]
        y_pred = [0, 1, 0]  # class 2 never predicted
        m = metrics.metrics_from_confusion(metrics.confusion_matrix(y_true, y_pred, 3))
        assert m.precision == pytest.approx((1 / 2 + 1 + 0) / 3, abs=1e-15)

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            q = int(rng.integers(2, 11))
            n = int(rng.integers(1, 500))
            y_true = rng.integers(0, q, n)
            y_pred = rng.integers(0, q, n)
            m = metrics.metrics_from_confusion(metrics.confusion_matrix(y_true, y_pred, q))
            acc, prec, rec, f1 = brute_force_metrics(y_true.tolist(), y_pred.tolist(), q)
            assert m.accuracy == pytest.approx(acc, abs=1e-12)
            assert m.precision == pytest.approx(prec, abs=1e-12)
            assert m.recall == pytest.approx(rec, abs=1e-12)
            assert m.f1 == pytest.approx(f1, abs=1e-12)


class TestEvaluate:
    def test_tie_breaks_to_lowest_class(self):
        params = nn.ModelParameters([np.zeros((3, 2))], [np.zeros(3)], ["softmax"])
        cm = metrics.evaluate(params, np.ones((4, 2)), np.array([0, 1, 2, 0]))
        assert cm[:, 0].sum() == 4  # every prediction is class 0

    def test_known_linear_separator(self):
        W = np.array([[1.0, 0.0], [0.0, 1.0]]) * 10
        params = nn.ModelParameters([W], [np.zeros(2)], ["softmax"])
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        cm = metrics.evaluate(params, X, np.array([0, 1, 0]))
        assert np.trace(cm) == 3


def one_trial_report(seed, acc):
    m = metrics.Metrics(acc, acc, acc, acc)
    return metrics.MetricsReport(
        scenario="balanced_standard",
        task="multiclass",
        trials=1,
        rows={"global": m, "client_1": m},
        per_trial=[{"global": m.as_dict(), "client_1": m.as_dict()}],
    )


class TestReports:
    def test_aggregate_means_cells(self):
        out = metrics.aggregate_trials([one_trial_report(0, 0.5), one_trial_report(1, 1.0)])
        assert out.trials == 2
        assert out.rows["global"].accuracy == pytest.approx(0.75, abs=1e-15)
        assert len(out.per_trial) == 2

    def test_fixed_order_aggregation_reproducible(self):
        reports = [one_trial_report(i, 0.1 * i) for i in range(5)]
        a = metrics.aggregate_trials(reports)
        b = metrics.aggregate_trials([one_trial_report(i, 0.1 * i) for i in range(5)])
        assert a.rows["global"].as_dict() == b.rows["global"].as_dict()

    def test_mixed_scenarios_rejected(self):
        r1 = one_trial_report(0, 0.5)
        r2 = one_trial_report(0, 0.5)
        r2.scenario = "imbalanced_weighted"
        with pytest.raises(metrics.EvalError):
            metrics.aggregate_trials([r1, r2])

    def test_json_round_trip_byte_identical(self):
        report = metrics.aggregate_trials([one_trial_report(0, 0.123456789)])
        text = metrics.report_to_json(report)
        back = metrics.report_from_json(text)
        assert metrics.report_to_json(back) == text

    def test_render_table_mentions_averaging_mode(self):
        table = metrics.render_table(one_trial_report(0, 0.5))
        assert "macro" in table
        assert "Global" in table and "Client 1" in table
        assert "50.00%" in table
