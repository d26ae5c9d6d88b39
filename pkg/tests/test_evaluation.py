import numpy as np
import pytest


from saam.evaluation import (
    attribution_accuracy,
    classification_metrics,
    cohen_kappa,
    regression_metrics,
    render_report,
    report_to_dict,
)


def onehot(c, n=5):
    v = np.zeros(n)
    v[c] = 1.0
    return v


class TestClassificationMetrics:
    def test_all_correct(self):
        preds = [[onehot(2), onehot(4)], [onehot(0), onehot(1)]]
        golds = [[3.0, 5.0], [1.0, 2.0]]
        report = classification_metrics(preds, golds, ["overall", "Value"])
        assert report.targets["overall"] == {"accuracy": 1.0, "mse": 0.0}
        assert report.targets["Value"] == {"accuracy": 1.0, "mse": 0.0}

    def test_constant_three_for_gold_five(self):
        preds = [[onehot(2)] for _ in range(4)]
        golds = [[5.0]] * 4
        report = classification_metrics(preds, golds, ["overall"])
        assert report.targets["overall"] == {"accuracy": 0.0, "mse": 4.0}

    def test_hand_arithmetic(self):
        preds = [[onehot(1)], [onehot(4)]]
        golds = [[1.0], [5.0]]
        report = classification_metrics(preds, golds, ["overall"])
        assert report.targets["overall"]["accuracy"] == 0.5
        assert report.targets["overall"]["mse"] == 0.5

    def test_avg_excludes_overall(self):
        preds = [[onehot(0), onehot(0), onehot(2)]]
        golds = [[1.0, 1.0, 1.0]]
        report = classification_metrics(preds, golds, ["overall", "A", "B"])
        assert report.aspect_avg["accuracy"] == 0.5  # overall's perfect hit not counted
        assert report.aspect_avg["mse"] == 2.0

    def test_mse_zero_iff_accuracy_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            preds = [[onehot(rng.integers(5))] for _ in range(6)]
            golds = [[float(rng.integers(1, 6))] for _ in range(6)]
            r = classification_metrics(preds, golds, ["overall"])
            assert (r.targets["overall"]["mse"] == 0.0) == (r.targets["overall"]["accuracy"] == 1.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            classification_metrics([[onehot(0)]], [], ["overall"])


class TestRegressionMetrics:
    def test_perfect(self):
        report = regression_metrics([[1.0, 2.0]] * 3, [[1.0, 2.0]] * 3, ["overall", "A"])
        assert report.targets["A"]["mse"] == 0.0
        # gold variance is zero here, so r2 is undefined
        assert report.targets["A"]["r2"] is None

    def test_gold_mean_predictor_r2_zero(self):
        golds = [[1.0], [2.0], [3.0]]
        preds = [[2.0]] * 3
        report = regression_metrics(preds, golds, ["overall"])
        assert report.targets["overall"]["r2"] == 0.0

    def test_hand_arithmetic(self):
        golds = [[1.0], [2.0], [3.0]]
        preds = [[1.0], [2.0], [4.0]]
        report = regression_metrics(preds, golds, ["overall"])
        assert report.targets["overall"]["mse"] == pytest.approx(1 / 3)
        assert report.targets["overall"]["r2"] == pytest.approx(0.5)

    def test_r2_never_exceeds_one(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            golds = [[float(v)] for v in rng.uniform(1, 5, size=6)]
            preds = [[float(v)] for v in rng.uniform(1, 5, size=6)]
            r = regression_metrics(preds, golds, ["overall"])
            assert r.targets["overall"]["r2"] <= 1.0

    def test_zero_variance_marker(self):
        report = regression_metrics([[1.0], [2.0]], [[3.0], [3.0]], ["overall"])
        assert report.targets["overall"]["r2"] is None


class TestAttributionAccuracy:
    def test_all_match(self):
        assert attribution_accuracy(["Room", "none"], ["Room", "none"]) == 1.0

    def test_none_matches_other_slot(self):
        assert attribution_accuracy(["none"], ["none"]) == 1.0

    def test_two_of_three(self):
        got = attribution_accuracy(["Room", "Service", "Room"],
                                   ["Room", "Service", "Service"])
        assert got == pytest.approx(2 / 3)

    def test_unlabeled_excluded(self):
        got = attribution_accuracy(["Room", "Service"], ["unlabeled", "Service"])
        assert got == 1.0

    def test_order_permutation_invariant(self):
        preds = ["Room", "Service", "none", "Room"]
        golds = ["Room", "none", "none", "Service"]
        base = attribution_accuracy(preds, golds)
        rng = np.random.default_rng(2)
        for _ in range(10):
            order = rng.permutation(4)
            assert attribution_accuracy([preds[i] for i in order],
                                        [golds[i] for i in order]) == base

    def test_no_labeled_sentences(self):
        with pytest.raises(ValueError):
            attribution_accuracy(["Room"], ["unlabeled"])


class TestCohenKappa:
    def test_identical_labelings(self):
        assert cohen_kappa(["x", "y", "x"], ["x", "y", "x"]) == 1.0

    def test_independent_uniform_near_zero(self):
        rng = np.random.default_rng(3)
        a = [("x" if v else "y") for v in rng.integers(0, 2, size=4000)]
        b = [("x" if v else "y") for v in rng.integers(0, 2, size=4000)]
        assert abs(cohen_kappa(a, b)) < 0.05

    def test_hand_case_zero(self):
        # p_o = 0.5, p_e = 0.5 -> kappa = 0
        assert cohen_kappa(["x", "x", "y", "y"], ["x", "y", "x", "y"]) == pytest.approx(0.0)

    def test_both_constant_identical(self):
        assert cohen_kappa(["x", "x"], ["x", "x"]) == 1.0

    def test_both_constant_different(self):
        # p_e = 0 here, so the formula gives plain observed agreement: 0
        assert cohen_kappa(["x", "x"], ["y", "y"]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cohen_kappa(["x"], ["x", "y"])


class TestRendering:
    def test_text_and_dict_agree_to_six_places(self):
        golds = [[1.0], [2.0], [3.0]]
        preds = [[1.1], [2.2], [2.9]]
        report = regression_metrics(preds, golds, ["overall"])
        d = report_to_dict(report)
        text = render_report(report)
        assert f"{d['targets']['overall']['mse']:.6f}" in text
        assert f"{d['targets']['overall']['r2']:.6f}" in text

    def test_undefined_marker_rendered(self):
        report = regression_metrics([[1.0], [2.0]], [[3.0], [3.0]], ["overall"])
        assert "undefined" in render_report(report)
        assert report_to_dict(report)["targets"]["overall"]["r2"] is None
