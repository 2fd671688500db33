import csv
import json

import numpy as np
import pytest

from zsmil.errors import EmptyClass, EmptyList, ShapeMismatch
from zsmil.metrics import (
    ConfusionMatrix,
    attention_for_export,
    balanced_accuracy,
    export_attention,
    render_table,
    summarize,
)


def brute_force_balanced_accuracy(counts):
    recalls = []
    for c in range(len(counts)):
        row_total = sum(counts[c])
        recalls.append(counts[c][c] / row_total)
    return sum(recalls) / len(recalls)


class TestBalancedAccuracy:
    def test_diagonal_is_perfect(self):
        assert balanced_accuracy(ConfusionMatrix(np.diag([7, 3, 11]))) == 1.0

    def test_hand_computation(self):
        cm = ConfusionMatrix(np.array([[8, 2], [5, 5]]))
        assert balanced_accuracy(cm) == pytest.approx(0.65, abs=1e-15)

    def test_constant_predictor_is_chance(self):
        cm = ConfusionMatrix(np.array([[10, 0, 0], [10, 0, 0], [10, 0, 0]]))
        assert balanced_accuracy(cm) == pytest.approx(1.0 / 3.0, rel=1e-15)

    def test_empty_class_rejected(self):
        with pytest.raises(EmptyClass):
            balanced_accuracy(ConfusionMatrix(np.array([[3, 1], [0, 0]])))

    def test_row_scaling_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = int(rng.integers(2, 5))
            counts = rng.integers(0, 20, size=(s, s))
            counts += np.eye(s, dtype=np.int64)  # keep every class populated
            base = balanced_accuracy(ConfusionMatrix(counts.copy()))
            scaled = counts.copy()
            row = int(rng.integers(0, s))
            scaled[row] *= int(rng.integers(2, 9))
            assert balanced_accuracy(ConfusionMatrix(scaled)) == pytest.approx(
                base, rel=1e-12)

    def test_equals_plain_accuracy_on_uniform_split(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            s = int(rng.integers(2, 5))
            n_per_class = 12
            counts = np.zeros((s, s), dtype=np.int64)
            for c in range(s):
                preds = rng.integers(0, s, size=n_per_class)
                for p in preds:
                    counts[c, p] += 1
            plain = counts.trace() / counts.sum()
            assert balanced_accuracy(ConfusionMatrix(counts)) == pytest.approx(
                plain, rel=1e-12)

    def test_matches_brute_force_on_random_matrices(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            s = int(rng.integers(2, 6))
            counts = rng.integers(0, 30, size=(s, s)) + np.eye(s, dtype=np.int64)
            cm = ConfusionMatrix(counts)
            assert balanced_accuracy(cm) == pytest.approx(
                brute_force_balanced_accuracy(counts.tolist()), rel=1e-12)

    def test_negative_counts_rejected(self):
        with pytest.raises(ShapeMismatch):
            ConfusionMatrix(np.array([[1, -1], [0, 2]]))


class TestSummarize:
    def test_constant_values(self):
        assert summarize([1.0, 1.0, 1.0]) == (1.0, 0.0, False)

    def test_two_values(self):
        mean, std, flag = summarize([0.0, 1.0])
        assert mean == 0.5
        assert std == pytest.approx(0.7071067811865476, rel=1e-12)  # sqrt(1/2)
        assert flag is False

    def test_single_value_flagged(self):
        assert summarize([0.3]) == (0.3, 0.0, True)

    def test_empty_rejected(self):
        with pytest.raises(EmptyList):
            summarize([])


class TestRenderTable:
    def _report(self):
        return {
            "k_values": [4, 16],
            "zero_shot": {"balanced_accuracy": 0.753333},
            "arms": [
                {"name": "zeroshot", "k": 4, "mean": 0.7401, "std": 0.0224,
                 "std_degenerate": False},
                {"name": "zeroshot", "k": 16, "mean": 0.75, "std": 0.0,
                 "std_degenerate": False},
            ],
        }

    def test_cells_match_full_precision_to_printed_digits(self):
        report = self._report()
        text = render_table(report)
        for arm in report["arms"]:
            cell = f"{100 * arm['mean']:.2f}±{100 * arm['std']:.2f}"
            assert cell in text
        assert f"{100 * report['zero_shot']['balanced_accuracy']:.2f}" in text

    def test_rows_and_columns(self):
        text = render_table(self._report())
        lines = text.splitlines()
        assert "k=4" in lines[0] and "k=16" in lines[0]
        assert lines[2].startswith("zero-shot")
        assert lines[3].startswith("zeroshot")


class TestAttentionExport:
    def test_bgap_uniform(self):
        bag = np.ones((4, 3))
        weights, note = attention_for_export("bgap", bag, None)
        np.testing.assert_allclose(weights, 0.25, atol=1e-15)
        assert "uniform" in note

    def test_abmil_uniform_at_zero_scores(self):
        from zsmil.aggregators import AggregatorKind, forward, init_params

        rng = np.random.default_rng(1)
        bag = rng.standard_normal((5, 8))
        params = init_params(AggregatorKind.ABMIL, 8, 4, seed=0)  # w = 0
        _, _, attn = forward(AggregatorKind.ABMIL, params, bag)
        weights, _ = attention_for_export("abmil", bag, attn)
        np.testing.assert_allclose(weights, 0.2, atol=1e-12)

    def test_bgmp_argmax_frequency(self):
        bag = np.array([[5.0, 0.0, 1.0],
                        [0.0, 7.0, 2.0],
                        [1.0, 1.0, 0.0]])
        weights, note = attention_for_export("bgmp", bag, None)
        # column argmaxes: rows 0, 1, 1 -> hits [1, 2, 0] over 3 columns
        np.testing.assert_allclose(weights, [1 / 3, 2 / 3, 0.0], atol=1e-15)
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert "surrogate" in note

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        bag = rng.standard_normal((6, 4))
        attn = rng.dirichlet(np.ones(6))
        path = tmp_path / "attn.csv"
        sidecar = export_attention("abmil", bag, attn, "slide_x", path)
        assert sidecar["slide_id"] == "slide_x"
        assert (tmp_path / "attn.csv.json").is_file()
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["patch_index", "attention_weight"]
        parsed = np.array([float(v) for _, v in rows[1:]])
        np.testing.assert_allclose(parsed, attn, atol=1e-9)

    def test_rejects_unnormalized(self, tmp_path):
        bag = np.ones((3, 2))
        with pytest.raises(ShapeMismatch):
            export_attention("abmil", bag, np.array([0.5, 0.2, 0.1]),
                             "s", tmp_path / "x.csv")
