import numpy as np
import pytest

from helpers import random_unit_rows
from zsmil.aggregators import AggregatorKind, forward
from zsmil.errors import DimMismatch, EmptyBag
from zsmil.head import HeadParams, head_forward
from zsmil.prototypes import PrototypeSet
from zsmil.zeroshot import zero_shot_predict, zero_shot_scores, zero_shot_scores_with_stats


def make_protos(rng, n_classes=2, d=8):
    return PrototypeSet([f"c{i}" for i in range(n_classes)],
                        random_unit_rows(rng, n_classes, d))


class TestScores:
    def test_single_patch_equal_to_prototype(self):
        protos = PrototypeSet(["a", "b"], np.eye(2))
        scores = zero_shot_scores(np.array([[1.0, 0.0]]), protos)
        np.testing.assert_allclose(scores, [1.0, 0.0], atol=1e-15)

    def test_opposite_patches_cancel(self):
        protos = PrototypeSet(["a", "b"], np.eye(2))
        bag = np.array([[1.0, 0.0], [-1.0, 0.0]])
        scores = zero_shot_scores(bag, protos)
        assert scores[0] == pytest.approx(0.0, abs=1e-15)

    def test_matches_brute_force_loop(self):
        # independent O(N*S*d) oracle: explicit double loop over cosines
        rng = np.random.default_rng(17)
        bag = random_unit_rows(rng, 3, 8)
        protos = make_protos(rng, 2, 8)
        expected = np.zeros(2)
        for c in range(2):
            for n in range(3):
                x = bag[n] / np.linalg.norm(bag[n])
                expected[c] += float(np.dot(x, protos.weights[c])) / 3
        np.testing.assert_allclose(zero_shot_scores(bag, protos), expected, atol=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(23)
        bag = random_unit_rows(rng, 6, 8)
        protos = make_protos(rng, 3, 8)
        base = zero_shot_scores(bag, protos)
        for scale in (1.0000001, 0.5, 42.0, 1e-3):
            np.testing.assert_allclose(zero_shot_scores(bag * scale, protos), base,
                                       atol=1e-9)

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            bag = rng.standard_normal((rng.integers(1, 10), 8))
            scores = zero_shot_scores(bag, make_protos(rng, 3, 8))
            assert (np.abs(scores) <= 1.0 + 1e-12).all()

    def test_renormalization_counter(self):
        rng = np.random.default_rng(31)
        bag = random_unit_rows(rng, 4, 8)
        protos = make_protos(rng, 2, 8)
        _, off = zero_shot_scores_with_stats(bag, protos)
        assert off == 0
        bag_scaled = bag.copy()
        bag_scaled[1] *= 3.0
        _, off = zero_shot_scores_with_stats(bag_scaled, protos)
        assert off == 1

    def test_errors(self):
        rng = np.random.default_rng(37)
        protos = make_protos(rng, 2, 8)
        with pytest.raises(EmptyBag):
            zero_shot_scores(np.zeros((0, 8)), protos)
        with pytest.raises(DimMismatch):
            zero_shot_scores(np.ones((2, 4)), protos)


class TestPredict:
    def test_dataset_level(self, small_dataset):
        result = zero_shot_predict(small_dataset["entries"], small_dataset["protos"])
        assert 0.0 <= result["balanced_accuracy"] <= 1.0
        assert len(result["per_bag"]) == sum(
            1 for e in small_dataset["entries"] if e.split == "test")

    def test_missing_split(self, small_dataset):
        entries = [e for e in small_dataset["entries"] if e.split != "val"]
        with pytest.raises(EmptyBag):
            zero_shot_predict(entries, small_dataset["protos"], "val")


class TestArgmaxEquivalenceWithInitializedHead:
    def test_bgap_head_ordering_matches(self, small_dataset):
        # a zero-shot-initialized cosine head over mean pooling must rank
        # classes exactly like the mean patch-similarity scores
        from zsmil.dataio import load_bag

        protos = small_dataset["protos"]
        head = HeadParams(protos.weights.copy())
        checked = 0
        for entry in small_dataset["entries"]:
            bag = load_bag(entry)
            scores = zero_shot_scores(bag, protos)
            top2 = np.sort(scores)[-2:]
            if top2[1] - top2[0] <= 1e-9:
                continue
            z, _, _ = forward(AggregatorKind.BGAP, None, bag)
            probs, _, _ = head_forward(head, z)
            assert int(np.argmax(probs)) == int(np.argmax(scores))
            checked += 1
        assert checked > 0
