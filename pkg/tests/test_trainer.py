import json

import numpy as np
import pytest

from zsmil.aggregators import AggregatorKind
from zsmil.dataio import SyntheticSpec, generate_synthetic
from zsmil.errors import InsufficientBags, NonFiniteLoss
from zsmil.head import InitStrategy
from zsmil.trainer import (
    EpisodeSpec,
    TrainConfig,
    evaluate,
    run_protocol,
    sample_episode,
    train,
)


def fast_config(**overrides):
    base = dict(aggregator=AggregatorKind.BGAP, init=InitStrategy.ZERO_SHOT,
                epochs=15, patience=5)
    base.update(overrides)
    return TrainConfig(**base)


class TestSampleEpisode:
    def test_pool_of_exactly_k_returns_everything(self, tmp_path):
        spec = SyntheticSpec(seed=2, bags_per_class={"train_pool": 4, "val": 2,
                                                     "test": 1},
                             patches_per_bag=(4, 8), class_ratios=[1.0, 1.0])
        entries, _ = generate_synthetic(spec, tmp_path)
        pool_ids = sorted(e.slide_id for e in entries if e.split == "train_pool")
        for seed in (0, 99):
            support, _ = sample_episode(entries, EpisodeSpec(4, 0, seed))
            assert sorted(e.slide_id for e in support) == pool_ids

    def test_deterministic_in_seed_and_repeat(self, small_dataset):
        entries = small_dataset["entries"]
        a, _ = sample_episode(entries, EpisodeSpec(3, 2, 17))
        b, _ = sample_episode(entries, EpisodeSpec(3, 2, 17))
        c, _ = sample_episode(entries, EpisodeSpec(3, 3, 17))
        assert [e.slide_id for e in a] == [e.slide_id for e in b]
        assert [e.slide_id for e in a] != [e.slide_id for e in c]

    def test_five_repeats_vary(self, default_dataset):
        supports = set()
        for repeat in range(5):
            support, _ = sample_episode(default_dataset["entries"],
                                        EpisodeSpec(4, repeat, 42))
            supports.add(tuple(sorted(e.slide_id for e in support)))
        assert len(supports) >= 2

    def test_insufficient_bags(self, small_dataset):
        with pytest.raises(InsufficientBags):
            sample_episode(small_dataset["entries"], EpisodeSpec(100, 0, 1))

    def test_val_split_used_when_present(self, small_dataset):
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(3, 0, 1))
        assert all(e.split == "val" for e in val)
        assert all(e.split == "train_pool" for e in support)

    def test_val_carved_when_absent(self, tmp_path):
        spec = SyntheticSpec(seed=6, bags_per_class={"train_pool": 10, "test": 2},
                             patches_per_bag=(4, 8), dim=8)
        entries, _ = generate_synthetic(spec, tmp_path)
        assert not any(e.split == "val" for e in entries)
        support0, val0 = sample_episode(entries, EpisodeSpec(3, 0, 5))
        support1, val1 = sample_episode(entries, EpisodeSpec(3, 1, 5))
        # carve is fixed across repeats and disjoint from every support
        assert [e.slide_id for e in val0] == [e.slide_id for e in val1]
        assert not set(e.slide_id for e in val0) & set(e.slide_id for e in support0)
        assert not set(e.slide_id for e in val1) & set(e.slide_id for e in support1)
        per_class = {c: sum(1 for e in val0 if e.label == c) for c in (0, 1)}
        assert all(v >= 1 for v in per_class.values())


class TestTrain:
    def test_loss_decreases_on_separable_pair(self, tmp_path):
        spec = SyntheticSpec(seed=8, dim=16, noise_sigma=0.1, evidence_fraction=1.0,
                             prototype_noise=0.1,
                             bags_per_class={"train_pool": 1, "val": 1, "test": 1},
                             patches_per_bag=(4, 8), class_ratios=[1.0, 1.0])
        entries, protos = generate_synthetic(spec, tmp_path)
        support = [e for e in entries if e.split == "train_pool"]
        val = [e for e in entries if e.split == "val"]
        model = train(support, val, fast_config(), protos)
        assert model.train_loss[-1] < model.train_loss[0]

    def test_single_epoch_single_step(self, small_dataset):
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(2, 0, 3))
        model = train(support, val, fast_config(epochs=1), small_dataset["protos"])
        assert len(model.train_loss) == 1
        assert len(model.val_metric) == 1
        assert model.best_epoch == 1

    def test_invalid_epochs_rejected(self, small_dataset):
        from zsmil.errors import ShapeMismatch

        with pytest.raises(ShapeMismatch):
            fast_config(epochs=0).validate()

    def test_best_epoch_metric_is_trace_max(self, small_dataset):
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(4, 1, 9))
        config = fast_config(aggregator=AggregatorKind.ABMIL, hidden=8, epochs=25,
                             patience=6, agg_seed=3)
        model = train(support, val, config, small_dataset["protos"])
        assert model.val_metric[model.best_epoch - 1] == max(model.val_metric)

    def test_early_stopping_respects_patience(self, small_dataset):
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(4, 1, 9))
        config = fast_config(epochs=200, patience=3)
        model = train(support, val, config, small_dataset["protos"])
        assert len(model.train_loss) < 200
        assert len(model.train_loss) - model.best_epoch >= 3

    def test_sgd_tiny_lr_keeps_params_at_init(self, small_dataset):
        protos = small_dataset["protos"]
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(2, 0, 3))
        for optimizer in ("sgd", "adam"):
            config = fast_config(optimizer=optimizer, lr=1e-15, epochs=1)
            model = train(support, val, config, protos)
            assert np.abs(model.head.weights - protos.weights).max() <= 1e-12

    def test_loss_finite_for_wild_params(self, small_dataset):
        # stable log keeps the loss finite even with an extreme temperature
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(2, 0, 3))
        config = fast_config(epochs=2, tau=1e-4, init=InitStrategy.KAIMING_NORMAL,
                             head_seed=1)
        model = train(support, val, config, small_dataset["protos"])
        assert np.isfinite(model.train_loss).all()

    def test_non_finite_loss_diagnoses_bag(self, small_dataset):
        protos = small_dataset["protos"]
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(2, 0, 3))
        loaded = [(sid, label, bag) for sid, label, bag in
                  (s for s in map(lambda e: (e.slide_id, e.label,
                                             np.zeros((3, protos.dim))), support))]
        with pytest.raises(NonFiniteLoss) as err:
            train(loaded, [], fast_config(epochs=1), protos)
        assert loaded[0][0] in str(err.value)

    def test_deterministic_given_seeds(self, small_dataset):
        from zsmil.modelio import model_to_bytes

        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(3, 0, 7))
        config = fast_config(aggregator=AggregatorKind.ABMIL, hidden=8, epochs=10,
                             init=InitStrategy.XAVIER_UNIFORM,
                             head_seed=[1, 2], agg_seed=[3, 4])
        blobs = []
        for _ in range(2):
            model = train(support, val, config, small_dataset["protos"])
            payload, meta = model_to_bytes(model)
            blobs.append((payload, json.dumps(meta, sort_keys=True)))
        assert blobs[0] == blobs[1]

    def test_monotone_loss_under_plain_gradient_descent(self, tmp_path):
        # separable episodes, lr 0.01: ten full-batch steps never increase the loss
        for seed in (1, 2, 3):
            spec = SyntheticSpec(seed=seed, dim=16, noise_sigma=0.05,
                                 evidence_fraction=1.0, prototype_noise=0.0,
                                 bags_per_class={"train_pool": 3, "val": 1, "test": 1},
                                 patches_per_bag=(4, 8), class_ratios=[1.0, 1.0])
            entries, protos = generate_synthetic(spec, tmp_path / str(seed))
            support = [e for e in entries if e.split == "train_pool"]
            val = [e for e in entries if e.split == "val"]
            config = fast_config(optimizer="sgd", lr=0.01, epochs=10, patience=10)
            model = train(support, val, config, protos)
            diffs = np.diff(model.train_loss)
            assert (diffs <= 1e-9).all()

    def test_freeze_head_keeps_weights(self, small_dataset):
        protos = small_dataset["protos"]
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(3, 0, 7))
        config = fast_config(aggregator=AggregatorKind.ABMIL, hidden=8,
                             freeze_head=True, epochs=5, agg_seed=1)
        model = train(support, val, config, protos)
        np.testing.assert_array_equal(model.head.weights, protos.weights)

    def test_learnable_tau_moves(self, small_dataset):
        support, val = sample_episode(small_dataset["entries"], EpisodeSpec(3, 0, 7))
        config = fast_config(learn_tau=True, epochs=5)
        model = train(support, val, config, small_dataset["protos"])
        assert model.head.tau != pytest.approx(0.07, abs=0)
        assert model.head.tau > 0


class TestEvaluate:
    def test_constant_predictor_scores_chance(self, small_dataset):
        from zsmil.head import HeadParams
        from zsmil.trainer import TrainedModel

        protos = small_dataset["protos"]
        w = np.tile(protos.weights[0], (protos.n_classes, 1))  # identical rows
        model = TrainedModel(
            aggregator=AggregatorKind.BGAP, agg_params=None,
            head=HeadParams(w), class_names=protos.class_names,
            train_loss=[], val_metric=[], best_epoch=0, config={}, episode={})
        test = [e for e in small_dataset["entries"] if e.split == "test"]
        result = evaluate(model, test)
        assert result["balanced_accuracy"] == pytest.approx(1.0 / protos.n_classes)


class TestRunProtocol:
    def test_single_repeat_flags_degenerate_std(self, small_dataset):
        report = run_protocol(small_dataset["entries"], small_dataset["protos"],
                              fast_config(epochs=3), [2], repeats=1, base_seed=1)
        arm = report["arms"][0]
        assert arm["std"] == 0.0 and arm["std_degenerate"] is True

    def test_zero_shot_row_present(self, small_dataset):
        report = run_protocol(small_dataset["entries"], small_dataset["protos"],
                              fast_config(epochs=2), [2], repeats=1, base_seed=1)
        assert 0.0 <= report["zero_shot"]["balanced_accuracy"] <= 1.0

    def test_protocol_fully_deterministic(self, small_dataset):
        reports = [run_protocol(small_dataset["entries"], small_dataset["protos"],
                                fast_config(aggregator=AggregatorKind.ABMIL,
                                            hidden=8, epochs=4),
                                [2, 3], repeats=2, base_seed=5)
                   for _ in range(2)]
        assert json.dumps(reports[0], sort_keys=True) == json.dumps(
            reports[1], sort_keys=True)

    def test_jobs_do_not_change_results(self, small_dataset):
        kwargs = dict(k_list=[2], repeats=2, base_seed=9)
        serial = run_protocol(small_dataset["entries"], small_dataset["protos"],
                              fast_config(epochs=3), jobs=1, **kwargs)
        parallel = run_protocol(small_dataset["entries"], small_dataset["protos"],
                                fast_config(epochs=3), jobs=2, **kwargs)
        assert json.dumps(serial, sort_keys=True) == json.dumps(
            parallel, sort_keys=True)

    def test_arms_share_episodes_and_aggregator_init(self, small_dataset):
        arms = [{"name": "a", "overrides": {"init": InitStrategy.ZERO_SHOT}},
                {"name": "b", "overrides": {"init": InitStrategy.XAVIER_UNIFORM}}]
        report, models = run_protocol(
            small_dataset["entries"], small_dataset["protos"],
            fast_config(aggregator=AggregatorKind.ABMIL, hidden=8, epochs=2),
            [2], repeats=1, base_seed=3, arms=arms, keep_models=True)
        episodes = [m.episode["support"] for _, _, _, m in models]
        assert episodes[0] == episodes[1]
