import numpy as np
import pytest

from conftest import small_corpus
from modegan import losses, models, nn, optim, train
from modegan.corpus import assign_folds
from modegan.nn import Tensor
from modegan.train import (LossTrace, TrainConfig, cross_validate,
                           evaluate, mask_labels, metrics_from_predictions,
                           train_cnn, train_sgan)


def quick_config(**overrides):
    base = dict(model="A", epochs=1, batch_size=16, seed=5)
    base.update(overrides)
    return TrainConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(label_fraction=0.0)
        with pytest.raises(ValueError):
            TrainConfig(model="Z")
        with pytest.raises(ValueError):
            TrainConfig(smoothing_target=1.5)

    def test_round_trip_and_digest(self):
        cfg = quick_config(label_fraction=0.25)
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.digest() == cfg.digest()
        assert quick_config(seed=6).digest() != cfg.digest()

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"learning_rate": 0.1})


class TestMasking:
    def test_exact_count_and_determinism(self):
        labels = np.arange(100) % 4
        rng = np.random.default_rng(0)
        masked = mask_labels(labels, 0.2, rng)
        assert (masked >= 0).sum() == 20
        np.testing.assert_array_equal(
            masked, mask_labels(labels, 0.2, np.random.default_rng(0))
        )
        kept = masked[masked >= 0]
        idx = np.flatnonzero(masked >= 0)
        np.testing.assert_array_equal(kept, labels[idx])

    def test_rounding(self):
        labels = np.zeros(7, dtype=np.int64)
        masked = mask_labels(labels, 0.5, np.random.default_rng(1))
        assert (masked >= 0).sum() == 4  # round(3.5)

    def test_unlabeled_rows_never_gain_labels(self):
        labels = np.array([0, -1, 1, -1, 2])
        masked = mask_labels(labels, 1.0, np.random.default_rng(2))
        assert (masked[labels < 0] == -1).all()


class TestLossTrace:
    def test_total_is_bitwise_sum(self):
        trace = LossTrace()
        rng = np.random.default_rng(3)
        for step in range(50):
            trace.append(step, float(rng.normal()), float(rng.normal()),
                         float(rng.normal()))
        lines = trace.to_csv().strip().split("\n")
        assert lines[0] == "step,supervised,unsupervised,total,generator"
        for line in lines[1:]:
            _, sup, unsup, total, _ = line.split(",")
            assert float(sup) + float(unsup) == float(total)

    def test_steps_monotone(self):
        trace = LossTrace()
        trace.append(0, 1.0, 2.0, 3.0)
        trace.append(1, 1.0, 2.0, 3.0)
        assert trace.steps == sorted(trace.steps)


class TestEvaluate:
    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 3, 0, 1])
        m = metrics_from_predictions(y, y.copy(), "A", 0)
        assert m.accuracy == 1.0
        cm = np.asarray(m.confusion)
        assert np.trace(cm) == 6
        assert m.precision == [1.0, 1.0, 1.0, 1.0]
        assert m.recall == [1.0, 1.0, 1.0, 1.0]

    def test_constant_car_on_imbalanced_labels(self):
        counts = {0: 3845, 1: 8515, 2: 7415, 3: 15275}
        y_true = np.concatenate([np.full(n, c) for c, n in counts.items()])
        y_pred = np.full(y_true.shape, 3)
        m = metrics_from_predictions(y_true, y_pred, "A", 0)
        assert m.accuracy == pytest.approx(15275 / 35050, abs=1e-12)
        assert m.accuracy == pytest.approx(0.436, abs=1e-3)

    def test_confusion_row_sums_are_support(self):
        rng = np.random.default_rng(4)
        y_true = rng.integers(0, 4, 200)
        y_pred = rng.integers(0, 4, 200)
        m = metrics_from_predictions(y_true, y_pred, "A", 0)
        cm = np.asarray(m.confusion)
        for c in range(4):
            assert cm[c].sum() == (y_true == c).sum()
        assert cm.sum() == m.support == 200

    def test_empty_fold_errors(self):
        spec = models.build_model("A")
        net = models.build_networks(spec, seed=0)["classifier"]
        with pytest.raises(ValueError):
            evaluate(net, np.zeros((3, 70, 5), dtype=np.float32),
                     np.array([-1, -1, -1]), "A", 0)

    def test_trip_majority_vote(self):
        spec = models.build_model("A")
        net = models.build_networks(spec, seed=0)["classifier"]
        x = np.zeros((4, 70, 5), dtype=np.float32)
        y = np.array([2, 2, 1, 1])
        seg_level = evaluate(net, x, y, "A", 0)
        trip_level = evaluate(net, x, y, "A", 0,
                              trips=["a", "a", "b", "b"], per_trip=True)
        assert trip_level.support == 2
        assert seg_level.support == 4


class TestTrainCnn:
    def test_deterministic_reruns(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        cfg = quick_config(epochs=2, k_folds=4)
        a = train_cnn(cfg, tiny_bundle, folds, 0)
        b = train_cnn(cfg, tiny_bundle, folds, 0)
        assert a.trace.to_csv() == b.trace.to_csv()
        assert a.metrics.to_json() == b.metrics.to_json()
        for p, q in zip(a.networks["classifier"].params(),
                        b.networks["classifier"].params()):
            np.testing.assert_array_equal(p.data, q.data)

    def test_label_fraction_masks_training_only(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        cfg = quick_config(epochs=1, k_folds=4, label_fraction=0.5)
        result = train_cnn(cfg, tiny_bundle, folds, 0)
        n_train = len(folds.train_indices(0))
        assert result.metrics.support == len(folds.val_indices(0))
        # reproduce the masking and confirm the count contract
        masked = mask_labels(tiny_bundle.labels[folds.train_indices(0)], 0.5,
                             np.random.default_rng([cfg.seed, 0, 3]))
        assert abs((masked >= 0).sum() - 0.5 * n_train) <= 1

    def test_cnn_rejects_gan_ids(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        with pytest.raises(ValueError):
            train_cnn(quick_config(model="D", k_folds=4), tiny_bundle, folds, 0)

    def test_trace_columns_for_cnn(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        result = train_cnn(quick_config(k_folds=4), tiny_bundle, folds, 0)
        assert all(v == 0.0 for v in result.trace.unsupervised)
        assert all(v == 0.0 for v in result.trace.generator)
        assert result.trace.total == result.trace.supervised


@pytest.fixture(scope="module")
def sgan_result(tiny_bundle):
    folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
    cfg = quick_config(model="D", epochs=1, k_folds=4, label_fraction=0.5)
    return cfg, folds, train_sgan(cfg, tiny_bundle, folds, 0)


class TestTrainSgan:
    def test_trace_decomposition(self, sgan_result):
        _, _, result = sgan_result
        csv = result.trace.to_csv().strip().split("\n")[1:]
        assert len(csv) > 0
        for line in csv:
            _, sup, unsup, total, gen = line.split(",")
            assert float(sup) + float(unsup) == float(total)
            assert np.isfinite(float(gen))

    def test_networks_updated(self, sgan_result):
        cfg, _, result = sgan_result
        fresh = models.build_networks(models.build_model("D"), seed=cfg.seed,
                                      salt=0)
        changed_d = any(
            not np.array_equal(p.data, q.data)
            for p, q in zip(result.networks["discriminator"].params(),
                            fresh["discriminator"].params())
        )
        changed_g = any(
            not np.array_equal(p.data, q.data)
            for p, q in zip(result.networks["generator"].params(),
                            fresh["generator"].params())
        )
        assert changed_d and changed_g

    def test_sgan_rejects_cnn_ids(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        with pytest.raises(ValueError):
            train_sgan(quick_config(model="B", k_folds=4), tiny_bundle, folds, 0)

    def test_feature_matching_mode_runs(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        cfg = quick_config(model="D", epochs=1, k_folds=4,
                           generator_loss_mode="feature_matching")
        result = train_sgan(cfg, tiny_bundle, folds, 0)
        assert all(np.isfinite(v) for v in result.trace.generator)


class TestUpdatePartition:
    def test_steps_touch_only_their_side(self, tiny_bundle):
        """Adam-level partition: checksums of the frozen side are constant."""
        spec = models.build_model("D")
        nets = models.build_networks(spec, seed=0)
        disc, gen = nets["discriminator"], nets["generator"]
        d_state = optim.adam_init(disc.params())
        g_state = optim.adam_init(gen.params())
        rng = np.random.default_rng(0)
        x = tiny_bundle.values[:8].astype(np.float32)
        y = np.clip(tiny_bundle.labels[:8], 0, 3)

        def checksum(net):
            return [p.data.copy() for p in net.params()]

        for _ in range(3):
            g_before = checksum(gen)
            gen.set_trainable(False)
            fake = gen(Tensor(models.sample_noise(rng, 8)), train=True,
                       rng=rng, update_stats=False)
            logits_real = disc(Tensor(x), train=True, rng=rng)
            logits_fake = disc(fake, train=True, rng=rng, update_stats=False)
            loss = nn.add(
                losses.supervised_loss(logits_real, y),
                losses.unsupervised_loss(logits_real, logits_fake,
                                         smoothing_target=0.9),
            )
            loss.backward()
            optim.adam_step(disc.params(),
                            optim.clip_gradients([p.grad for p in disc.params()]),
                            d_state)
            disc.zero_grad()
            gen.set_trainable(True)
            for before, p in zip(g_before, gen.params()):
                np.testing.assert_array_equal(before, p.data)

            d_before = checksum(disc)
            disc.set_trainable(False)
            fake = gen(Tensor(models.sample_noise(rng, 8)), train=True, rng=rng)
            g_loss = losses.generator_loss(
                disc(fake, train=True, rng=rng, update_stats=False))
            g_loss.backward()
            optim.adam_step(gen.params(),
                            optim.clip_gradients([p.grad for p in gen.params()]),
                            g_state)
            gen.zero_grad()
            disc.set_trainable(True)
            for before, p in zip(d_before, disc.params()):
                np.testing.assert_array_equal(before, p.data)


class TestNoLeakage:
    def test_stats_fit_on_training_folds_only(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        tr_idx, va_idx = folds.train_indices(0), folds.val_indices(0)
        stats_train = train.fit_stats_arrays(tiny_bundle.values[tr_idx],
                                             tiny_bundle.valid_lens[tr_idx])
        stats_val = train.fit_stats_arrays(tiny_bundle.values[va_idx],
                                           tiny_bundle.valid_lens[va_idx])
        assert not np.allclose(stats_train.mean, stats_val.mean)
        result = train_cnn(quick_config(k_folds=4), tiny_bundle, folds, 0)
        np.testing.assert_allclose(result.norm_stats.mean, stats_train.mean)
        np.testing.assert_allclose(result.norm_stats.std, stats_train.std)

    def test_array_stats_match_segment_stats(self, tiny_bundle):
        from modegan.corpus import fit_norm_stats

        by_arrays = train.fit_stats_arrays(tiny_bundle.values,
                                           tiny_bundle.valid_lens)
        by_segments = fit_norm_stats(tiny_bundle.to_segments())
        np.testing.assert_allclose(by_arrays.mean, by_segments.mean)
        np.testing.assert_allclose(by_arrays.std, by_segments.std)

    def test_normalize_arrays_keeps_padding_zero(self, tiny_bundle):
        stats = train.fit_stats_arrays(tiny_bundle.values,
                                       tiny_bundle.valid_lens)
        z = train.normalize_arrays(tiny_bundle.values, tiny_bundle.valid_lens,
                                   stats)
        for i in range(len(tiny_bundle)):
            v = int(tiny_bundle.valid_lens[i])
            assert np.all(z[i, v:] == 0.0)


class TestCrossValidate:
    def test_laws(self):
        bundle = small_corpus(seed=9, trips_per_mode=10, duration=150.0)
        cfg = quick_config(epochs=1, k_folds=5, seed=9)
        per_fold, aggregate = cross_validate(cfg, bundle)

        assert len(per_fold) == 5
        assert [m.fold for m in per_fold] == list(range(5))
        # every labeled segment is evaluated exactly once across folds
        assert sum(m.support for m in per_fold) == int(
            (bundle.labels >= 0).sum()
        )
        accs = np.array([m.accuracy for m in per_fold])
        supports = np.array([m.support for m in per_fold], dtype=np.float64)
        want = float((accs * supports).sum() / supports.sum())
        assert aggregate["accuracy_weighted_mean"] == pytest.approx(
            want, abs=1e-12
        )
        assert aggregate["fold_supports"] == [m.support for m in per_fold]

    def test_k_exceeding_trips_errors(self, tiny_bundle):
        cfg = quick_config(epochs=1, k_folds=100)
        with pytest.raises(ValueError):
            cross_validate(cfg, tiny_bundle)


class TestEvalEvery:
    def test_mid_epoch_validation(self, tiny_bundle):
        folds = assign_folds(tiny_bundle.to_segments(), k=4, seed=5)
        cfg = quick_config(epochs=1, k_folds=4, eval_every=2)
        result = train_cnn(cfg, tiny_bundle, folds, 0)
        assert 0.0 <= result.metrics.accuracy <= 1.0
