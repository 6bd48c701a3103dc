import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bankfusion import numeric as nm
from bankfusion.bankio import FeatureBankDataset, SyntheticTaskSpec, gen_synthetic
from bankfusion.fusion import FusionModel
from bankfusion.numeric import Matrix
from bankfusion.training import (
    TrainConfig,
    cross_entropy,
    evaluate,
    format_metrics,
    loss_trend_ok,
    sgd_step,
    stratified_subsample,
    train,
)

from conftest import GRAD_RTOL, grad_check

SEPARABLE = SyntheticTaskSpec(kind="separable", dim=4, n_branches=2, classes=2,
                              train_samples=400, test_samples=200, noise=0.1, seed=3)


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(Matrix(np.zeros((4, 10))), [0, 3, 9, 2]).item() == pytest.approx(2.302585092994046, rel=1e-14)

    def test_confident_correct(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 1000.0
        assert cross_entropy(Matrix(logits), [2]).item() == pytest.approx(0.0, abs=1e-300)

    def test_two_class_value(self):
        assert cross_entropy(Matrix([[0.0, 1.0]]), [0]).item() == pytest.approx(1.3132616875182228, rel=1e-14)

    def test_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Matrix(np.zeros((1, 3))), [3])
        with pytest.raises(ValueError):
            cross_entropy(Matrix(np.zeros((1, 3))), [-1])

    @given(arrays(np.float64, (3, 4), elements=st.floats(-500, 500)), st.lists(st.integers(0, 3), min_size=3, max_size=3))
    def test_non_negative(self, logits, labels):
        assert cross_entropy(Matrix(logits), labels).item() >= 0.0

    def test_gradient(self, rng):
        x = Matrix(rng.uniform(-2, 2, size=(5, 4)), requires_grad=True)
        assert grad_check(lambda: cross_entropy(x, [0, 1, 2, 3, 0]), [x]) < GRAD_RTOL


class TestSGD:
    def test_plain_step(self):
        p = Matrix([[1.0, -2.0]], requires_grad=True)
        sgd_step([p], [np.array([[0.5, 0.25]])], [], TrainConfig(momentum=0, weight_decay=0, lr0=1))
        assert p.data.tolist() == [[0.5, -2.25]]

    def test_momentum_two_steps(self):
        p = Matrix([[0.0]], requires_grad=True)
        cfg, state, g = TrainConfig(momentum=0.9, weight_decay=0, lr0=1), [], np.array([[1.0]])
        sgd_step([p], [g], state, cfg)
        assert p.data[0, 0] == -1.0
        sgd_step([p], [g], state, cfg)
        assert p.data[0, 0] == pytest.approx(-(1.0 + 1.9), rel=1e-15)

    def test_weight_decay_shrinks(self):
        p = Matrix([[2.0, -3.0]], requires_grad=True)
        cfg, state = TrainConfig(momentum=0, weight_decay=1e-4, lr0=0.1), []
        for k in range(1, 4):
            sgd_step([p], [np.zeros((1, 2))], state, cfg)
            np.testing.assert_allclose(p.data, np.array([[2.0, -3.0]]) * (1 - 1e-5) ** k, rtol=1e-15)


class TestConfig:
    def test_lr_schedule(self):
        cfg = TrainConfig(epochs=200, lr0=0.1, lr_drop_epochs=(100, 150), lr_drop_factor=0.1)
        for e in range(200):
            drops = sum(1 for d in (100, 150) if d <= e)
            assert cfg.lr_at(e) == 0.1 * 0.1**drops
        assert cfg.lr_at(99) == 0.1 and cfg.lr_at(100) == 0.1 * 0.1

    @pytest.mark.parametrize("kw", [
        dict(lr_drop_epochs=(5, 5), epochs=10), dict(lr_drop_epochs=(10,), epochs=10),
        dict(label_fraction=0.0), dict(label_fraction=1.5), dict(batch_size=0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestSubsample:
    def test_ceil_per_class(self, rng):
        labels = np.repeat([0, 1, 2], [15, 7, 30])
        idx = stratified_subsample(labels, 0.1, rng)
        assert [int(np.sum(labels[idx] == c)) for c in range(3)] == [2, 1, 3]
        assert list(idx) == sorted(idx)

    def test_full_fraction_keeps_everything(self, rng):
        assert list(stratified_subsample(np.array([1, 0, 1]), 1.0, rng)) == [0, 1, 2]


class TestTrain:
    def test_separable_single_bank(self):
        tr, te = gen_synthetic(SEPARABLE)
        m = FusionModel("SINGLE0", 2, 4, 2, seed=0)
        metrics = train(m, tr, TrainConfig(epochs=50, lr_drop_epochs=(25, 40), seed=0))
        assert metrics.accuracy >= 0.99
        assert evaluate(m, te).accuracy >= 0.99
        assert len(metrics.epoch_losses) == 50
        assert loss_trend_ok(metrics.epoch_losses)

    def test_zero_epochs(self):
        tr, _ = gen_synthetic(SEPARABLE)
        m = FusionModel("SA2CA", 2, 4, 2, seed=0)
        before = m.state()
        metrics = train(m, tr, TrainConfig(epochs=0, lr_drop_epochs=()))
        assert metrics.epoch_losses == []
        for k, v in m.state().items():
            assert v.tobytes() == before[k].tobytes()

    def test_same_seed_same_parameters(self):
        tr, _ = gen_synthetic(SEPARABLE)
        cfg = TrainConfig(epochs=4, lr_drop_epochs=(2,), seed=11, batch_size=32, label_fraction=0.5)
        runs = []
        for _ in range(2):
            m = FusionModel("SA2CA", 2, 4, 2, seed=11)
            metrics = train(m, tr, cfg)
            runs.append((b"".join(v.tobytes() for v in m.state().values()), metrics.epoch_losses))
        assert runs[0] == runs[1]

    def test_recorded_lrs_follow_schedule(self):
        tr, _ = gen_synthetic(SEPARABLE)
        cfg = TrainConfig(epochs=6, lr_drop_epochs=(2, 4), lr0=0.05, lr_drop_factor=0.5)
        metrics = train(FusionModel("ADD", 2, 4, 2), tr, cfg)
        assert metrics.epoch_lrs == [cfg.lr_at(e) for e in range(6)] == [0.05, 0.05, 0.025, 0.025, 0.0125, 0.0125]

    def test_label_fraction_sample_count(self):
        tr, _ = gen_synthetic(SEPARABLE)
        metrics = train(FusionModel("SINGLE0", 2, 4, 2), tr, TrainConfig(epochs=1, lr_drop_epochs=(), label_fraction=0.1))
        expected = sum(math.ceil(0.1 * np.sum(tr.labels == c)) for c in range(2))
        assert metrics.n_samples == expected

    def test_standardize_sets_normalization(self):
        tr, _ = gen_synthetic(SEPARABLE)
        m = FusionModel("CONCAT", 2, 4, 2)
        train(m, tr, TrainConfig(epochs=1, lr_drop_epochs=(), standardize=True))
        np.testing.assert_allclose(m.norm_mean, tr.features.mean(axis=0))

    def test_empty_dataset(self):
        empty = FeatureBankDataset(np.zeros((0, 2, 4)), np.zeros(0), 2)
        with pytest.raises(ValueError, match="empty"):
            train(FusionModel("ADD", 2, 4, 2), empty, TrainConfig(epochs=1, lr_drop_epochs=()))

    def test_dimension_mismatch(self):
        tr, _ = gen_synthetic(SEPARABLE)
        with pytest.raises(nm.ShapeError):
            train(FusionModel("ADD", 2, 5, 2), tr, TrainConfig(epochs=1, lr_drop_epochs=()))


class TestEvaluate:
    def balanced(self, classes=4, per_class=5):
        labels = np.repeat(np.arange(classes), per_class)
        feats = np.eye(classes)[labels][:, None, :]
        return FeatureBankDataset(feats, labels, classes)

    def test_constant_predictor(self):
        ds = self.balanced()
        m = FusionModel("SINGLE0", 1, 4, 4)
        m.head_w.data[...] = 0
        m.head_b.data[...] = [[0, 0, 1, 0]]
        assert evaluate(m, ds).accuracy == 0.25

    def test_perfect_model(self):
        ds = self.balanced()
        m = FusionModel("SINGLE0", 1, 4, 4)
        m.head_w.data[...] = np.eye(4)
        assert evaluate(m, ds).accuracy == 1.0

    def test_pure(self):
        tr, _ = gen_synthetic(SEPARABLE)
        m = FusionModel("SA2CA", 2, 4, 2)
        before = m.state()
        assert evaluate(m, tr).accuracy == evaluate(m, tr).accuracy
        assert all(v.tobytes() == before[k].tobytes() for k, v in m.state().items())


class TestLossTrend:
    def test_decreasing(self):
        assert loss_trend_ok([1.0 / (e + 1) for e in range(40)])

    def test_rising(self):
        assert not loss_trend_ok([1.0] * 10 + [1.0 + 0.02 * e for e in range(30)])

    def test_small_wiggle_tolerated(self):
        assert loss_trend_ok([1.0 + 0.01 * (e % 2) for e in range(30)])


def test_metrics_format():
    from bankfusion.training import Metrics

    text = format_metrics(Metrics(epoch_losses=[0.5, 0.25], epoch_lrs=[0.1, 0.01], accuracy=0.75))
    assert text == "0,0.1,0.5\n1,0.01,0.25\nfinal,0.75\n"
