import math

import numpy as np
import pytest

from countdcrbm.data import SampleSet, default_generator_config, generate_synthetic, split_chronological, window_dataset
from countdcrbm.inference import gibbs_step
from countdcrbm.model import ModelConfig, ModelParams, UnitKind, hidden_prob, init_params, one_hot
from countdcrbm.training import (
    BCE_CLAMP,
    DivergenceError,
    ParamDeltas,
    TrainConfig,
    apply_update,
    binary_cross_entropy,
    cd_gradients,
    classification_bce,
    reconstruction_error,
    train,
)
from countdcrbm.verify import equilibrium_z_scores, random_params


def random_samples(config: ModelConfig, n: int, seed: int = 0) -> SampleSet:
    rng = np.random.default_rng(seed)
    hi = 2 if config.unit_kind is UnitKind.BINARY else 6
    return SampleSet(
        rng.integers(0, hi, (n, config.history_dim)),
        rng.integers(0, hi, (n, config.visible_dim)),
        rng.integers(0, config.label_dim, n),
        np.arange(n),
    )


class TestCDGradients:
    def test_replay_of_k_steps(self):
        cfg = ModelConfig(3, 4, 2, 2, UnitKind.COUNT)
        params = random_params(cfg, np.random.default_rng(0), scale=0.3)
        batch = random_samples(cfg, 16, seed=1)
        deltas = cd_gradients(params, batch, np.random.default_rng(99), cd_steps=3)

        rng = np.random.default_rng(99)
        m = batch.frames.sum(axis=1)
        v, y = batch.frames, batch.labels
        for _ in range(3):
            step = gibbs_step(params, v, y, batch.history, rng, m=m)
            v, y = step.v_recon, step.y_recon
        h_neg = hidden_prob(params, v, batch.history, label=y)
        h_pos = hidden_prob(params, batch.frames, batch.history, label=batch.labels)
        n = len(batch)
        np.testing.assert_allclose(deltas.W, (batch.frames.T @ h_pos - v.T @ h_neg) / n)
        np.testing.assert_allclose(deltas.a, batch.frames.mean(0) - step.v_params.mean(0))
        np.testing.assert_allclose(deltas.b, h_pos.mean(0) - h_neg.mean(0))
        np.testing.assert_allclose(deltas.A, batch.history.T @ (batch.frames - step.v_params) / n)
        np.testing.assert_allclose(deltas.B, batch.history.T @ (h_pos - h_neg) / n)
        np.testing.assert_allclose(deltas.U, (h_pos.T @ one_hot(batch.labels, 2) - h_neg.T @ one_hot(y, 2)) / n)
        np.testing.assert_allclose(deltas.s, one_hot(batch.labels, 2).mean(0) - step.y_prob.mean(0))

    def test_zero_batch_zero_params(self):
        cfg = ModelConfig(3, 2, 2, 1, UnitKind.BINARY)
        params = ModelParams.zeros(cfg)
        labels = np.array([1, 1, 1, 0])
        batch = SampleSet(np.zeros((4, 3)), np.zeros((4, 3)), labels, np.arange(4))
        deltas = cd_gradients(params, batch, np.random.default_rng(5))
        # label statistics: data mean minus the uniform label distribution
        np.testing.assert_allclose(deltas.s, [0.25 - 0.5, 0.75 - 0.5])
        # empty frames contribute nothing to the positive visible statistics,
        # so the visible bias moves toward the sigmoid(0) reconstruction mean
        np.testing.assert_allclose(deltas.a, -0.5)
        step = gibbs_step(params, batch.frames, labels, batch.history, np.random.default_rng(5))
        np.testing.assert_allclose(deltas.W, -(step.v_recon.T @ np.full((4, 2), 0.5)) / 4)
        np.testing.assert_allclose(deltas.b, 0.0)

    def test_equilibrium_small(self):
        z = equilibrium_z_scores(seed=3, n_samples=4000)
        assert max(v.max() for v in z.values()) <= 3.0

    def test_errors(self):
        cfg = ModelConfig(2, 2)
        params = ModelParams.zeros(cfg)
        with pytest.raises(ValueError, match="empty"):
            cd_gradients(params, random_samples(cfg, 4)[:0], np.random.default_rng(0))
        with pytest.raises(ValueError, match="do not match"):
            cd_gradients(params, random_samples(ModelConfig(3, 2), 4), np.random.default_rng(0))

    def test_per_sample_mean_equals_batch(self):
        cfg = ModelConfig(3, 4, 2, 2, UnitKind.REAL)
        params = random_params(cfg, np.random.default_rng(2), scale=0.2)
        batch = random_samples(cfg, 10, seed=3)
        full = cd_gradients(params, batch, np.random.default_rng(1))
        each = cd_gradients(params, batch, np.random.default_rng(1), per_sample=True)
        for name, arr in full.tensors().items():
            np.testing.assert_allclose(getattr(each, name).mean(axis=0), arr, atol=1e-12)


class TestApplyUpdate:
    def setup_method(self):
        self.params = random_params(ModelConfig(2, 2, 2, 1), np.random.default_rng(0))

    def test_zero_rate(self):
        deltas = ParamDeltas(**{k: np.ones_like(v) for k, v in self.params.tensors().items()})
        updated = apply_update(self.params, deltas, 0.0)
        for name, arr in self.params.tensors().items():
            assert np.array_equal(arr, getattr(updated, name))

    def test_zero_deltas(self):
        updated = apply_update(self.params, ParamDeltas.zeros_like(self.params), 0.5)
        assert np.array_equal(updated.W, self.params.W)

    def test_arithmetic(self):
        params = ModelParams.zeros(ModelConfig(1, 1)).replace(W=np.array([[1.0]]))
        deltas = ParamDeltas.zeros_like(params)
        deltas = ParamDeltas(**(deltas.tensors() | {"W": np.array([[2.0]])}))
        assert apply_update(params, deltas, 0.1).W[0, 0] == pytest.approx(1.2)

    def test_non_finite_names_tensor(self):
        deltas = ParamDeltas(**(ParamDeltas.zeros_like(self.params).tensors() | {"B": np.full((2, 2), np.inf)}))
        with pytest.raises(DivergenceError, match="B") as info:
            apply_update(self.params, deltas, 1.0)
        assert info.value.tensor == "B"


class TestDiagnostics:
    def test_reconstruction_perfect(self):
        # count model with zero params reconstructs m / V per unit
        cfg = ModelConfig(2, 1, 2, 1, UnitKind.COUNT)
        data = SampleSet(np.zeros((2, 2)), [[1, 1], [3, 3]], [0, 1], [0, 1])
        assert reconstruction_error(ModelParams.zeros(cfg), data) == 0.0

    def test_reconstruction_hand_value(self):
        cfg = ModelConfig(2, 1, 2, 1, UnitKind.COUNT)
        data = SampleSet(np.zeros((1, 2)), [[2, 0]], [0], [0])
        assert reconstruction_error(ModelParams.zeros(cfg), data) == pytest.approx(1.0)

    def test_reconstruction_order_invariant(self):
        cfg = ModelConfig(3, 4, 2, 2, UnitKind.COUNT)
        params = random_params(cfg, np.random.default_rng(1), scale=0.3)
        data = random_samples(cfg, 30, seed=2)
        perm = np.random.default_rng(3).permutation(30)
        assert reconstruction_error(params, data) == pytest.approx(reconstruction_error(params, data[perm]),
                                                                   rel=1e-12)

    def test_bce_uniform(self):
        cfg = ModelConfig(2, 3, 2, 1)
        data = random_samples(cfg, 10)
        assert classification_bce(ModelParams.zeros(cfg), data) == pytest.approx(math.log(2))

    def test_bce_hand_value(self):
        assert binary_cross_entropy([1], [0.8]) == pytest.approx(-math.log(0.8))
        assert binary_cross_entropy([1], [0.8]) == pytest.approx(0.2231, abs=1e-4)

    def test_bce_clamp_floor(self):
        value = binary_cross_entropy([1, 0], [1.0, 0.0])
        assert value == pytest.approx(-math.log1p(-BCE_CLAMP), rel=1e-3)
        assert 0 < value < 2e-12

    def test_bce_via_confident_model(self):
        cfg = ModelConfig(1, 1, 2, 1)
        params = ModelParams.zeros(cfg).replace(s=np.array([0.0, 100.0]))
        data = SampleSet(np.zeros((3, 1)), np.zeros((3, 1)), [1, 1, 1], [0, 1, 2])
        assert classification_bce(params, data) < 2e-12

    def test_bce_needs_two_labels(self):
        cfg = ModelConfig(2, 2, 3, 1)
        with pytest.raises(ValueError, match="2 labels"):
            classification_bce(ModelParams.zeros(cfg), random_samples(cfg, 3))


class TestTrain:
    def setup_method(self):
        self.cfg = ModelConfig(3, 4, 2, 2, UnitKind.COUNT)
        self.data = random_samples(self.cfg, 60, seed=4)
        self.params = init_params(self.cfg, seed=1, frames=self.data.frames)

    def test_zero_rate_is_identity(self):
        params, report = train(self.params, self.data[:40], self.data[40:],
                               TrainConfig(learning_rate=0.0, epochs=1, batch_size=8))
        for name, arr in self.params.tensors().items():
            assert np.array_equal(arr, getattr(params, name))
        assert len(report.rows) == 1
        assert report.rows[0].scores == report.initial.scores
        assert report.rows[0].recon_error == report.initial.recon_error

    def test_zero_rate_many_epochs(self):
        params, _ = train(self.params, self.data[:40], self.data[40:],
                          TrainConfig(learning_rate=0.0, epochs=5, batch_size=7, shuffle=True))
        assert np.array_equal(params.W, self.params.W)

    def test_deterministic(self):
        cfg = TrainConfig(learning_rate=1e-3, epochs=4, batch_size=8, seed=7, shuffle=True, momentum=0.5,
                          weight_decay=1e-4)
        p1, r1 = train(self.params, self.data[:40], self.data[40:], cfg)
        p2, r2 = train(self.params, self.data[:40], self.data[40:], cfg)
        assert r1.to_csv() == r2.to_csv() and r1.rows == r2.rows
        assert all(np.array_equal(a, getattr(p2, k)) for k, a in p1.tensors().items())

    def test_seed_matters(self):
        base = dict(learning_rate=1e-2, epochs=2, batch_size=8)
        p1, _ = train(self.params, self.data[:40], self.data[40:], TrainConfig(seed=1, **base))
        p2, _ = train(self.params, self.data[:40], self.data[40:], TrainConfig(seed=2, **base))
        assert not np.array_equal(p1.W, p2.W)

    def test_eval_cadence_and_csv(self):
        _, report = train(self.params, self.data[:40], self.data[40:],
                          TrainConfig(learning_rate=1e-4, epochs=10, eval_every=3, batch_size=16))
        assert [r.epoch for r in report.rows] == [3, 6, 9, 10]
        lines = report.to_csv().splitlines()
        assert lines[0] == "epoch,recon_error,bce,accuracy,precision,recall,f1,mcc"
        assert len(lines) == 5

    def test_divergence_reports_epoch(self):
        with pytest.raises(DivergenceError) as info:
            train(self.params, self.data[:40], self.data[40:], TrainConfig(learning_rate=1e308, epochs=3))
        assert info.value.epoch == 1

    def test_dimension_mismatch(self):
        other = random_samples(ModelConfig(4, 4, 2, 2), 10)
        with pytest.raises(ValueError, match="dimensions"):
            train(self.params, other, other, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(cd_steps=0)


def test_learns_separable_synthetic_benchmark():
    """Two activities with disjoint instruction supports; misses cluster in one."""
    trace = generate_synthetic(default_generator_config(length=20_000, seed=0))
    data = window_dataset(trace, 5, "synthetic", window=128, bin_size=8)
    train_set, test_set = split_chronological(data, 0.8)
    cfg = ModelConfig(trace.visible_dim, 15, 2, 5, UnitKind.COUNT)
    params = init_params(cfg, seed=0, frames=train_set.frames)
    _, report = train(params, train_set, test_set,
                      TrainConfig(learning_rate=1e-4, epochs=800, batch_size=100, eval_every=100))
    assert report.final.scores.mcc > 0.0
    assert report.final.recon_error < report.initial.recon_error
    assert report.final.bce < report.initial.bce
    for row in report.rows:
        assert np.isfinite(row.recon_error) and np.isfinite(row.bce)
