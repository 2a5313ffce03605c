"""Tests for Adam, run initialization, and the training loop."""

import numpy as np
import pytest

from lgc import datagen, losses, trainer
from lgc.errors import ConfigError, NumericalDivergence
from lgc.losses import LossConfig
from lgc.trainer import RunRecord, TrainConfig, adam_step, init_run, train


def small_dataset(n_pairs=400, seed=0):
    gt = datagen.build_ground_truth()
    return gt, datagen.generate(gt, n_pairs=n_pairs, seed=seed)


def quick_configs(seed=1, **kw):
    tc = TrainConfig(seed=seed, epochs=2, batch_size=64, **kw)
    lc = LossConfig(kind="dist_mmd", n_adj=4)
    return tc, lc


class TestAdamStep:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0])
        z = np.zeros(2)
        p2, m, v = adam_step(p, z, z.copy(), z.copy(), 1, 0.05, 0.9, 0.99, 1e-8)
        assert np.array_equal(p2, p)

    def test_first_step_hand_computation(self):
        # m_hat = g, v_hat = g^2 -> delta = -lr * g / (|g| + eps)
        p = np.array([0.0])
        g = np.array([1.0])
        z = np.zeros(1)
        p2, _, _ = adam_step(p, g, z.copy(), z.copy(), 1, 0.05, 0.9, 0.99, 1e-8)
        expected = -0.05 * 1.0 / (1.0 + 1e-8)
        assert abs(p2[0] - expected) < 1e-12
        assert np.isclose(p2[0], -0.05, atol=1e-8)

    def test_first_step_scale_equivariant_in_lr(self):
        g = np.array([0.37])
        z = np.zeros(1)
        d1, _, _ = adam_step(np.zeros(1), g, z.copy(), z.copy(), 1, 0.02, 0.9, 0.99, 1e-8)
        d2, _, _ = adam_step(np.zeros(1), g, z.copy(), z.copy(), 1, 0.04, 0.9, 0.99, 1e-8)
        assert np.isclose(d2[0], 2 * d1[0])


class TestConfigValidation:
    def test_lr_ordering_enforced(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_initial=0.01, lr_after_drop=0.05)

    def test_beta_range(self):
        with pytest.raises(ConfigError):
            TrainConfig(adam_beta1=1.0)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            trainer.train_config_from_dict({"learning_rate": 0.1})


class TestInitRun:
    def test_theta_init_range_and_expected_mae(self):
        # E|theta* - U(0, 0.1)| = 0.70 on template entries, 0.05 elsewhere
        gt, _ = small_dataset()
        tc, lc = quick_configs(seed=3)
        state = init_run(tc, lc, gt.n)
        th = state.dist.theta
        assert th.min() >= 0.0 and th.max() <= 0.1 + 1e-12
        n_on = len(datagen.template_edges(3))
        expected = (n_on * 0.70 + (144 - n_on) * 0.05) / 144
        mae = np.abs(gt.dist_star.theta - th).mean()
        assert abs(mae - expected) < 0.01

    def test_freeze_psi_requires_model(self):
        _, lc = quick_configs()[1], quick_configs()[1]
        tc = TrainConfig(seed=0, freeze_psi=True)
        with pytest.raises(ConfigError):
            init_run(tc, lc, 12)

    def test_constraints_freeze_entries(self):
        gt, _ = small_dataset()
        frozen, values = datagen.misconfigured_constraints(gt)
        tc, lc = quick_configs()
        state = init_run(tc, lc, gt.n, theta_constraints=(frozen, values))
        assert np.all(state.dist.theta[frozen] == 0.25)
        assert not state.dist.mask[frozen].any()


class TestTrain:
    def test_zero_learning_rate_is_a_no_op(self):
        gt, ds = small_dataset()
        tc = TrainConfig(seed=2, epochs=1, batch_size=64, lr_initial=0.0, lr_after_drop=0.0)
        lc = LossConfig(kind="dist_mmd", n_adj=4)
        state = init_run(tc, lc, gt.n)
        theta0 = state.dist.theta.copy()
        psi0 = [w.copy() for w in state.model.layers]
        train(state, ds, theta_star=gt.dist_star.theta, eval_n_adj=4)
        assert np.array_equal(state.dist.theta, theta0)
        assert all(np.array_equal(a, b) for a, b in zip(state.model.layers, psi0))

    def test_determinism_and_record_shape(self):
        gt, ds = small_dataset()
        records = []
        finals = []
        for _ in range(2):
            tc, lc = quick_configs(seed=7)
            state = init_run(tc, lc, gt.n)
            rec = train(state, ds, theta_star=gt.dist_star.theta, eval_n_adj=4)
            records.append(rec)
            finals.append((state.dist.theta.copy(), [w.copy() for w in state.model.layers]))
        a, b = records
        assert len(a.epochs) == 2
        for ra, rb in zip(a.epochs, b.epochs):
            for col in trainer.EPOCH_COLUMNS:
                if col != "seconds":  # wall clock legitimately differs
                    assert ra[col] == rb[col]
        assert np.array_equal(finals[0][0], finals[1][0])
        assert all(np.array_equal(x, y) for x, y in zip(finals[0][1], finals[1][1]))

    def test_frozen_psi_bit_identical(self):
        gt, ds = small_dataset()
        tc, lc = quick_configs(seed=5, freeze_psi=True)
        state = init_run(tc, lc, gt.n, model=gt.model_star)
        before = [w.copy() for w in state.model.layers]
        train(state, ds, theta_star=gt.dist_star.theta, eval_n_adj=4)
        assert all(np.array_equal(a, b) for a, b in zip(before, state.model.layers))

    def test_theta_stays_clamped(self):
        gt, ds = small_dataset()
        tc, lc = quick_configs(seed=6)
        state = init_run(tc, lc, gt.n)
        train(state, ds, theta_star=gt.dist_star.theta, eval_n_adj=4)
        eps = state.dist.epsilon
        tr = state.dist.theta[state.dist.mask]
        assert tr.min() >= eps and tr.max() <= 1 - eps

    def test_divergence_detection(self):
        gt, ds = small_dataset()
        tc, lc = quick_configs(seed=8)
        state = init_run(tc, lc, gt.n)
        state.model.layers[0][0, 0] = np.nan
        with pytest.raises(NumericalDivergence):
            train(state, ds, theta_star=gt.dist_star.theta, eval_n_adj=4)

    def test_run_outputs_written(self, tmp_path):
        gt, ds = small_dataset()
        tc, lc = quick_configs(seed=9)
        state = init_run(tc, lc, gt.n)
        rec = train(state, ds, theta_star=gt.dist_star.theta, out_dir=tmp_path, eval_n_adj=4)
        for name in ("metrics.csv", "summary.json", "dist.json", "model.json"):
            assert (tmp_path / name).exists()
        loaded = RunRecord.from_csv(tmp_path / "metrics.csv")
        assert len(loaded.epochs) == len(rec.epochs)
        assert loaded.epochs[0]["val_dist"] == rec.epochs[0]["val_dist"]

    def test_lit2_state_persists_across_batches(self):
        gt, ds = small_dataset()
        tc = TrainConfig(seed=10, epochs=1, batch_size=64)
        lc = LossConfig(kind="lit2", n_adj=4, inner_metric="mse")
        state = init_run(tc, lc, gt.n)
        train(state, ds, theta_star=gt.dist_star.theta, eval_n_adj=4)
        assert state.node_baselines.any()
