"""Training loop determinism and optimizer contracts."""

import numpy as np
import pytest

from contrastlab.autograd import loss_and_grad
from contrastlab.encoder import flatten, init_params
from contrastlab.errors import BatchTooSmall, ConfigError
from contrastlab.rng import substream
from contrastlab.training import (
    TrainConfig,
    build_dataset,
    load_checkpoint,
    make_batches,
    save_checkpoint,
    train,
)
from contrastlab.worldmodel import preset_mixture, preset_sphere


def small_config(**overrides):
    base = dict(loss_kind="debiased", tau_plus=0.1, batch_size=8, epochs=3,
                dataset_size=32, embed_dim=4, seed=5)
    base.update(overrides)
    return TrainConfig(**base)


class TestMakeBatches:
    def test_one_batch_when_size_matches(self):
        world = preset_sphere("sphere-k10")
        dataset = build_dataset(world, 16, substream(1))
        batches = make_batches(dataset, 16, 1, substream(2))
        assert len(batches) == 1
        assert batches[0].features.shape == (32, world.feature_dim)

    def test_extra_positive_view_count(self):
        world = preset_sphere("sphere-k10")
        dataset = build_dataset(world, 12, substream(1))
        batches = make_batches(dataset, 4, 2, substream(2))
        assert all(b.features.shape[0] == 3 * 4 for b in batches)

    def test_same_seed_identical_streams(self):
        world = preset_sphere("sphere-k10")
        dataset = build_dataset(world, 24, substream(1))
        a = make_batches(dataset, 8, 2, substream(9))
        b = make_batches(dataset, 8, 2, substream(9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_dataset_too_small(self):
        world = preset_sphere("sphere-k10")
        dataset = build_dataset(world, 4, substream(1))
        with pytest.raises(BatchTooSmall):
            make_batches(dataset, 8, 1, substream(2))

    def test_discrete_world_batches(self):
        mix = preset_mixture("paper-uniform")
        dataset = build_dataset(mix, 16, substream(3))
        batches = make_batches(dataset, 8, 1, substream(4))
        assert batches[0].features.shape == (16, mix.feature_dim)

    def test_negative_pool_rows(self):
        world = preset_sphere("sphere-k10")
        dataset = build_dataset(world, 12, substream(1))
        batches = make_batches(dataset, 4, 1, substream(2), negative_pool=6)
        assert batches[0].features.shape == (8 + 6, world.feature_dim)
        assert batches[0].neg_pool_labels.shape == (6,)

    def test_instance_mode_views_stay_near_base(self):
        world = preset_sphere("sphere-k10")
        dataset = build_dataset(world, 16, substream(5), anchor_mode="instance",
                                view_noise=0.05)
        batch = make_batches(dataset, 16, 1, substream(6))[0]
        # Anchors are permuted within the batch, but every view should hug
        # some pinned base sample carrying its own label.
        dots = batch.features[:16] @ dataset.base_points.T
        nearest = np.argmax(dots, axis=1)
        assert dots[np.arange(16), nearest].min() > 0.9
        np.testing.assert_array_equal(dataset.labels[nearest], batch.labels)

    def test_class_resample_breaks_instance_pinning(self):
        world = preset_sphere("sphere-k10")
        dataset = build_dataset(world, 64, substream(5), anchor_mode="instance",
                                view_noise=0.01, class_resample_prob=1.0)
        batch = make_batches(dataset, 64, 1, substream(6))[0]
        dots = (batch.features[:64] * dataset.base_points).sum(axis=1)
        assert dots.min() < 0.9  # fully resampled views are fresh class draws


class TestTrain:
    def test_zero_learning_rate_is_noop(self):
        world = preset_sphere("sphere-k10")
        cfg = small_config(learning_rate=0.0, optimizer="sgd")
        params, _ = train(cfg, world)
        np.testing.assert_array_equal(
            params.weights, init_params(substream(cfg.seed, 1), world.feature_dim,
                                        cfg.embed_dim).weights)

    def test_single_sgd_step_oracle(self):
        world = preset_sphere("sphere-k10")
        cfg = small_config(epochs=1, batch_size=32, dataset_size=32,
                           optimizer="sgd", learning_rate=0.05)
        params, _ = train(cfg, world)
        # Reassemble the single step by hand from the autograd module.
        init = init_params(substream(cfg.seed, 1), world.feature_dim, cfg.embed_dim)
        dataset = build_dataset(world, cfg.dataset_size, substream(cfg.seed, 0))
        batch = make_batches(dataset, 32, 1, substream(cfg.seed, 2, 0))[0]
        _, grads = loss_and_grad(init, batch, cfg.loss_spec())
        expected = flatten(init) - 0.05 * flatten(grads)
        np.testing.assert_array_equal(flatten(params), expected)

    def test_seed_determinism_bit_identical(self):
        world = preset_sphere("sphere-k10")
        p1, log1 = train(small_config(), world)
        p2, log2 = train(small_config(), world)
        np.testing.assert_array_equal(p1.weights, p2.weights)
        assert [r.loss for r in log1] == [r.loss for r in log2]

    def test_tau_zero_debiased_matches_biased_trajectory(self):
        world = preset_sphere("sphere-k10")
        p_deb, _ = train(small_config(loss_kind="debiased", tau_plus=0.0,
                                      floor_mode="zero_floor"), world)
        p_bia, _ = train(small_config(loss_kind="biased", tau_plus=0.0), world)
        np.testing.assert_array_equal(p_deb.weights, p_bia.weights)

    def test_loss_decreases_on_preset(self):
        world = preset_sphere("sphere-k10")
        _, log = train(small_config(epochs=30, dataset_size=256, batch_size=64,
                                    embed_dim=16), world)
        assert log[-1].loss <= log[0].loss

    def test_momentum_and_adam_run(self):
        world = preset_sphere("sphere-k10")
        for opt in ("momentum", "adam"):
            params, log = train(small_config(optimizer=opt, epochs=2), world)
            assert np.all(np.isfinite(params.weights))

    def test_tail_average_is_mean_of_final_epochs(self):
        world = preset_sphere("sphere-k10")
        p_full, _ = train(small_config(epochs=3, tail_average=3), world)
        p_last, _ = train(small_config(epochs=1), world)
        p_none, _ = train(small_config(epochs=3), world)
        assert not np.array_equal(p_full.weights, p_none.weights)
        assert np.all(np.isfinite(p_full.weights))

    def test_unbiased_trainer_uses_fresh_pool(self):
        world = preset_sphere("sphere-k10")
        params, log = train(small_config(loss_kind="unbiased", tau_plus=0.0), world)
        assert np.all(np.isfinite(params.weights))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            small_config(batch_size=1)
        with pytest.raises(ConfigError):
            small_config(epochs=0)
        with pytest.raises(ConfigError):
            small_config(optimizer="lbfgs")
        with pytest.raises(ConfigError):
            small_config(learning_rate=-1e-3)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        world = preset_sphere("sphere-k10")
        params, _ = train(small_config(), world)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, params, "cafe" * 16, meta={"note": "test"})
        loaded, payload = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.weights, params.weights)
        assert payload["config_hash"] == "cafe" * 16
        assert payload["meta"]["note"] == "test"

    def test_version_check(self, tmp_path):
        path = tmp_path / "ckpt.json"
        path.write_text('{"format_version": 99}')
        with pytest.raises(ConfigError):
            load_checkpoint(path)

    def test_hidden_layer_roundtrip(self, tmp_path):
        params = init_params(substream(2), 6, 3, hidden_dim=5)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, params, "00" * 32)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.hidden_weights, params.hidden_weights)
