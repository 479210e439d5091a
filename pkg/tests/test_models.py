"""Tests for the generator, critic/classifier and pGAN networks."""

import numpy as np
import pytest

from overlapgan.config import TrainConfig
from overlapgan.errors import ShapeError, SimplexError
from overlapgan.models import (
    DiscClassifierNet,
    GeneratorNet,
    build_models,
    build_pgan,
    check_simplex,
    classify,
    discriminate,
    generate,
    pgan_sample,
)
from overlapgan.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(99)


@pytest.fixture
def critic(rng):
    return DiscClassifierNet(2, 3, 16, k_shared=3, dropout_rates=[0.2, 0.5, 0.5], rng=rng)


class TestGenerator:
    """G(z, cond)."""

    def test_identical_rows_identical_outputs(self, rng):
        net = GeneratorNet(2, 3, 16, 2, rng)
        z = np.tile(rng.normal(size=(1, 2)), (4, 1))
        cond = np.tile([[0.5, 0.5, 0.0]], (4, 1))
        out = generate(net, z, cond).data
        assert np.all(out == out[0])

    def test_fresh_net_outputs_finite(self, rng):
        net = GeneratorNet(2, 3, 16, 2, rng)
        out = generate(net, rng.normal(size=(50, 2)) * 100, np.eye(3)[rng.integers(0, 3, 50)]).data
        assert out.shape == (50, 2)
        assert np.all(np.isfinite(out))

    def test_condition_must_be_simplex(self, rng):
        net = GeneratorNet(2, 3, 16, 2, rng)
        with pytest.raises(SimplexError):
            generate(net, np.zeros((1, 2)), np.array([[0.7, 0.7, 0.0]]))

    def test_shape_mismatch(self, rng):
        net = GeneratorNet(2, 3, 16, 2, rng)
        with pytest.raises(ShapeError):
            generate(net, np.zeros((2, 2)), np.eye(3)[:1])
        with pytest.raises(ShapeError):
            generate(net, np.zeros((1, 5)), np.eye(3)[:1])


class TestCriticClassifier:
    """D(x) and C(y|x) with a shared trunk."""

    def test_classify_rows_sum_to_one(self, critic, rng):
        probs = classify(critic, rng.normal(size=(20, 2))).data
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_eval_mode_is_deterministic(self, critic, rng):
        x = rng.normal(size=(10, 2))
        np.testing.assert_array_equal(critic.classify(x).data, critic.classify(x).data)

    def test_train_mode_uses_dropout(self, critic, rng):
        x = rng.normal(size=(10, 2))
        a = critic.classify(x, train=True, rng=np.random.default_rng(1)).data
        b = critic.classify(x, train=True, rng=np.random.default_rng(2)).data
        assert not np.array_equal(a, b)

    def test_scores_shape(self, critic, rng):
        assert discriminate(critic, rng.normal(size=(7, 2))).shape == (7,)

    def test_shared_trunk_ties_both_heads(self, critic, rng):
        """Changing a trunk weight moves both outputs; a head weight moves only its own."""
        x = rng.normal(size=(5, 2))
        scores, probs = critic.discriminate(x).data, critic.classify(x).data

        critic.trunk[0].weight.data += 0.5
        assert not np.allclose(critic.discriminate(x).data, scores)
        assert not np.allclose(critic.classify(x).data, probs)

        scores, probs = critic.discriminate(x).data, critic.classify(x).data
        critic.d_head.weight.data += 0.5
        assert not np.allclose(critic.discriminate(x).data, scores)
        np.testing.assert_array_equal(critic.classify(x).data, probs)

    @pytest.mark.parametrize("k_shared", [0, 1, 2, 3])
    def test_parameter_layout(self, k_shared, rng):
        net = DiscClassifierNet(2, 3, 16, k_shared, [0.0, 0.0, 0.0], rng)
        names = net.named_parameters()
        trunk = [n for n in names if n.startswith("trunk.")]
        branch = [n for n in names if n.startswith("d_branch.")]
        assert len(trunk) == 2 * k_shared
        assert len(branch) == 2 * (3 - k_shared)

    def test_invalid_k_shared(self, rng):
        with pytest.raises(ValueError):
            DiscClassifierNet(2, 3, 16, 4, [0.0] * 3, rng)

    def test_concat_critic_needs_condition(self, rng):
        net = DiscClassifierNet(2, 3, 16, 3, [0.0] * 3, rng, cond_dim=3, with_classifier=False)
        assert net.discriminate(np.zeros((2, 2)), np.eye(3)[:2]).shape == (2,)
        with pytest.raises(ValueError):
            net.discriminate(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            net.classify(np.zeros((2, 2)))


class TestBuildModels:
    def test_variants(self, rng):
        base = TrainConfig(width=16)
        concat = build_models(base.with_overrides(variant="cGAN-concat"), 2, 2, rng)
        assert concat.conditions_critic and not concat.critic.has_classifier
        cp = build_models(base, 2, 2, rng)
        assert cp.critic.has_classifier and not cp.conditions_critic

    def test_dropout_off(self, rng):
        bundle = build_models(TrainConfig(width=16, dropout=False), 2, 2, rng)
        assert bundle.critic.dropout_rates == [0.0, 0.0, 0.0]

    def test_same_seed_same_weights(self):
        a = build_models(TrainConfig(width=16), 2, 2, np.random.default_rng(0))
        b = build_models(TrainConfig(width=16), 2, 2, np.random.default_rng(0))
        for (name, p), (_, q) in zip(a.named_parameters().items(), b.named_parameters().items()):
            np.testing.assert_array_equal(p.data, q.data, err_msg=name)


class TestPGan:
    def test_untrained_outputs_on_simplex(self, rng):
        nets = build_pgan(3, 16, rng)
        s, y = pgan_sample(nets, 200, rng)
        check_simplex(s, tol=1e-9)
        assert s.shape == y.shape == (200, 3)

    def test_critic_scores(self, rng):
        nets = build_pgan(3, 16, rng)
        s, y = pgan_sample(nets, 10, rng)
        assert nets.critic(Tensor(s), Tensor(y)).shape == (10,)

    def test_noise_dimension_equals_classes(self, rng):
        nets = build_pgan(4, 16, rng)
        assert nets.generator.layers[0].fan_in == 2 * 4
