"""Tests for the adversarial, penalty and KL objectives."""

import numpy as np
import pytest

from overlapgan.config import TrainConfig
from overlapgan.errors import ShapeError, SimplexError
from overlapgan.losses import (
    LossTerms,
    adversarial_loss,
    compose,
    generator_adversarial_loss,
    gradient_penalty,
    kl_ac_loss_gen,
    kl_ac_loss_real,
    kl_cp_loss,
    kl_divergence,
    pgan_losses,
)
from overlapgan.models import build_models
from overlapgan.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def random_simplex(rng, n: int, c: int) -> np.ndarray:
    return rng.dirichlet(np.ones(c), size=n)


def one_hot(idx, c: int) -> np.ndarray:
    return np.eye(c)[np.asarray(idx)]


def tanh_critic(rng, n: int):
    """A smooth one-hidden-layer critic with random fixed weights."""
    w1, w2 = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(8, 1)))

    def critic(x: Tensor) -> Tensor:
        return ((x @ w1).tanh() @ w2).reshape(n)

    return critic


class MirroredDraws:
    """Uniform source that hands back ``1 - u`` for every draw ``u``."""

    def __init__(self, seed: int):
        self._rng = np.random.default_rng(seed)

    def random(self, size):
        return 1.0 - self._rng.random(size)


def sampled_gradient_check(loss, params: dict[str, Tensor], rng, per_param: int = 4, h: float = 1e-6) -> None:
    """Autodiff gradients of ``loss()`` agree with central differences on a few coordinates per tensor."""
    for p in params.values():
        p.zero_grad()
    loss().backward()
    for name, p in params.items():
        for flat in rng.choice(p.data.size, size=min(per_param, p.data.size), replace=False):
            idx = np.unravel_index(flat, p.data.shape)
            original = p.data[idx]
            p.data[idx] = original + h
            plus = loss().item()
            p.data[idx] = original - h
            minus = loss().item()
            p.data[idx] = original
            assert p.grad[idx] == pytest.approx((plus - minus) / (2 * h), rel=1e-4, abs=1e-6), f"{name}{idx}"


class TestAdversarialLoss:
    def test_wgan_equal_scores(self):
        d = Tensor([0.3, -1.2, 2.0])
        loss_d, _ = adversarial_loss(d, d, "wgan")
        assert loss_d.item() == 0.0

    def test_wgan_means(self):
        loss_d, loss_g = adversarial_loss(Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), "wgan")
        assert loss_d.item() == -1.0
        assert loss_g.item() == 0.0

    def test_nonsaturating_uninformative_critic(self):
        """Pre-sigmoid 0 everywhere gives 2·log 2."""
        loss_d, loss_g = adversarial_loss(Tensor([0.0, 0.0]), Tensor([0.0, 0.0]), "nonsaturating")
        assert loss_d.item() == pytest.approx(2 * np.log(2))
        assert loss_g.item() == pytest.approx(np.log(2))

    def test_nonsaturating_saturated_critic_is_finite(self):
        loss_d, loss_g = adversarial_loss(Tensor([500.0]), Tensor([-500.0]), "nonsaturating")
        assert np.isfinite(loss_d.item()) and np.isfinite(loss_g.item())

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            adversarial_loss(Tensor(np.zeros(0)), Tensor([1.0]))

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="hinge"):
            adversarial_loss(Tensor([1.0]), Tensor([1.0]), "hinge")

    def test_pgan_losses_mirror_wgan(self, rng):
        real, fake = Tensor(rng.normal(size=8)), Tensor(rng.normal(size=8))
        expected = adversarial_loss(real, fake, "wgan")
        got = pgan_losses(real, fake)
        assert [t.item() for t in got] == [t.item() for t in expected]


class TestGradientPenalty:
    """Closed-form penalty values."""

    def test_unit_linear_critic(self, rng):
        w = Tensor(np.array([[0.6], [0.8]]))
        x_r, x_f = rng.normal(size=(16, 2)), rng.normal(size=(16, 2))
        gp = gradient_penalty(lambda x: (x @ w).reshape(16), x_r, x_f, rng)
        assert gp.item() == pytest.approx(0.0, abs=1e-9)

    def test_constant_critic(self, rng):
        x_r, x_f = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        gp = gradient_penalty(lambda x: Tensor(np.zeros(8)), x_r, x_f, rng)
        assert gp.item() == pytest.approx(1.0, abs=1e-9)

    def test_doubled_coordinate_critic(self, rng):
        x_r, x_f = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        gp = gradient_penalty(lambda x: x[:, 0] * 2.0, x_r, x_f, rng)
        assert gp.item() == pytest.approx(1.0, abs=1e-9)

    def test_unit_linear_critic_on_simplex(self, rng):
        s_r, s_f = random_simplex(rng, 10, 3), random_simplex(rng, 10, 3)
        w = Tensor(np.array([[1.0], [0.0], [0.0]]))
        gp = gradient_penalty(lambda s: (s @ w).reshape(10), s_r, s_f, rng)
        assert gp.item() == pytest.approx(0.0, abs=1e-9)

    def test_penalty_differentiates_into_weights(self, rng):
        """d/dw mean((|w|-1)²) = 2(|w|-1)·w/|w| for a linear critic."""
        w = Tensor(np.array([[3.0], [4.0]]), requires_grad=True)
        x = rng.normal(size=(4, 2))
        gradient_penalty(lambda x_hat: (x_hat @ w).reshape(4), x, x, rng).backward()
        np.testing.assert_allclose(w.grad, 2 * (5.0 - 1.0) * w.data / 5.0)

    def test_swapping_real_and_fake_mirrors_the_mixing_weights(self, rng):
        """gp(real, fake) under ε equals gp(fake, real) under 1 - ε."""
        critic = tanh_critic(rng, 16)
        x_r, x_f = rng.normal(loc=-1.0, size=(16, 2)), rng.normal(loc=1.5, size=(16, 2))
        direct = gradient_penalty(critic, x_r, x_f, np.random.default_rng(5)).item()
        swapped = gradient_penalty(critic, x_f, x_r, MirroredDraws(5)).item()
        assert swapped == pytest.approx(direct, rel=1e-9)

    def test_swapping_real_and_fake_keeps_penalty_distribution(self, rng):
        critic = tanh_critic(rng, 16)
        x_r, x_f = rng.normal(loc=-1.0, size=(16, 2)), rng.normal(loc=1.5, size=(16, 2))
        n = 1000
        forward = np.array([gradient_penalty(critic, x_r, x_f, rng).item() for _ in range(n)])
        backward = np.array([gradient_penalty(critic, x_f, x_r, rng).item() for _ in range(n)])
        spread = np.sqrt(forward.var(ddof=1) / n + backward.var(ddof=1) / n)
        assert spread > 0
        assert abs(forward.mean() - backward.mean()) <= 3 * spread

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            gradient_penalty(lambda x: x.sum(axis=1), np.zeros((2, 2)), np.zeros((3, 2)), rng)


class TestKlLosses:
    """KL-AC and KL-CP."""

    def test_kl_ac_perfect_prediction(self):
        y = one_hot([0, 2, 1], 3)
        assert kl_ac_loss_real(Tensor(y), y).item() == pytest.approx(0.0, abs=1e-12)

    def test_kl_ac_uniform_two_class(self):
        loss = kl_ac_loss_real(Tensor([[0.5, 0.5]]), one_hot([0], 2))
        assert loss.item() == pytest.approx(np.log(2))

    def test_kl_ac_matches_direct_kl(self, rng):
        s = random_simplex(rng, 30, 4)
        y = one_hot(rng.integers(0, 4, 30), 4)
        expected = kl_divergence(y, s).mean()
        assert kl_ac_loss_real(Tensor(s), y).item() == pytest.approx(expected, rel=1e-12)

    def test_kl_ac_gen_same_formula(self, rng):
        s = Tensor(random_simplex(rng, 12, 3))
        y = one_hot(rng.integers(0, 3, 12), 3)
        assert kl_ac_loss_gen(s, y).item() == kl_ac_loss_real(s, y).item()

    def test_kl_ac_rejects_soft_labels(self):
        with pytest.raises(SimplexError):
            kl_ac_loss_real(Tensor([[0.5, 0.5]]), np.array([[0.5, 0.5]]))

    def test_kl_cp_self_is_zero(self, rng):
        s = random_simplex(rng, 20, 5)
        assert kl_cp_loss(s, Tensor(s)).item() == pytest.approx(0.0, abs=1e-12)

    def test_kl_cp_hand_value(self):
        """(0.5, 0.5) against (0.9, 0.1) is 0.5·ln(0.5/0.9) + 0.5·ln(0.5/0.1)."""
        loss = kl_cp_loss(np.array([[0.5, 0.5]]), Tensor([[0.9, 0.1]]))
        expected = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
        assert loss.item() == pytest.approx(expected, rel=1e-12)
        assert loss.item() == pytest.approx(0.5109, abs=1e-4)

    def test_kl_cp_reduces_to_kl_ac_for_one_hot(self, rng):
        s_g = Tensor(random_simplex(rng, 25, 4))
        y = one_hot(rng.integers(0, 4, 25), 4)
        assert abs(kl_cp_loss(y, s_g).item() - kl_ac_loss_gen(s_g, y).item()) < 1e-12

    def test_kl_cp_no_gradient_into_target(self, rng):
        s_r = Tensor(random_simplex(rng, 4, 3), requires_grad=True)
        s_g = Tensor(random_simplex(rng, 4, 3), requires_grad=True)
        kl_cp_loss(s_r, s_g).backward()
        assert s_r.grad is None
        np.testing.assert_allclose(s_g.grad, -s_r.data / s_g.data / 4)

    def test_kl_cp_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            kl_cp_loss(random_simplex(rng, 2, 3), Tensor(random_simplex(rng, 3, 3)))

    def test_kl_properties_over_random_pairs(self, rng):
        """D_KL(p‖p) = 0 and D_KL(p‖q) ≥ 0 over 1000 pairs."""
        p, q = random_simplex(rng, 1000, 5), random_simplex(rng, 1000, 5)
        np.testing.assert_allclose(kl_divergence(p, p), 0.0, atol=1e-12)
        assert np.all(kl_divergence(p, q) >= -1e-12)


class TestCompose:
    """Composite objectives."""

    @pytest.fixture
    def terms(self):
        return LossTerms(
            gan_d=Tensor(0.5), gan_g=Tensor(-0.25), ac_r=Tensor(0.7), cls_g=Tensor(0.3), gp=Tensor(0.2),
        )

    def test_zero_weights_give_adversarial_values(self, terms):
        loss_d, loss_g = compose("CP-GAN", terms, 0.0, 0.0, 0.0)
        assert loss_d.item() == 0.5
        assert loss_g.item() == -0.25

    def test_default_weights(self, terms):
        loss_d, loss_g = compose("AC-GAN", terms, 1.0, 1.0, 0.1)
        assert loss_d.item() == pytest.approx(0.5 + 0.7 + 0.1 * 0.2)
        assert loss_g.item() == pytest.approx(-0.25 + 0.3)
        assert terms.composite_d is loss_d

    def test_concat_variant_ignores_classifier_terms(self, terms):
        loss_d, loss_g = compose("cGAN-concat", terms, 1.0, 1.0, 0.1)
        assert loss_d.item() == pytest.approx(0.5 + 0.02)
        assert loss_g.item() == pytest.approx(-0.25)

    def test_cp_with_one_hot_targets_equals_ac(self, rng):
        s_g = Tensor(random_simplex(rng, 16, 3))
        y = one_hot(rng.integers(0, 3, 16), 3)
        gan_g = Tensor(-0.4)
        _, cp = compose("CP-GAN", LossTerms(gan_g=gan_g, cls_g=kl_cp_loss(y, s_g)), 1.0, 1.0, 0.1)
        _, ac = compose("AC-GAN", LossTerms(gan_g=gan_g, cls_g=kl_ac_loss_gen(s_g, y)), 1.0, 1.0, 0.1)
        assert cp.item() == pytest.approx(ac.item(), abs=1e-12)

    def test_negative_weight(self, terms):
        with pytest.raises(ValueError, match="lambda_g"):
            compose("CP-GAN", terms, 1.0, -1.0, 0.1)

    def test_as_row_and_merge(self, terms):
        merged = LossTerms(gan_d=Tensor(1.0)).merge(LossTerms(gan_g=Tensor(2.0)))
        row = merged.as_row()
        assert row["gan_d"] == 1.0 and row["gan_g"] == 2.0 and row["gp"] is None


class TestGeneratorObjectiveGradients:
    """Generator weights through the ReLU nets and the softmax classifier head at width 16."""

    @pytest.mark.parametrize("variant, objective, mode", [
        ("AC-GAN", "classifier", "wgan"),
        ("CP-GAN", "classifier", "wgan"),
        ("AC-GAN", "composite", "wgan"),
        ("CP-GAN", "composite", "wgan"),
        ("CP-GAN", "composite", "nonsaturating"),
    ])
    def test_matches_finite_differences(self, variant, objective, mode, rng):
        config = TrainConfig(variant=variant, width=16, dropout=False, k_shared=1)
        bundle = build_models(config, 2, 3, rng)
        z = rng.standard_normal((6, config.z_dim))
        cond = random_simplex(rng, 6, 3) if variant == "CP-GAN" else one_hot(rng.integers(0, 3, 6), 3)

        def loss():
            x_g = bundle.generator(Tensor(z), Tensor(cond))
            scores, logits = bundle.critic.forward(x_g, train=False)
            log_s = logits.log_softmax(axis=1)
            s_g = log_s.exp()
            if variant == "CP-GAN":
                cls_g = kl_cp_loss(cond, s_g, log_s)
            else:
                cls_g = kl_ac_loss_gen(s_g, cond, log_s)
            if objective == "classifier":
                return cls_g
            terms = LossTerms(gan_g=generator_adversarial_loss(scores, mode), cls_g=cls_g)
            _, loss_g = compose(variant, terms, 1.0, 1.0, 0.1)
            return loss_g

        sampled_gradient_check(loss, bundle.generator.named_parameters(), rng)
