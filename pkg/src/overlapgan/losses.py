"""
Training objectives.

Adversarial terms (WGAN and the non-saturating log-sigmoid form), the
gradient penalty, KL-AC on real/generated data, KL-CP, the pGAN losses and
the composite D/C and G objectives. All logs are natural logs.
"""

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from overlapgan.errors import ShapeError, SimplexError
from overlapgan.models import check_simplex
from overlapgan.tensor import PROB_FLOOR, Tensor, ensure_finite, grad

CLASSIFIER_VARIANTS = ("AC-GAN", "CP-GAN")


def _values(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


def _check_one_hot(y: np.ndarray, label: str) -> None:
    check_simplex(y, label=label)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise SimplexError(f"{label} rows must be one-hot")


def adversarial_loss(d_real: Tensor, d_fake: Tensor, mode: str = "wgan") -> tuple[Tensor, Tensor]:
    """
    Critic-side and generator-side adversarial terms.

    ``wgan``: (mean(d_fake) - mean(d_real), -mean(d_fake)).
    ``nonsaturating``: (-[mean log σ(d_real) + mean log(1-σ(d_fake))], -mean log σ(d_fake)).
    """
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("adversarial_loss needs non-empty real and fake batches")
    if mode == "wgan":
        return d_fake.mean() - d_real.mean(), generator_adversarial_loss(d_fake, mode)
    if mode == "nonsaturating":
        d_part = -(d_real.log_sigmoid().mean() + (-d_fake).log_sigmoid().mean())
        return d_part, generator_adversarial_loss(d_fake, mode)
    raise ValueError(f"Unknown adversarial mode {mode!r}; expected wgan or nonsaturating")


def generator_adversarial_loss(d_fake: Tensor, mode: str = "wgan") -> Tensor:
    """The generator-side term of ``adversarial_loss`` alone."""
    if d_fake.size == 0:
        raise ValueError("adversarial_loss needs a non-empty fake batch")
    if mode == "wgan":
        return -d_fake.mean()
    if mode == "nonsaturating":
        return -(d_fake.log_sigmoid().mean())
    raise ValueError(f"Unknown adversarial mode {mode!r}; expected wgan or nonsaturating")


def gradient_penalty(critic: Callable[[Tensor], Tensor], x_real, x_fake, rng: np.random.Generator) -> Tensor:
    """
    mean over x̂ = εx_real + (1-ε)x_fake of (‖∇_x̂ critic(x̂)‖₂ - 1)², ε ~ U(0,1) per row.

    The inner gradient is recorded on the tape so the penalty can be
    differentiated with respect to the critic's weights.

    Raises:
        ShapeError: If the two batches differ in shape.
        NonFiniteError: If a gradient norm is NaN or infinite.
    """
    real, fake = _values(x_real), _values(x_fake)
    if real.shape != fake.shape:
        raise ShapeError("gradient_penalty", real.shape, fake.shape)
    eps = rng.random((real.shape[0], 1))
    x_hat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    scores = critic(x_hat)
    (x_grad,) = grad(scores.sum(), [x_hat], create_graph=True)
    norms = x_grad.row_norm()
    ensure_finite("gradient-penalty norm", norms)
    return ((norms - 1.0) ** 2).mean()


def kl_ac_loss_real(s_r: Tensor, y_r, log_s: Tensor | None = None) -> Tensor:
    """
    mean -y·log s over the batch; equals D_KL(y‖s) for one-hot y.

    Pass ``log_s`` (a log-softmax) to skip the clamped log of ``s_r``.
    """
    y = _values(y_r)
    check_simplex(_values(s_r), label="classifier posterior")
    _check_one_hot(y, "labels")
    if y.shape != s_r.shape:
        raise ShapeError("kl_ac_loss", s_r.shape, y.shape)
    log_s = s_r.safe_log() if log_s is None else log_s
    return (-(Tensor(y) * log_s).sum(axis=1)).mean()


def kl_ac_loss_gen(s_g: Tensor, y_g, log_s: Tensor | None = None) -> Tensor:
    """KL-AC on generated data: same formula as ``kl_ac_loss_real`` with (s^g, y^g)."""
    return kl_ac_loss_real(s_g, y_g, log_s)


def kl_cp_loss(s_r, s_g: Tensor, log_s_g: Tensor | None = None) -> Tensor:
    """
    mean_rows D_KL(s^r ‖ s^g) with 0·log 0 := 0.

    ``s_r`` is a constant target: no gradient flows into it.
    """
    target = _values(s_r)
    check_simplex(target, label="real posterior")
    check_simplex(_values(s_g), label="generated posterior")
    if target.shape != s_g.shape:
        raise ShapeError("kl_cp_loss", target.shape, s_g.shape)
    log_s_g = s_g.safe_log() if log_s_g is None else log_s_g
    entropy_part = np.where(target > 0, target * np.log(np.maximum(target, PROB_FLOOR)), 0.0).sum(axis=1)
    cross = (Tensor(target) * log_s_g).sum(axis=1)
    return (Tensor(entropy_part) - cross).mean()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise D_KL(p‖q) in nats on plain arrays, 0·log 0 := 0."""
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    log_ratio = np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR))
    return np.where(p > 0, p * log_ratio, 0.0).sum(axis=1)


def pgan_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """pGAN objective over D_p(s^r, y^r) / D_p(G_p(z_p, y_p), y_p); WGAN form."""
    return adversarial_loss(d_real, d_fake, mode="wgan")


@dataclass
class LossTerms:
    """Loss components of one step and the composites built from them."""

    gan_d: Tensor | None = None
    gan_g: Tensor | None = None
    ac_r: Tensor | None = None
    cls_g: Tensor | None = None
    gp: Tensor | None = None
    composite_d: Tensor | None = None
    composite_g: Tensor | None = None

    def as_row(self) -> dict[str, float | None]:
        return {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name).item())
                for f in fields(self)}

    def merge(self, other: "LossTerms") -> "LossTerms":
        """Fields set in ``other`` win."""
        merged = LossTerms()
        for f in fields(self):
            value = getattr(other, f.name)
            setattr(merged, f.name, value if value is not None else getattr(self, f.name))
        return merged


def compose(variant: str, terms: LossTerms, lambda_r: float, lambda_g: float,
            lambda_gp: float) -> tuple[Tensor | None, Tensor | None]:
    """
    L_D/C = gan_d + λ^r ac_r (+ λ_GP gp);  L_G = gan_g + λ^g cls_g.

    cGAN-concat has no classifier terms. A side whose adversarial term is
    missing comes back as ``None``. The composites are also stored on
    ``terms``.
    """
    for name, value in (("lambda_r", lambda_r), ("lambda_g", lambda_g), ("lambda_gp", lambda_gp)):
        if value < 0:
            raise ValueError(f"{name} must be non-negative, got {value}")
    uses_classifier = variant in CLASSIFIER_VARIANTS
    if not uses_classifier and variant != "cGAN-concat":
        raise ValueError(f"Unknown variant {variant!r}")

    loss_d = None
    if terms.gan_d is not None:
        loss_d = terms.gan_d
        if uses_classifier and terms.ac_r is not None:
            loss_d = loss_d + terms.ac_r * lambda_r
        if terms.gp is not None:
            loss_d = loss_d + terms.gp * lambda_gp

    loss_g = None
    if terms.gan_g is not None:
        loss_g = terms.gan_g
        if uses_classifier and terms.cls_g is not None:
            loss_g = loss_g + terms.cls_g * lambda_g

    terms.composite_d = loss_d
    terms.composite_g = loss_g
    return loss_d, loss_g
