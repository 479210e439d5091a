"""
Networks for the toy experiments.

- ``GeneratorNet``: G(z, cond), conditioned by concatenating [z ; cond].
- ``DiscClassifierNet``: critic D and auxiliary classifier C sharing the
  first ``k_shared`` hidden layers.
- ``PGanNets``: G_p / D_p over classifier posteriors.
"""

from dataclasses import dataclass, field

import numpy as np

from overlapgan.config import TrainConfig
from overlapgan.errors import ShapeError, SimplexError
from overlapgan.nn import Linear, Module, mlp_layers
from overlapgan.tensor import Tensor, concat

HIDDEN_LAYERS = 3
SIMPLEX_TOL = 1e-6


def _as_constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def check_simplex(rows: np.ndarray, tol: float = SIMPLEX_TOL, label: str = "condition") -> None:
    """Raise ``SimplexError`` unless every row is a probability vector within ``tol``."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if not np.all(np.isfinite(rows)):
        raise SimplexError(f"{label} rows contain non-finite values")
    if np.any(rows < -tol):
        raise SimplexError(f"{label} rows have negative entries (min {rows.min():.3g})")
    worst = float(np.max(np.abs(rows.sum(axis=1) - 1.0))) if rows.size else 0.0
    if worst > tol:
        raise SimplexError(f"{label} rows do not sum to 1 (worst deviation {worst:.3g})")


class GeneratorNet(Module):
    """MLP generator over [z ; cond] with ``HIDDEN_LAYERS`` ReLU layers."""

    def __init__(self, z_dim: int, c: int, width: int, out_dim: int, rng: np.random.Generator):
        self.z_dim = z_dim
        self.c = c
        self.width = width
        self.out_dim = out_dim
        self.layers = mlp_layers([z_dim + c] + [width] * HIDDEN_LAYERS + [out_dim], rng)

    def __call__(self, z: Tensor, cond: Tensor) -> Tensor:
        h = concat([z, cond], axis=1)
        for layer in self.layers[:-1]:
            h = layer(h).relu()
        return self.layers[-1](h)


def generate(net: GeneratorNet, z, cond) -> Tensor:
    """
    x^g = G(z, cond).

    ``cond`` rows must be one-hot or simplex vectors; deterministic given the
    weights and inputs.
    """
    z, cond = _as_constant(z), _as_constant(cond)
    if z.ndim != 2 or z.shape[1] != net.z_dim:
        raise ShapeError("generate (noise)", z.shape, (z.shape[0] if z.ndim else 0, net.z_dim))
    if cond.ndim != 2 or cond.shape != (z.shape[0], net.c):
        raise ShapeError("generate (condition)", cond.shape, (z.shape[0], net.c))
    check_simplex(cond.data)
    return net(z, cond)


class DiscClassifierNet(Module):
    """
    Critic D(x) and classifier C(y|x) with a shared trunk.

    Hidden layer ``i`` (0-based, counted through the trunk and then each
    branch) uses ``dropout_rates[i]``. With ``k_shared == 3`` the two heads
    differ only in their final FC. ``cond_dim > 0`` concatenates a condition
    to the input (cGAN-concat critic) and then there is no classifier.
    """

    def __init__(self, in_dim: int, c: int, width: int, k_shared: int, dropout_rates: list[float],
                 rng: np.random.Generator, cond_dim: int = 0, with_classifier: bool = True):
        if not 0 <= k_shared <= HIDDEN_LAYERS:
            raise ValueError(f"k_shared must lie in 0..{HIDDEN_LAYERS}, got {k_shared}")
        if cond_dim and with_classifier:
            raise ValueError("a concat-conditioned critic carries no classifier head")
        self.in_dim = in_dim
        self.c = c
        self.cond_dim = cond_dim
        self.k_shared = k_shared
        self.dropout_rates = list(dropout_rates)
        self.has_classifier = with_classifier
        self.trained_iters = 0

        input_dim = in_dim + cond_dim
        self.trunk = mlp_layers([input_dim] + [width] * k_shared, rng)
        branch_in = width if k_shared else input_dim
        private = HIDDEN_LAYERS - k_shared
        self.d_branch = mlp_layers([branch_in] + [width] * private, rng)
        self.d_head = Linear(width, 1, rng)
        if with_classifier:
            self.c_branch = mlp_layers([branch_in] + [width] * private, rng)
            self.c_head = Linear(width, c, rng)

    def _hidden(self, h: Tensor, layers: list[Linear], offset: int, train: bool,
                rng: np.random.Generator | None) -> Tensor:
        for i, layer in enumerate(layers):
            h = layer(h).relu().dropout(self.dropout_rates[offset + i], train, rng)
        return h

    def forward(self, x, cond=None, train: bool = False, rng: np.random.Generator | None = None,
                want_scores: bool = True, want_logits: bool = True) -> tuple[Tensor | None, Tensor | None]:
        """
        Run the trunk once and whichever heads are asked for.

        Returns:
            (critic scores of shape (n,), classifier logits of shape (n, c)).
        """
        x = _as_constant(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError("critic input", x.shape, (x.shape[0] if x.ndim else 0, self.in_dim))
        h = x
        if self.cond_dim:
            if cond is None:
                raise ValueError("this critic is conditioned; pass cond")
            h = concat([x, _as_constant(cond)], axis=1)
        h = self._hidden(h, self.trunk, 0, train, rng)

        scores = logits = None
        if want_scores:
            d = self._hidden(h, self.d_branch, self.k_shared, train, rng)
            scores = self.d_head(d).reshape(x.shape[0])
        if want_logits and self.has_classifier:
            k = self._hidden(h, self.c_branch, self.k_shared, train, rng)
            logits = self.c_head(k)
        return scores, logits

    def discriminate(self, x, cond=None, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Raw critic score (no sigmoid)."""
        scores, _ = self.forward(x, cond, train, rng, want_logits=False)
        return scores

    def classify_logits(self, x, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if not self.has_classifier:
            raise ValueError("this critic has no classifier head")
        _, logits = self.forward(x, None, train, rng, want_scores=False)
        return logits

    def classify(self, x, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Posterior C(y|x); rows on the simplex."""
        return self.classify_logits(x, train, rng).softmax(axis=1)


def discriminate(net: DiscClassifierNet, x, cond=None) -> Tensor:
    return net.discriminate(x, cond)


def classify(net: DiscClassifierNet, x) -> Tensor:
    return net.classify(x)


class PosteriorGenerator(Module):
    """G_p(z_p, y_p): MLP over [z_p ; y_p] ending in a softmax over c classes."""

    def __init__(self, c: int, width: int, rng: np.random.Generator):
        self.c = c
        self.layers = mlp_layers([2 * c] + [width] * HIDDEN_LAYERS + [c], rng)

    def logits(self, z: Tensor, y: Tensor) -> Tensor:
        h = concat([z, y], axis=1)
        for layer in self.layers[:-1]:
            h = layer(h).relu()
        return self.layers[-1](h)

    def __call__(self, z: Tensor, y: Tensor) -> Tensor:
        return self.logits(z, y).softmax(axis=1)


class PosteriorCritic(Module):
    """D_p(s, y): each hidden ReLU output gets a learned projection of y added."""

    def __init__(self, c: int, width: int, rng: np.random.Generator):
        self.c = c
        self.layers = mlp_layers([c] + [width] * HIDDEN_LAYERS, rng)
        self.cond_proj = [Linear(c, width, rng) for _ in range(HIDDEN_LAYERS)]
        self.head = Linear(width, 1, rng)

    def __call__(self, s: Tensor, y: Tensor) -> Tensor:
        h = _as_constant(s)
        y = _as_constant(y)
        for layer, proj in zip(self.layers, self.cond_proj):
            h = layer(h).relu() + proj(y)
        return self.head(h).reshape(h.shape[0])


@dataclass
class PGanNets(Module):
    generator: PosteriorGenerator
    critic: PosteriorCritic
    c: int


def build_pgan(c: int, width: int, rng: np.random.Generator) -> PGanNets:
    return PGanNets(PosteriorGenerator(c, width, rng), PosteriorCritic(c, width, rng), c)


def pgan_sample(nets: PGanNets, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw (s^g_p, y^g_p): categorical labels and the posteriors G_p produces
    for them from z_p ~ N(0, I_c).
    """
    labels = rng.integers(0, nets.c, size=n)
    y = np.zeros((n, nets.c))
    y[np.arange(n), labels] = 1.0
    z = rng.standard_normal((n, nets.c))
    s = nets.generator(Tensor(z), Tensor(y)).data
    return s, y


@dataclass
class ModelBundle(Module):
    """Generator plus critic/classifier for one variant, optionally a pGAN."""

    variant: str
    generator: GeneratorNet
    critic: DiscClassifierNet
    pgan: PGanNets | None = None
    iteration: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def conditions_critic(self) -> bool:
        return self.variant == "cGAN-concat"


def effective_dropout_rates(config: TrainConfig) -> list[float]:
    return list(config.dropout_rates) if config.dropout else [0.0] * HIDDEN_LAYERS


def build_models(config: TrainConfig, data_dim: int, c: int, rng: np.random.Generator) -> ModelBundle:
    """Instantiate the networks a variant needs, all weights drawn from ``rng``."""
    generator = GeneratorNet(config.z_dim, c, config.width, data_dim, rng)
    concat_critic = config.variant == "cGAN-concat"
    critic = DiscClassifierNet(
        data_dim,
        c,
        config.width,
        config.k_shared,
        effective_dropout_rates(config),
        rng,
        cond_dim=c if concat_critic else 0,
        with_classifier=not concat_critic,
    )
    return ModelBundle(config.variant, generator, critic)
