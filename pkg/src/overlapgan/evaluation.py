"""
Evaluation against the analytic Bayes oracle.

- DMA: for every class-distinct and class-mutual condition state, the share
  of generated points whose oracle fine component is the state's own.
- Fréchet distance between Gaussian fits, in raw data space.
- Mean posterior matrices (real classifier vs pGAN).
- Class-wise interpolation traces and posterior-entropy profiles.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from overlapgan.data import (
    LabeledBatch,
    OverlapDataset,
    OverlapScheme,
    bayes_posterior,
    class_name,
    oracle_component,
    sample_batch,
    sample_categorical,
    sample_component,
)
from overlapgan.errors import EvalError
from overlapgan.losses import kl_divergence
from overlapgan.models import GeneratorNet, ModelBundle, PGanNets, generate, pgan_sample
from overlapgan.tensor import no_grad

# cond rows (n, c) + rng -> points (n, d)
Sampler = Callable[[np.ndarray, np.random.Generator], np.ndarray]
# points (n, d) -> posteriors (n, c)
PosteriorFn = Callable[[np.ndarray], np.ndarray]

COVARIANCE_JITTER = 1e-6


@dataclass(frozen=True)
class ConditionState:
    """A class combination, its condition vector and the fine component it should produce."""

    label: frozenset[int]
    vector: tuple[float, ...]
    component: int

    @property
    def name(self) -> str:
        return "∩".join(class_name(j) for j in sorted(self.label))

    @property
    def is_mutual(self) -> bool:
        return len(self.label) >= 2

    @property
    def array(self) -> np.ndarray:
        return np.array(self.vector)


def condition_vector(label: frozenset[int], c: int) -> tuple[float, ...]:
    """Mean of the member one-hot vectors."""
    vec = np.zeros(c)
    vec[list(label)] = 1.0 / len(label)
    return tuple(float(v) for v in vec)


def enumerate_states(scheme: OverlapScheme) -> list[ConditionState]:
    """One state per fine component, distinct and mutual alike."""
    return [
        ConditionState(members, condition_vector(members, scheme.c), i)
        for i, members in enumerate(scheme.membership)
    ]


def find_state(scheme: OverlapScheme, label: frozenset[int]) -> ConditionState:
    """The state for ``label``; labels with no matching component still get a vector."""
    for state in enumerate_states(scheme):
        if state.label == label:
            return state
    return ConditionState(label, condition_vector(label, scheme.c), -1)


def generator_sampler(net: GeneratorNet) -> Sampler:
    """Adapt a generator to the ``Sampler`` protocol (fresh z per call)."""

    def sample(cond: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((cond.shape[0], net.z_dim))
        with no_grad():
            return generate(net, z, cond).data

    return sample


def classifier_posterior(bundle: ModelBundle) -> PosteriorFn:
    """Eval-mode classifier of a bundle as a ``PosteriorFn``."""

    def posterior(x: np.ndarray) -> np.ndarray:
        with no_grad():
            return bundle.critic.classify(x, train=False).data

    return posterior


def oracle_posterior(dataset: OverlapDataset) -> PosteriorFn:
    return lambda x: bayes_posterior(x, dataset).probs


# ── DMA ─────────────────────────────────────────────────────────


@dataclass
class DmaResult:
    per_state: dict[str, float]
    mean: float

    def to_dict(self) -> dict:
        return {"dma_per_state": dict(self.per_state), "dma_mean": self.mean}


def dma(sampler: Sampler, dataset: OverlapDataset, n_per_state: int, rng: np.random.Generator) -> DmaResult:
    """
    Class-distinct and class-mutual accuracy.

    Each state's accuracy is the fraction of ``n_per_state`` points generated
    from its condition vector whose oracle fine component is the state's
    own; the mean is unweighted over states.
    """
    if n_per_state < 1:
        raise EvalError(f"n_per_state must be >= 1, got {n_per_state}")
    per_state: dict[str, float] = {}
    for state in enumerate_states(dataset.scheme):
        cond = np.tile(state.array, (n_per_state, 1))
        points = sampler(cond, rng)
        if not np.all(np.isfinite(points)):
            raise EvalError(f"generator produced non-finite points for state {state.name}")
        per_state[state.name] = float(np.mean(oracle_component(points, dataset) == state.component))
    return DmaResult(per_state, float(np.mean(list(per_state.values()))))


def voronoi_shares(dataset: OverlapDataset, low: np.ndarray, high: np.ndarray, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo share of the box [low, high] that the oracle assigns to each component."""
    points = rng.uniform(low, high, size=(n, dataset.dim))
    counts = np.bincount(oracle_component(points, dataset), minlength=dataset.k)
    return counts / n


# ── Fréchet distance ────────────────────────────────────────────


@dataclass
class FrechetResult:
    value: float
    regularized: bool = False

    def __float__(self) -> float:
        return self.value


def _fit_gaussian(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    mu = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    if np.min(np.linalg.eigvalsh(cov)) <= 1e-12:
        return mu, cov + COVARIANCE_JITTER * np.eye(cov.shape[0]), True
    return mu, cov, False


def frechet_distance(samples_a: np.ndarray, samples_b: np.ndarray) -> FrechetResult:
    """
    d² = ‖μ_a - μ_b‖² + Tr(Σ_a + Σ_b - 2(Σ_a Σ_b)^{1/2}).

    2-D uses the closed form Tr √M = √(Tr M + 2√det M); other dimensions go
    through ``scipy.linalg.sqrtm``. Singular covariances get +1e-6·I and the
    result is flagged.
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise EvalError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    if len(a) < d + 1 or len(b) < d + 1:
        raise EvalError(f"Fréchet distance needs at least {d + 1} samples per set")

    mu_a, cov_a, reg_a = _fit_gaussian(a)
    mu_b, cov_b, reg_b = _fit_gaussian(b)
    product = cov_a @ cov_b
    if d == 2:
        det = max(float(np.linalg.det(product)), 0.0)
        trace_sqrt = float(np.sqrt(max(np.trace(product) + 2.0 * np.sqrt(det), 0.0)))
    else:
        trace_sqrt = float(np.real(np.trace(scipy.linalg.sqrtm(product))))
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return FrechetResult(max(value, 0.0), reg_a or reg_b)


def simplex_coordinates(posteriors: np.ndarray) -> np.ndarray:
    """Drop the last (redundant) coordinate of simplex rows."""
    posteriors = np.atleast_2d(posteriors)
    return posteriors[:, :-1] if posteriors.shape[1] > 1 else posteriors


# ── posterior matrices ──────────────────────────────────────────


def posterior_matrix(posteriors: np.ndarray, labels: np.ndarray, c: int) -> np.ndarray:
    """Row j = mean posterior over samples whose conditioning class is j."""
    posteriors = np.atleast_2d(posteriors)
    labels = np.asarray(labels)
    matrix = np.zeros((c, c))
    for j in range(c):
        rows = posteriors[labels == j]
        if len(rows) == 0:
            raise EvalError(f"no samples conditioned on class {class_name(j)}")
        matrix[j] = rows.mean(axis=0)
    return matrix


def real_posterior_matrix(posterior_fn: PosteriorFn, dataset: OverlapDataset, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Posterior matrix of a classifier (or the oracle) over real labeled data."""
    batch = sample_batch(dataset, n, rng)
    return posterior_matrix(posterior_fn(batch.x), batch.labels, dataset.c)


def pgan_posterior_matrix(nets: PGanNets, n: int, rng: np.random.Generator) -> np.ndarray:
    """Posterior matrix of pGAN samples grouped by their conditioning label."""
    with no_grad():
        s, y = pgan_sample(nets, n, rng)
    return posterior_matrix(s, np.argmax(y, axis=1), nets.c)


# ── interpolation ───────────────────────────────────────────────


@dataclass
class Interpolation:
    t: np.ndarray
    conditions: np.ndarray
    points: np.ndarray


def interpolate(net: GeneratorNet, state_from: ConditionState, state_to: ConditionState, steps: int,
                z: np.ndarray) -> Interpolation:
    """
    Linearly move the condition from one state to another with z fixed.

    One generator call per step, each on a single row, so the endpoints are
    bitwise equal to ``generate`` at the two states.
    """
    if steps < 2:
        raise EvalError(f"interpolation needs steps >= 2, got {steps}")
    z = np.asarray(z, dtype=np.float64).reshape(1, net.z_dim)
    start, stop = state_from.array, state_to.array
    t = np.linspace(0.0, 1.0, steps)
    conditions = np.stack([(1.0 - ti) * start + ti * stop for ti in t])
    points = []
    with no_grad():
        for cond in conditions:
            points.append(generate(net, z, cond[None, :]).data[0])
    return Interpolation(t, conditions, np.stack(points))


# ── entropy profile ─────────────────────────────────────────────


@dataclass
class EntropyProfile:
    mean: float
    std: float
    quantiles: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "quantiles": dict(self.quantiles)}


def posterior_entropy(posteriors: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(posteriors)
    return -np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum(axis=1)


def posterior_entropy_profile(samples: np.ndarray, oracle: PosteriorFn) -> EntropyProfile:
    """Mean, spread and quantiles of the oracle-posterior entropy (nats) over samples."""
    entropy = posterior_entropy(oracle(np.atleast_2d(samples)))
    levels = (0.05, 0.25, 0.5, 0.75, 0.95)
    return EntropyProfile(
        float(entropy.mean()),
        float(entropy.std()),
        {f"q{int(q * 100):02d}": float(np.quantile(entropy, q)) for q in levels},
    )


# ── whole-model evaluation ──────────────────────────────────────


def generation_conditions(bundle: ModelBundle, dataset: OverlapDataset, n: int,
                          rng: np.random.Generator) -> tuple[np.ndarray, LabeledBatch | None]:
    """
    Conditions for drawing from p^g: classifier posteriors of fresh real
    data for CP-GAN, uniform one-hots otherwise.
    """
    if bundle.variant == "CP-GAN":
        batch = sample_batch(dataset, n, rng)
        return classifier_posterior(bundle)(batch.x), batch
    onehot, _ = sample_categorical(n, dataset.c, rng)
    return onehot, None


def mean_posterior_kl(bundle: ModelBundle, dataset: OverlapDataset, n: int,
                      rng: np.random.Generator) -> float | None:
    """
    mean D_KL(s^r ‖ s^g) over paired draws: s^r = C(x^r), s^g = C(G(z, s^r)).

    ``None`` for variants without a classifier.
    """
    if not bundle.critic.has_classifier:
        return None
    batch = sample_batch(dataset, n, rng)
    classify = classifier_posterior(bundle)
    s_r = classify(batch.x)
    x_g = generator_sampler(bundle.generator)(s_r, rng)
    return float(np.mean(kl_divergence(s_r, classify(x_g))))


@dataclass
class EvalReport:
    dma_per_state: dict[str, float]
    dma_mean: float
    frechet_global: float
    frechet_regularized: bool
    frechet_per_state: dict[str, float]
    posterior_matrix: list[list[float]]
    posterior_matrix_source: str
    entropy_profile: dict
    entropy_reference: dict
    mean_posterior_kl: float | None

    def to_dict(self) -> dict:
        return {
            "dma_per_state": self.dma_per_state,
            "dma_mean": self.dma_mean,
            "frechet_global": self.frechet_global,
            "frechet_regularized": self.frechet_regularized,
            "frechet_per_state_extension": self.frechet_per_state,
            "posterior_matrix": self.posterior_matrix,
            "posterior_matrix_source": self.posterior_matrix_source,
            "entropy_profile": self.entropy_profile,
            "entropy_reference": self.entropy_reference,
            "mean_posterior_kl": self.mean_posterior_kl,
        }


def quick_metrics(bundle: ModelBundle, dataset: OverlapDataset, n_per_state: int, n_global: int,
                  rng: np.random.Generator) -> dict[str, float | None]:
    """The eval columns of the training metrics log."""
    sampler = generator_sampler(bundle.generator)
    dma_result = dma(sampler, dataset, n_per_state, rng)
    cond, _ = generation_conditions(bundle, dataset, n_global, rng)
    generated = sampler(cond, rng)
    real = sample_batch(dataset, n_global, rng).x
    return {
        "dma": dma_result.mean,
        "frechet": frechet_distance(real, generated).value,
        "mean_posterior_kl": mean_posterior_kl(bundle, dataset, n_global, rng),
    }


def evaluate(bundle: ModelBundle, dataset: OverlapDataset, n_per_state: int, n_global: int,
             rng: np.random.Generator) -> EvalReport:
    """Full evaluation of a trained bundle."""
    sampler = generator_sampler(bundle.generator)
    dma_result = dma(sampler, dataset, n_per_state, rng)

    cond, _ = generation_conditions(bundle, dataset, n_global, rng)
    generated = sampler(cond, rng)
    real = sample_batch(dataset, n_global, rng).x
    global_fd = frechet_distance(real, generated)

    per_state_fd = {}
    for state in enumerate_states(dataset.scheme):
        fake = sampler(np.tile(state.array, (n_per_state, 1)), rng)
        ref = sample_component(dataset, state.component, n_per_state, rng)
        per_state_fd[state.name] = frechet_distance(ref, fake).value

    if bundle.critic.has_classifier:
        matrix = real_posterior_matrix(classifier_posterior(bundle), dataset, n_global, rng)
        source = "classifier"
    else:
        matrix = real_posterior_matrix(oracle_posterior(dataset), dataset, n_global, rng)
        source = "bayes"

    oracle = oracle_posterior(dataset)
    return EvalReport(
        dma_per_state=dma_result.per_state,
        dma_mean=dma_result.mean,
        frechet_global=global_fd.value,
        frechet_regularized=global_fd.regularized,
        frechet_per_state=per_state_fd,
        posterior_matrix=matrix.tolist(),
        posterior_matrix_source=source,
        entropy_profile=posterior_entropy_profile(generated, oracle).to_dict(),
        entropy_reference=posterior_entropy_profile(real, oracle).to_dict(),
        mean_posterior_kl=mean_posterior_kl(bundle, dataset, n_global, rng),
    )
