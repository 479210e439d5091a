"""
Synthetic class-overlap datasets.

A dataset is a mixture of fine Gaussian components. Each fine component
belongs to one or more coarse classes; a sampled point gets a single hard
label drawn uniformly from its component's membership set. Components in
exactly one class are class-distinct, the rest are class-mutual.
"""

import csv
import string
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from overlapgan.config import DatasetSpec
from overlapgan.errors import ConfigError
from overlapgan.tensor import Tensor

CLASS_NAMES = string.ascii_uppercase

# Log density below which float64 densities underflow to zero.
_LOG_TINY = float(np.log(np.finfo(np.float64).tiny))

RING_SCHEMES: dict[str, tuple[int, int, tuple[frozenset[int], ...]]] = {
    # A={9,0,1}, B={1,2,3}, C={3,4,5}, D={5,6,7}, E={7,8,9}
    "10to5": (10, 5, tuple(
        frozenset({i // 2}) if i % 2 == 0 else frozenset({i // 2, (i // 2 + 1) % 5})
        for i in range(10)
    )),
    # A={0,1,5,6}, B={1,2,3,6}, C={3,4,5,6}
    "7to3": (7, 3, (
        frozenset({0}), frozenset({0, 1}), frozenset({1}), frozenset({1, 2}),
        frozenset({2}), frozenset({0, 2}), frozenset({0, 1, 2}),
    )),
}


def class_name(j: int) -> str:
    return CLASS_NAMES[j]


def parse_class_label(label: str, c: int) -> frozenset[int]:
    """``"A"`` -> {0}; ``"A+B"`` -> {0, 1}."""
    members = set()
    for token in label.replace(",", "+").split("+"):
        token = token.strip().upper()
        if not token:
            continue
        if len(token) != 1 or token not in CLASS_NAMES[:c]:
            raise ConfigError(f"Unknown class {token!r}; expected one of {', '.join(CLASS_NAMES[:c])}")
        members.add(CLASS_NAMES.index(token))
    if not members:
        raise ConfigError(f"Empty class label {label!r}")
    return frozenset(members)


@dataclass(frozen=True)
class FineComponent:
    """One Gaussian of the mixture."""

    id: int
    mean: tuple[float, ...]
    covariance: tuple[tuple[float, ...], ...]
    weight: float

    @property
    def mean_array(self) -> np.ndarray:
        return np.array(self.mean, dtype=np.float64)

    @property
    def covariance_array(self) -> np.ndarray:
        return np.array(self.covariance, dtype=np.float64)

    def validate(self) -> list[str]:
        errors = []
        cov = self.covariance_array
        d = len(self.mean)
        if cov.shape != (d, d):
            errors.append(f"component {self.id}: covariance shape {cov.shape} does not match mean dim {d}")
            return errors
        if not np.allclose(cov, cov.T):
            errors.append(f"component {self.id}: covariance is not symmetric")
        else:
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                errors.append(f"component {self.id}: covariance is not positive-definite")
        if self.weight < 0:
            errors.append(f"component {self.id}: negative weight {self.weight}")
        return errors


@dataclass(frozen=True)
class OverlapScheme:
    """Which coarse classes each fine component belongs to."""

    c: int
    membership: tuple[frozenset[int], ...]
    name: str = "custom"

    def validate(self) -> list[str]:
        errors = []
        for i, members in enumerate(self.membership):
            if not members:
                errors.append(f"component {i} belongs to no class")
            bad = [j for j in members if not 0 <= j < self.c]
            if bad:
                errors.append(f"component {i} names classes outside 0..{self.c - 1}: {bad}")
        for j in range(self.c):
            if not self.class_members(j):
                errors.append(f"class {class_name(j)} contains no component")
        return errors

    @property
    def k(self) -> int:
        return len(self.membership)

    def class_members(self, j: int) -> list[int]:
        return [i for i, members in enumerate(self.membership) if j in members]

    def is_mutual(self, i: int) -> bool:
        return len(self.membership[i]) >= 2


@dataclass(frozen=True)
class OverlapDataset:
    """Immutable labeled mixture; construction validates everything."""

    name: str
    components: tuple[FineComponent, ...]
    scheme: OverlapScheme

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(f"Invalid dataset {self.name!r}", errors)

    def validate(self) -> list[str]:
        errors = []
        if len(self.components) != self.scheme.k:
            errors.append(f"{len(self.components)} components but membership lists {self.scheme.k}")
        dims = {len(comp.mean) for comp in self.components}
        if len(dims) > 1:
            errors.append(f"components disagree on dimension: {sorted(dims)}")
        for comp in self.components:
            errors.extend(comp.validate())
        total = sum(comp.weight for comp in self.components)
        if abs(total - 1.0) > 1e-9:
            errors.append(f"component weights sum to {total}, not 1")
        errors.extend(self.scheme.validate())
        return errors

    @property
    def dim(self) -> int:
        return len(self.components[0].mean)

    @property
    def c(self) -> int:
        return self.scheme.c

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([comp.weight for comp in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.stack([comp.mean_array for comp in self.components])

    def to_spec(self) -> dict:
        """Explicit (``kind="custom"``) dataset spec for the config file."""
        return {
            "kind": "custom",
            "name": self.name,
            "c": self.c,
            "means": [list(comp.mean) for comp in self.components],
            "covariances": [[list(row) for row in comp.covariance] for comp in self.components],
            "weights": [comp.weight for comp in self.components],
            "membership": [[class_name(j) for j in sorted(m)] for m in self.scheme.membership],
        }


@dataclass
class LabeledBatch:
    """Points with one-hot coarse labels and the fine component each came from."""

    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    components: np.ndarray

    def __len__(self) -> int:
        return int(self.x.shape[0])


class BayesPosterior(NamedTuple):
    probs: np.ndarray
    underflow: np.ndarray


def _isotropic(mean: tuple[float, ...], sigma: float) -> tuple[tuple[float, ...], ...]:
    d = len(mean)
    return tuple(tuple(sigma ** 2 if r == col else 0.0 for col in range(d)) for r in range(d))


def build_two_gaussian_toy(separation: float = 2.0, sigma: float = 1.0) -> OverlapDataset:
    """
    Two overlapping isotropic Gaussians, one per class.

    Means at ``(±separation/2, 0)``; keep ``separation < 4*sigma`` for a
    genuinely soft posterior in the overlap.
    """
    half = separation / 2.0
    components = (
        FineComponent(0, (-half, 0.0), _isotropic((0.0, 0.0), sigma), 0.5),
        FineComponent(1, (half, 0.0), _isotropic((0.0, 0.0), sigma), 0.5),
    )
    scheme = OverlapScheme(c=2, membership=(frozenset({0}), frozenset({1})), name="toy")
    return OverlapDataset("toy", components, scheme)


def build_ring_overlap(k_fine: int, scheme: str, radius: float = 4.0, sigma: float = 1.0) -> OverlapDataset:
    """
    ``k_fine`` unit Gaussians evenly spaced on a circle, grouped into
    overlapping coarse classes by ``scheme`` ("10to5" or "7to3").
    """
    if scheme not in RING_SCHEMES:
        raise ConfigError(f"Unknown overlap scheme {scheme!r}; expected one of {', '.join(RING_SCHEMES)}")
    expected_k, c, membership = RING_SCHEMES[scheme]
    if k_fine != expected_k:
        raise ConfigError(f"Scheme {scheme} needs k_fine={expected_k}, got {k_fine}")
    angles = 2.0 * np.pi * np.arange(k_fine) / k_fine
    components = tuple(
        FineComponent(
            i,
            (float(radius * np.cos(a)), float(radius * np.sin(a))),
            _isotropic((0.0, 0.0), sigma),
            1.0 / k_fine,
        )
        for i, a in enumerate(angles)
    )
    return OverlapDataset(f"ring-{scheme}", components, OverlapScheme(c=c, membership=membership, name=scheme))


def build_dataset(spec: DatasetSpec) -> OverlapDataset:
    """Materialize a dataset from its config-file spec."""
    if spec.kind == "toy":
        return build_two_gaussian_toy(spec.separation, spec.sigma)
    if spec.kind == "ring":
        return build_ring_overlap(spec.k_fine, spec.scheme, spec.radius, spec.sigma)
    if spec.kind == "custom":
        k = len(spec.means)
        weights = spec.weights or [1.0 / k] * k
        components = tuple(
            FineComponent(
                i,
                tuple(float(v) for v in spec.means[i]),
                tuple(tuple(float(v) for v in row) for row in spec.covariances[i]),
                float(weights[i]),
            )
            for i in range(k)
        )
        membership = tuple(parse_class_label("+".join(m), spec.c) for m in spec.membership)
        return OverlapDataset(spec.name or "custom", components, OverlapScheme(spec.c, membership))
    raise ConfigError(f"Unknown dataset kind {spec.kind!r}; expected toy, ring or custom")


def sample_batch(dataset: OverlapDataset, n: int, rng: np.random.Generator) -> LabeledBatch:
    """
    Draw ``n`` labeled points: component by weight, point from that Gaussian,
    hard label uniformly from the component's membership set.
    """
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    comps = rng.choice(dataset.k, size=n, p=dataset.weights)
    noise = rng.standard_normal((n, dataset.dim))
    chol = np.stack([np.linalg.cholesky(comp.covariance_array) for comp in dataset.components])
    x = dataset.means[comps] + np.einsum("nij,nj->ni", chol[comps], noise)

    sizes = np.array([len(m) for m in dataset.scheme.membership])
    table = np.zeros((dataset.k, sizes.max()), dtype=np.int64)
    for i, members in enumerate(dataset.scheme.membership):
        table[i, : len(members)] = sorted(members)
    pick = np.floor(rng.random(n) * sizes[comps]).astype(np.int64)
    labels = table[comps, pick]

    y = np.zeros((n, dataset.c))
    y[np.arange(n), labels] = 1.0
    return LabeledBatch(x=x, y=y, labels=labels, components=comps)


def sample_component(dataset: OverlapDataset, component: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points from a single fine component."""
    comp = dataset.components[component]
    chol = np.linalg.cholesky(comp.covariance_array)
    return comp.mean_array + rng.standard_normal((n, dataset.dim)) @ chol.T


def _log_joint(x: np.ndarray, dataset: OverlapDataset) -> np.ndarray:
    """log(weight_i * N(x; mu_i, Sigma_i)) for every point/component."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cols = [
        np.log(comp.weight) + multivariate_normal(comp.mean_array, comp.covariance_array).logpdf(x)
        for comp in dataset.components
    ]
    return np.asarray(cols).reshape(dataset.k, -1).T


def fine_responsibilities(x: np.ndarray, dataset: OverlapDataset) -> np.ndarray:
    """Posterior over fine components, shape (n, k)."""
    log_joint = _log_joint(x, dataset)
    return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def oracle_component(x: np.ndarray, dataset: OverlapDataset) -> np.ndarray:
    """Bayes-optimal fine component for each point."""
    return np.argmax(_log_joint(x, dataset), axis=1)


def bayes_posterior(x: np.ndarray, dataset: OverlapDataset) -> BayesPosterior:
    """
    Analytic class posterior under uniform label assignment.

    p(j|x) ∝ Σ_{i: j ∈ M_i} w_i N(x; mu_i, Sigma_i) / |M_i|. Points where every
    density underflows (or that are not finite) get the uniform vector and
    ``underflow=True``. A single point in gives a single row out.

    Note:
        The underflow test looks at the largest log-joint only, so far-tail
        points such as ``(-40, 0)`` on the toy come back uniform and flagged
        even though a log-space normalization could still resolve them.
        Callers that need the tail should check ``underflow``.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    single = x_arr.ndim == 1
    x2 = np.atleast_2d(x_arr)

    finite = np.all(np.isfinite(x2), axis=1)
    safe_x = np.where(finite[:, None], x2, 0.0)
    log_joint = _log_joint(safe_x, dataset)
    peak = log_joint.max(axis=1)
    underflow = (~finite) | (peak < _LOG_TINY)

    resp = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
    split = np.zeros((dataset.k, dataset.c))
    for i, members in enumerate(dataset.scheme.membership):
        split[i, list(members)] = 1.0 / len(members)
    probs = resp @ split
    probs /= probs.sum(axis=1, keepdims=True)
    probs[underflow] = 1.0 / dataset.c

    if single:
        return BayesPosterior(probs[0], underflow[:1])
    return BayesPosterior(probs, underflow)


def sample_noise(n: int, dim: int, rng: np.random.Generator) -> Tensor:
    """i.i.d. N(0, I) noise as a constant Tensor of shape (n, dim)."""
    if n < 1 or dim < 1:
        raise ValueError(f"noise shape must be positive, got ({n}, {dim})")
    return Tensor(rng.standard_normal((n, dim)))


def sample_categorical(n: int, c: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform one-hot rows and their class indices."""
    if n < 1 or c < 1:
        raise ValueError(f"categorical shape must be positive, got ({n}, {c})")
    idx = rng.integers(0, c, size=n)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), idx] = 1.0
    return onehot, idx


def write_dataset_csv(batch: LabeledBatch, path: str | Path) -> Path:
    """Write ``x0,x1,...,coarse_label,fine_component`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = batch.x.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(d)] + ["coarse_label", "fine_component"])
        for point, label, comp in zip(batch.x, batch.labels, batch.components):
            writer.writerow([repr(float(v)) for v in point] + [class_name(int(label)), int(comp)])
    return path
