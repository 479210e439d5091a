"""
Configuration for OverlapGAN.

Two layers:
- ``Settings``: process-level knobs from environment variables / ``.env``.
- ``TrainConfig`` / ``DatasetSpec``: one experiment, read from a JSON config
  file whose keys are exactly the dataclass field names.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from dotenv import find_dotenv, load_dotenv

from overlapgan import __version__
from overlapgan.errors import ConfigError

VARIANTS = ("AC-GAN", "cGAN-concat", "CP-GAN")
GAN_MODES = ("wgan", "nonsaturating")
REQUIRED_KEYS = ("variant", "dataset")


@dataclass
class Settings:
    """Process settings loaded from environment variables."""

    threads: int = 1
    output_dir: str = "runs"
    progress: bool = True

    def validate(self) -> list[str]:
        """One message per out-of-range variable."""
        errors = []
        if self.threads < 1:
            errors.append(f"OVERLAP_GAN_THREADS must be >= 1, got {self.threads}")
        if not self.output_dir:
            errors.append("OVERLAP_GAN_OUTPUT_DIR must not be empty")
        return errors


def load_settings() -> Settings:
    """
    Read the ``OVERLAP_GAN_*`` variables; a ``.env`` above the CWD is loaded first.

    Returns:
        Settings: Validated settings.

    Raises:
        ConfigError: If a variable is malformed or out of range.
    """
    dotenv_path = find_dotenv(usecwd=True)
    if dotenv_path:
        load_dotenv(dotenv_path)

    try:
        settings = Settings(
            threads=int(os.getenv("OVERLAP_GAN_THREADS", "1")),
            output_dir=os.getenv("OVERLAP_GAN_OUTPUT_DIR", "runs"),
            progress=os.getenv("OVERLAP_GAN_PROGRESS", "1").strip().lower() not in {"0", "false", "no"},
        )
    except ValueError as e:
        raise ConfigError(f"Malformed environment setting: {e}") from None

    errors = settings.validate()
    if errors:
        raise ConfigError("Configuration error(s) in environment", errors)
    return settings


@dataclass
class DatasetSpec:
    """
    Which mixture to train on.

    ``kind``: ``toy`` (two Gaussians), ``ring`` (``scheme`` 10to5 / 7to3) or
    ``custom`` (explicit means, covariances, weights and membership lists
    of class letters).
    """

    kind: str = "toy"
    scheme: str = "10to5"
    k_fine: int = 10
    separation: float = 2.0
    radius: float = 4.0
    sigma: float = 1.0
    name: str = ""
    c: int = 0
    means: list[list[float]] = field(default_factory=list)
    covariances: list[list[list[float]]] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)
    membership: list[list[str]] = field(default_factory=list)

    def validate(self) -> list[str]:
        errors = []
        if self.kind not in ("toy", "ring", "custom"):
            errors.append(f"dataset.kind must be toy, ring or custom, got {self.kind!r}")
        if self.sigma <= 0:
            errors.append(f"dataset.sigma must be positive, got {self.sigma}")
        if self.kind == "toy" and not 0 < self.separation < 4 * self.sigma:
            errors.append(f"dataset.separation must lie in (0, 4*sigma) for the toy, got {self.separation}")
        if self.kind == "ring":
            expected = {"10to5": 10, "7to3": 7}.get(self.scheme)
            if expected is None:
                errors.append(f"dataset.scheme must be 10to5 or 7to3, got {self.scheme!r}")
            elif self.k_fine != expected:
                errors.append(f"dataset.k_fine must be {expected} for {self.scheme}, got {self.k_fine}")
        if self.kind == "custom":
            k = len(self.means)
            if k == 0:
                errors.append("dataset.means must list at least one component")
            if len(self.covariances) != k or len(self.membership) != k:
                errors.append("dataset.means, covariances and membership must have equal length")
            if self.weights and len(self.weights) != k:
                errors.append("dataset.weights must have one entry per component")
            if self.c < 1:
                errors.append("dataset.c must be >= 1 for custom datasets")
        return errors

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown dataset key(s): {', '.join(unknown)}")
        if data.get("kind") == "custom" and "c" not in data:
            raise ConfigError("Missing config key: dataset.c")
        return cls(**data)


@dataclass
class TrainConfig:
    """All hyperparameters of one run. Defaults are the toy settings."""

    variant: str = "CP-GAN"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    total_iters: int = 100_000
    n_d: int = 5
    d_batch_size: int = 256
    g_batch_size: int = 256
    adam_alpha: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    lambda_r: float = 1.0
    lambda_g: float = 1.0
    lambda_gp: float = 0.1
    gan_mode: str = "wgan"
    dropout: bool = True
    dropout_rates: list[float] = field(default_factory=lambda: [0.2, 0.5, 0.5])
    k_shared: int = 3
    kl_cp_start_iter: int = 0
    lr_decay: bool = True
    seed: int = 0
    width: int = 512
    z_dim: int = 2
    eval_interval: int = 0
    checkpoint_interval: int = 0
    eval_samples_per_state: int = 1000
    pgan_total_iters: int = 0

    def validate(self) -> list[str]:
        """Validate hyperparameters. Returns list of error messages."""
        errors = []
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        if self.gan_mode not in GAN_MODES:
            errors.append(f"gan_mode must be one of {', '.join(GAN_MODES)}, got {self.gan_mode!r}")
        if self.total_iters < 0:
            errors.append(f"total_iters must be >= 0, got {self.total_iters}")
        if self.n_d < 1:
            errors.append(f"n_d must be >= 1, got {self.n_d}")
        if self.d_batch_size < 1 or self.g_batch_size < 1:
            errors.append("batch sizes must be >= 1")
        for name in ("lambda_r", "lambda_g", "lambda_gp"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.kl_cp_start_iter <= max(self.total_iters, 0):
            errors.append(f"kl_cp_start_iter must lie in [0, total_iters], got {self.kl_cp_start_iter}")
        if not 0 <= self.k_shared <= 3:
            errors.append(f"k_shared must lie in 0..3, got {self.k_shared}")
        if len(self.dropout_rates) != 3:
            errors.append(f"dropout_rates needs one rate per hidden layer (3), got {len(self.dropout_rates)}")
        elif any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            errors.append(f"dropout rates must lie in [0, 1), got {self.dropout_rates}")
        if self.adam_alpha <= 0:
            errors.append(f"adam_alpha must be positive, got {self.adam_alpha}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            errors.append("adam betas must lie in [0, 1)")
        if self.width < 1 or self.z_dim < 1:
            errors.append("width and z_dim must be >= 1")
        if self.eval_interval < 0 or self.checkpoint_interval < 0:
            errors.append("eval_interval and checkpoint_interval must be >= 0")
        if self.eval_samples_per_state < 1:
            errors.append("eval_samples_per_state must be >= 1")
        if self.pgan_total_iters < 0:
            errors.append("pgan_total_iters must be >= 0")
        errors.extend(self.dataset.validate())
        return errors

    @property
    def resolved_eval_interval(self) -> int:
        """Explicit interval, else every T/50 iterations."""
        return self.eval_interval or max(1, self.total_iters // 50)

    @property
    def resolved_checkpoint_interval(self) -> int:
        """Explicit interval, else every T/10 iterations."""
        return self.checkpoint_interval or max(1, self.total_iters // 10)

    @property
    def resolved_pgan_iters(self) -> int:
        return self.pgan_total_iters or self.total_iters

    def with_overrides(self, **changes: Any) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        for key in REQUIRED_KEYS:
            if key not in data:
                raise ConfigError(f"Missing config key: {key}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
        values = dict(data)
        if not isinstance(values["dataset"], dict):
            raise ConfigError("Config key 'dataset' must be an object")
        values["dataset"] = DatasetSpec.from_dict(values["dataset"])
        try:
            config = cls(**values)
        except TypeError as e:
            raise ConfigError(f"Malformed config: {e}") from None
        errors = config.validate()
        if errors:
            raise ConfigError("Invalid training configuration", errors)
        return config


def load_config(path: str | Path, seed: int | None = None) -> TrainConfig:
    """
    Read a JSON config file.

    Args:
        path: Config file.
        seed: Optional override of the config's seed.

    Raises:
        ConfigError: Missing file, malformed JSON, missing/unknown keys or
            invalid values. The message names the path or key.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    config = TrainConfig.from_dict(data)
    if seed is not None:
        config = config.with_overrides(seed=seed)
    return config


def canonical_json(data: Any) -> str:
    """Sorted-key, whitespace-free JSON."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: TrainConfig, stage: str = "") -> str:
    """Content hash of (config, seed, code version, stage) for stage skipping."""
    payload = canonical_json({"config": config.to_dict(), "version": __version__, "stage": stage})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
