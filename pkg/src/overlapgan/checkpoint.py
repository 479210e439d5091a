"""
Checkpoint persistence.

A checkpoint is one canonical JSON document:

    {format_version, variant, config, iteration, layers: [{name, shape, values}],
     adam_state: {group: {...}}, rng_stream_positions, flags, critic_trained_iters}

Values are row-major. Floats are written with Python's shortest round-trip
repr, so loading reproduces every float64 bit for bit.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from rich.progress import Progress, SpinnerColumn, TextColumn

from overlapgan.config import TrainConfig, canonical_json
from overlapgan.errors import ConfigError
from overlapgan.models import ModelBundle, build_models, build_pgan
from overlapgan.optim import AdamState
from overlapgan.rng import RngStreams
from overlapgan.utils import atomic_write_text

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run."""

    config: TrainConfig
    iteration: int
    layers: dict[str, np.ndarray]
    adam_state: dict[str, AdamState] = field(default_factory=dict)
    rng_stream_positions: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    critic_trained_iters: int = 0

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def has_pgan(self) -> bool:
        return any(name.startswith("pgan.") for name in self.layers)


def checkpoint_document(bundle: ModelBundle, config: TrainConfig, adam_state: dict[str, AdamState],
                        streams: RngStreams | None, iteration: int) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "variant": bundle.variant,
        "config": config.to_dict(),
        "iteration": int(iteration),
        "layers": [
            {"name": name, "shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in bundle.named_parameters().items()
        ],
        "adam_state": {group: state.to_dict() for group, state in sorted(adam_state.items())},
        "rng_stream_positions": streams.positions() if streams is not None else {},
        "flags": list(bundle.flags),
        "critic_trained_iters": int(bundle.critic.trained_iters),
    }


def save_checkpoint(path: str | Path, bundle: ModelBundle, config: TrainConfig,
                    adam_state: dict[str, AdamState] | None = None, streams: RngStreams | None = None,
                    iteration: int = 0, show_progress: bool = False) -> Path:
    """
    Write a checkpoint atomically.

    Returns:
        Path to the saved file.
    """
    document = checkpoint_document(bundle, config, adam_state or {}, streams, iteration)
    text = canonical_json(document) + "\n"
    if not show_progress:
        return atomic_write_text(path, text)
    with Progress(
        SpinnerColumn(),
        TextColumn("[bold green]Saving checkpoint..."),
        transient=True,
    ) as progress:
        progress.add_task("Saving", total=None)
        return atomic_write_text(path, text)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        ConfigError: Missing file, unknown format version or embedded config errors.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"Unsupported checkpoint format_version {version!r} in {path}")
    layers = {
        entry["name"]: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for entry in data["layers"]
    }
    return Checkpoint(
        config=TrainConfig.from_dict(data["config"]),
        iteration=int(data["iteration"]),
        layers=layers,
        adam_state={group: AdamState.from_dict(s) for group, s in data.get("adam_state", {}).items()},
        rng_stream_positions=data.get("rng_stream_positions", {}),
        flags=list(data.get("flags", [])),
        critic_trained_iters=int(data.get("critic_trained_iters", 0)),
    )


def restore_bundle(checkpoint: Checkpoint, data_dim: int, c: int) -> ModelBundle:
    """Rebuild the networks from the embedded config and load the saved weights."""
    rng = np.random.default_rng(0)
    bundle = build_models(checkpoint.config, data_dim, c, rng)
    if checkpoint.has_pgan:
        bundle.pgan = build_pgan(c, checkpoint.config.width, rng)
    params = bundle.named_parameters()
    missing = sorted(set(params) - set(checkpoint.layers))
    unexpected = sorted(set(checkpoint.layers) - set(params))
    if missing or unexpected:
        raise ConfigError(
            "Checkpoint does not match the architecture in its config",
            [f"missing layer {n}" for n in missing] + [f"unexpected layer {n}" for n in unexpected],
        )
    for name, p in params.items():
        values = checkpoint.layers[name]
        if values.shape != p.shape:
            raise ConfigError(f"Layer {name} has shape {values.shape}, expected {p.shape}")
        p.data[...] = values
    bundle.iteration = checkpoint.iteration
    bundle.flags = list(checkpoint.flags)
    bundle.critic.trained_iters = checkpoint.critic_trained_iters
    return bundle
