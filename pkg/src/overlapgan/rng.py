"""
Named random streams.

One run seed fans out into independent counter-based (Philox) generators,
one per consumer ("init", "noise", "dropout", "data", ...). Adding draws to
one stream never shifts another, so ablation cells stay comparable.
"""

import zlib
from typing import Any

import numpy as np


def _stream_key(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return [int(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.integer):
        return int(value)
    return value


def _restore(value: Any, template: Any) -> Any:
    if isinstance(template, np.ndarray):
        return np.array(value, dtype=template.dtype)
    if isinstance(template, dict):
        return {k: _restore(value[k], template[k]) for k in template}
    return value


class RngStreams:
    """Lazily created named generators derived from a single seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Generator for ``name``; the same object on every call."""
        if name not in self._streams:
            bit_generator = np.random.Philox(_stream_key(self.seed, name))
            self._streams[name] = np.random.Generator(bit_generator)
        return self._streams[name]

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.stream(name)

    def positions(self) -> dict[str, Any]:
        """JSON-ready bit-generator states of every stream touched so far."""
        return {name: _jsonable(gen.bit_generator.state) for name, gen in sorted(self._streams.items())}

    def restore(self, positions: dict[str, Any]) -> None:
        """Rewind or fast-forward streams to previously saved positions."""
        for name, state in positions.items():
            gen = self.stream(name)
            gen.bit_generator.state = _restore(state, gen.bit_generator.state)
