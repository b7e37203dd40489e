"""Named, non-aliasing random streams.

Every consumer (data, prior, t, b, eps, ...) owns its own PCG64 generator,
derived from one integer seed and the consumer's name. Normals are produced
with the Box-Muller transform from the stream's uniforms so the sequence is
fully specified by PCG64 output, independent of numpy's internal normal
sampler.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """PCG64 generator for consumer ``name``; distinct names never share state."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))


class Streams:
    """Lazily created family of named streams sharing one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._gens:
            self._gens[name] = stream(self.seed, name)
        return self._gens[name]

    def state(self) -> dict:
        return {name: g.bit_generator.state for name, g in sorted(self._gens.items())}


def normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via Box-Muller on (0, 1] uniforms."""
    shape = (int(shape),) if np.ndim(shape) == 0 else tuple(int(k) for k in shape)
    n = int(np.prod(shape, dtype=np.int64))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n].reshape(shape)


def uniform(rng: np.random.Generator, low: float, high: float, size) -> np.ndarray:
    return low + (high - low) * rng.random(size)


def bernoulli(rng: np.random.Generator, size, p: float = 0.5) -> np.ndarray:
    return (rng.random(size) < p).astype(np.int64)
