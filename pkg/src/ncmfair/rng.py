"""Seeded, named random streams.

Every source of randomness in the package flows through an :class:`RngStream`,
identified by a 64-bit ``(seed, stream_id)`` pair.  The same pair always yields
the same sample sequence, across runs and platforms (PCG64 seeded through
``numpy.random.SeedSequence``, both of which are stable by contract).  Named
child streams are derived by hashing, so independent pipeline stages can be
re-run or re-ordered without perturbing each other's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ArgumentError

_U64 = (1 << 64) - 1


def _label_to_id(parent_id: int, label: str) -> int:
    digest = hashlib.blake2b(f"{parent_id}/{label}".encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


class RngStream:
    """A deterministic random stream addressed by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _U64
        self.stream_id = int(stream_id) & _U64
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def spawn(self, label: str) -> "RngStream":
        """Derive an independent child stream from a string label."""
        return RngStream(self.seed, _label_to_id(self.stream_id, label))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_gaussian(rng: RngStream, shape) -> np.ndarray:
    """I.i.d. standard-normal draws, deterministic per (seed, stream)."""
    if not isinstance(rng, RngStream):
        raise ArgumentError("sample_gaussian requires an RngStream")
    return rng.standard_normal(shape)
