"""Seeded random streams with deterministic splitting.

Every stochastic routine in this package draws from an :class:`RngStream`
owned by a single chain or worker.  Substreams are derived from the root
seed and an integer key path, never from consumed generator state, so a
worker's stream depends only on ``(seed, key path)`` and results are
reproducible across scheduling orders and worker counts.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngStream"]


def _key_to_int(part) -> int:
    """Map a substream key part to a non-negative integer."""
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("substream key parts must be non-negative")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    raise TypeError(f"substream key part must be int or str, got {type(part)!r}")


class RngStream:
    """A seeded PCG64 stream with spawn-key based substream derivation.

    Parameters
    ----------
    seed : int
        Root entropy.  Two streams built from the same seed and key path
        produce identical variate sequences for identical call sequences.
    _spawn_key : tuple of int, optional
        Internal; key path of a derived substream.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(_spawn_key)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def substream(self, *key) -> "RngStream":
        """Derive an independent stream from the root seed and ``key``.

        Key parts may be ints or strings (strings are hashed).  Derivation
        ignores how much of this stream has been consumed.
        """
        if not key:
            raise ValueError("substream key must be non-empty")
        parts = tuple(_key_to_int(p) for p in key)
        return RngStream(self.seed, self.spawn_key + parts)

    # Thin draws used all over; anything fancier lives in distributions.py.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size=size)

    def standard_normal(self, size=None):
        return self.gen.standard_normal(size=size)

    def chisquare(self, df, size=None):
        return self.gen.chisquare(df, size=size)

    def beta(self, a, b, size=None):
        return self.gen.beta(a, b, size=size)

    def gumbel(self, size=None):
        return self.gen.gumbel(size=size)

    def dirichlet(self, alpha):
        return self.gen.dirichlet(alpha)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def bernoulli(self, p, size=None):
        if size is None:
            size = np.shape(p)
        return (self.gen.random(size) < p).astype(np.int64)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"
