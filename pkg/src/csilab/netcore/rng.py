"""Deterministic named random streams.

All randomness in the package flows through a RandomState: a 64-bit seed plus
named streams ("data", "init", "dropout", "latent", "interpolation",
"shuffle"). Stream seeds are derived by hashing the parent seed together with
the stream name and optional coordinates, so any (seed, name, coords) triple
maps to the same draw sequence on every run and platform, and distinct
coordinates never share a stream by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

_MASK64 = (1 << 64) - 1

STREAM_NAMES = ("data", "init", "dropout", "latent", "interpolation", "shuffle")


def derive_seed(seed: int, *coords) -> int:
    """Hash (seed, *coords) into a fresh 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update((seed & _MASK64).to_bytes(8, "little"))
    for c in coords:
        if isinstance(c, str):
            h.update(b"s" + c.encode("utf-8") + b"\x00")
        elif isinstance(c, (int, np.integer)):
            h.update(b"i" + (int(c) & _MASK64).to_bytes(8, "little"))
        elif isinstance(c, float):
            h.update(b"f" + np.float64(c).tobytes())
        else:
            raise TypeError(f"unsupported stream coordinate {c!r}")
    return int.from_bytes(h.digest(), "little")


class RandomState:
    """A 64-bit seed with named, independently derived substreams."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def substream(self, *coords) -> "RandomState":
        """Child RandomState for a coordinate tuple (scenario, step index, ...)."""
        return RandomState(derive_seed(self.seed, *coords))

    def stream_seed(self, name: str, *coords) -> int:
        return derive_seed(self.seed, name, *coords)

    def torch_gen(self, name: str, *coords) -> torch.Generator:
        """Fresh stateful torch generator for the named stream."""
        g = torch.Generator()
        # torch seeds are capped at 2**63-1
        g.manual_seed(self.stream_seed(name, *coords) >> 1)
        return g

    def numpy_gen(self, name: str, *coords) -> np.random.Generator:
        return np.random.default_rng(self.stream_seed(name, *coords))

    def __repr__(self) -> str:
        return f"RandomState(seed={self.seed})"

    def __eq__(self, other) -> bool:
        return isinstance(other, RandomState) and other.seed == self.seed

    def __hash__(self) -> int:
        return hash(("RandomState", self.seed))
