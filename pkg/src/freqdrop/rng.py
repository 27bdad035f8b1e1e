"""Counter-based random streams.

Every consumer of randomness gets its own Philox stream keyed by
``(seed, stream_id)``, so toggling one consumer (e.g. FD draws) never shifts
the numbers another consumer (e.g. weight init) sees.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1


class Domain(IntEnum):
    INIT = 1
    SHUFFLE = 2
    FD = 3
    DATA_TRAIN = 4
    DATA_TEST = 5
    DATA_VAL = 6
    CORRUPT = 7


def stream_id(domain: int, layer: int = 0, epoch: int = 0, step: int = 0) -> int:
    """Pack (domain, layer, epoch, step) into one 64-bit stream id.

    Bit layout: domain[63:56] layer[55:48] epoch[47:24] step[23:0].
    """
    if not (0 <= domain < 256 and 0 <= layer < 256):
        raise ValueError("domain and layer must fit in 8 bits")
    if not (0 <= epoch < (1 << 24) and 0 <= step < (1 << 24)):
        raise ValueError("epoch and step must fit in 24 bits")
    return (domain << 56) | (layer << 48) | (epoch << 24) | step


class RngStream:
    """A reproducible stream; identical (seed, stream) give identical draws."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    @classmethod
    def for_(cls, seed: int, domain: int, layer: int = 0, epoch: int = 0, step: int = 0):
        return cls(seed, stream_id(domain, layer, epoch, step))

    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream:#018x})"
