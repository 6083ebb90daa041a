"""Splittable deterministic random streams.

A stream is identified by ``(seed, stream_id)``. Both are hashed by
``numpy.random.SeedSequence`` into the key of a Philox-4x64 counter-based
generator, so distinct stream ids give statistically independent sequences
and the output never depends on which process or thread draws it.

Transforms on top of the raw 64-bit words are fixed here rather than left
to numpy's ``Generator`` methods:

* uniform on [0, 1): top 53 bits times 2**-53;
* standard normal: Marsaglia's polar method on pairs of uniforms mapped to
  (-1, 1), rejected pairs discarded in order;
* random subsets: argsort of fresh uniforms (a uniformly random permutation).
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["RngStream", "gaussian_sample"]

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


class RngStream:
    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        self._bits = np.random.Philox(ss)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, stream_id: int) -> "RngStream":
        """A fresh stream sharing this seed."""
        return RngStream(self.seed, stream_id)

    def raw(self, count: int) -> np.ndarray:
        return self._bits.random_raw(count).astype(np.uint64)

    def uniform(self, count: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(count) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        return low + (high - low) * u

    def normal(self, count: int) -> np.ndarray:
        out = np.empty(count)
        filled = 0
        while filled < count:
            pairs = math.ceil((count - filled) / 2 / (math.pi / 4)) + 4
            u = 2.0 * self.uniform(2 * pairs) - 1.0
            a, b = u[0::2], u[1::2]
            r2 = a * a + b * b
            ok = (r2 > 0.0) & (r2 < 1.0)
            a, b, r2 = a[ok], b[ok], r2[ok]
            f = np.sqrt(-2.0 * np.log(r2) / r2)
            z = np.empty(2 * a.size)
            z[0::2] = a * f
            z[1::2] = b * f
            take = min(z.size, count - filled)
            out[filled : filled + take] = z[:take]
            filled += take
        return out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in random order."""
        if not 0 <= k <= n:
            raise ValueError("need 0 <= k <= n")
        return self.permutation(n)[:k]


def gaussian_sample(stream: RngStream, count: int) -> np.ndarray:
    """Next ``count`` standard normal variates from ``stream``."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    return stream.normal(count)
