"""Seeded, splittable randomness used by every stochastic component.

All draws flow from a root seed through Philox keys, so the same
(seed, purpose) pair yields the same stream no matter which other
consumers ran first. Gaussian variates are produced by the Marsaglia
polar method on top of the raw uniform stream rather than numpy's
ziggurat, keeping the Gaussian stream pinned to the documented
counter-based generator alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "split", "normal", "rademacher"]


def _purpose_key(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, purpose: str = "") -> np.random.Generator:
    """Philox stream keyed by (seed, sha256(purpose))."""
    return np.random.Generator(np.random.Philox(key=[seed, _purpose_key(purpose)]))


def split(gen: np.random.Generator, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(bg) for bg in gen.bit_generator.spawn(n)]


def normal(gen: np.random.Generator, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Standard normals via the polar method, shaped to `shape`."""
    n = int(np.prod(shape)) if shape else 1
    out = np.empty(0)
    while out.size < n:
        m = max(n - out.size, 16)
        # polar acceptance rate is pi/4; oversample to usually finish in one pass
        u = gen.uniform(-1.0, 1.0, size=(2, int(m * 1.6) + 8))
        s = u[0] ** 2 + u[1] ** 2
        keep = (s > 0.0) & (s < 1.0)
        us, vs, ss = u[0][keep], u[1][keep], s[keep]
        factor = np.sqrt(-2.0 * np.log(ss) / ss)
        pair = np.concatenate([us * factor, vs * factor])
        out = np.concatenate([out, pair])
    res = out[:n].reshape(shape) * std + mean
    return res


def rademacher(gen: np.random.Generator, shape) -> np.ndarray:
    return np.where(gen.uniform(size=shape) < 0.5, -1.0, 1.0)
