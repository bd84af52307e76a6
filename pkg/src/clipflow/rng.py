"""Counter-based random streams.

Every draw is addressed by ``(seed, stream, step)``: the Philox key holds the
experiment seed and a stream tag, the counter holds the step. Two runs that
share a seed therefore see the same noise at step ``t`` no matter what data or
clipping they use, and steps can be regenerated out of order.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag(stream: str) -> int:
    return zlib.crc32(stream.encode("utf-8"))


def generator(seed: int, step: int = 0, stream: str = "noise") -> np.random.Generator:
    key = ((int(seed) & _MASK64) << 64) | _tag(stream)
    # step sits in the top counter word; draws within a step advance the low
    # word, so streams of different steps never overlap
    bitgen = np.random.Philox(key=key, counter=[0, 0, 0, int(step) & _MASK64])
    return np.random.Generator(bitgen)


def uniform(seed: int, step: int, size: int, stream: str = "noise") -> np.ndarray:
    return generator(seed, step, stream).random(size)


def gaussian(seed: int, step: int, size: int, stream: str = "noise") -> np.ndarray:
    """Standard normal vector via Box-Muller on the stream's uniforms.

    Coordinate ``k`` of the result depends only on ``(seed, stream, step, k)``
    and on nothing else, in particular not on ``size`` beyond ``k``.
    """
    half = (size + 1) // 2
    u = uniform(seed, step, 2 * half, stream).reshape(half, 2)
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u in (0, 1]
    angle = 2.0 * np.pi * u[:, 1]
    z = np.empty((half, 2))
    z[:, 0] = radius * np.cos(angle)
    z[:, 1] = radius * np.sin(angle)
    return z.reshape(-1)[:size]
