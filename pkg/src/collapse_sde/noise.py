"""Per-trajectory Wiener increments from independent, index-keyed streams.

Stream ``(seed, key)`` is a PCG64 generator seeded by
``SeedSequence(seed, spawn_key=key)``; standard normals are drawn in fixed
blocks of :data:`BLOCK` so a trajectory sees the same increments whether it
runs alone or inside a batch.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

BLOCK = 1024


def stream(seed: int, key: Sequence[int]) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def trajectory_key(index: int, channel: int = 0) -> tuple[int, ...]:
    """Stream key for a trajectory; ``channel`` separates independent noises
    used by the same trial (e.g. the uncorrelated negative control)."""
    return (int(index), int(channel))


class BatchNoise:
    """Block-wise standard normals for a batch of streams advanced in lockstep."""

    def __init__(self, seed: int, keys: Sequence[Sequence[int]]):
        self._gens = [stream(seed, k) for k in keys]
        self._next_k0 = np.zeros(len(self._gens), dtype=np.int64)

    def __len__(self):
        return len(self._gens)

    def block(self, k0: int, rows) -> np.ndarray:
        """Normals for steps ``k0 .. k0+BLOCK-1`` of the given rows.

        Each stream must be read block by block in order; rows that stopped
        early are simply never asked again.
        """
        if k0 % BLOCK:
            raise ValueError(f"block start {k0} is not a multiple of {BLOCK}")
        out = np.empty((len(rows), BLOCK))
        for j, r in enumerate(rows):
            if self._next_k0[r] != k0:
                raise ValueError(f"stream {r} is at step {self._next_k0[r]}, asked for {k0}")
            out[j] = self._gens[r].standard_normal(BLOCK)
            self._next_k0[r] = k0 + BLOCK
        return out


def wiener_increments(seed: int, key: Sequence[int], n_steps: int, dt: float,
                      refine: int = 1) -> np.ndarray:
    """``n_steps`` increments ``N(0, dt)`` of the stream, identical to what a
    batched run consumes.

    With ``refine > 1`` the stream is read at step ``dt / refine`` and summed
    in groups, so runs at ``dt`` and ``dt / refine`` see the same Brownian path.
    """
    g = stream(seed, key)
    n_fine = n_steps * refine
    n_blocks = -(-n_fine // BLOCK)
    z = np.concatenate([g.standard_normal(BLOCK) for _ in range(n_blocks)]) if n_blocks else np.empty(0)
    return coarsen(math.sqrt(dt / refine) * z[:n_fine], refine)


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments (same Brownian path at a
    coarser step)."""
    increments = np.asarray(increments)
    m = increments.size // factor
    return increments[: m * factor].reshape(m, factor).sum(axis=1)
