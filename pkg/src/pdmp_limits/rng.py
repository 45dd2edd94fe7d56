"""Reproducible per-replica random streams.

Every replica owns a Philox (counter-based) generator keyed by
``(master seed, replica index, purpose)``.  Draws are served from
fixed-size blocks, so the value of the k-th draw of a replica depends only
on that key and ``k``: results do not change with batch composition,
worker count or scheduling, and a stream can be resumed from its counter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCK = 512

# stream purposes
PDMP = 0
LANGEVIN = 1
INITIAL = 2


def replica_generator(seed: int, replica: int, purpose: int = PDMP) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class RngStream:
    """Position of one replica stream (master seed, replica, draw counter)."""

    seed: int
    replica: int
    counter: int = 0
    purpose: int = PDMP


class ReplicaStreams:
    """Block-buffered uniform streams for a batch of replicas."""

    def __init__(self, seed: int, replicas, purpose: int = PDMP, counters=None):
        self.seed = int(seed)
        self.replicas = np.asarray(replicas, dtype=np.int64)
        self.purpose = purpose
        n = self.replicas.size
        self._gens = [replica_generator(seed, r, purpose) for r in self.replicas]
        self._buf = np.empty((n, BLOCK))
        self._pos = np.zeros(n, dtype=np.int64)
        self.counter = np.zeros(n, dtype=np.int64)
        for i in range(n):
            self._buf[i] = self._gens[i].random(BLOCK)
        if counters is not None:
            for i, c in enumerate(np.asarray(counters, dtype=np.int64)):
                self._skip(i, int(c))

    def _skip(self, i: int, count: int):
        for _ in range(count // BLOCK):
            self._buf[i] = self._gens[i].random(BLOCK)
        self._pos[i] = count % BLOCK
        self.counter[i] = count

    def uniform(self, idx) -> np.ndarray:
        """One uniform in [0, 1) for each batch member listed in ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        out = self._buf[idx, self._pos[idx]]
        self._pos[idx] += 1
        self.counter[idx] += 1
        full = idx[self._pos[idx] == BLOCK]
        for i in full:
            self._buf[i] = self._gens[i].random(BLOCK)
            self._pos[i] = 0
        return out

    def exponential(self, idx) -> np.ndarray:
        # 1 - U avoids log(0)
        return -np.log1p(-self.uniform(idx))

    def stream(self, i: int) -> RngStream:
        return RngStream(self.seed, int(self.replicas[i]), int(self.counter[i]), self.purpose)


def normal_block(seed: int, replica: int, shape, purpose: int = LANGEVIN) -> np.ndarray:
    """Standard normals for one replica, drawn in one call from its own stream."""
    return replica_generator(seed, replica, purpose).standard_normal(shape)
