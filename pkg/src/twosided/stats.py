"""Seeded random streams and batch-means confidence intervals."""
from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .errors import NegativeRate, TooShort

Z95 = 1.959963984540054


@dataclass
class RngHandle:
    """Reproducible stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator, seeded through
    ``SeedSequence`` with the stream id as spawn key, so each replication's
    draws do not depend on the order in which replications are run.
    """

    seed: int
    stream_id: int = 0
    substream: tuple[int, ...] = ()
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.substream))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, k: int) -> "RngHandle":
        return RngHandle(self.seed, self.stream_id, (*self.substream, k))


# below this rate draws use sequential-search inversion, above it numpy's PTRS
INVERSION_MAX_RATE = 10.0


@numba.njit(cache=True)
def _poisson_inversion(u, rate, out):
    p0 = math.exp(-rate)
    for j in range(u.shape[0]):
        k = 0
        p = p0
        cdf = p0
        while u[j] > cdf and p > 0.0:
            k += 1
            p *= rate / k
            cdf += p
        out[j] = k


def poisson_block(rng: RngHandle, rate: float, size: int) -> np.ndarray:
    """``size`` Poisson draws as float64 (the simulator works in reals)."""
    if rate < 0:
        raise NegativeRate(f"rate={rate}")
    if rate == 0:
        return np.zeros(size)
    if rate < INVERSION_MAX_RATE:
        out = np.empty(size)
        _poisson_inversion(rng.gen.random(size), float(rate), out)
        return out
    return rng.gen.poisson(rate, size).astype(np.float64)


def poisson_sample(rng: RngHandle, rate: float) -> int:
    return int(poisson_block(rng, rate, 1)[0])


@dataclass(frozen=True)
class BatchStats:
    n_batches: int
    batch_means: tuple[float, ...]
    overall_mean: float
    ci_halfwidth: float

    @classmethod
    def from_batch_means(cls, means: Sequence[float]) -> "BatchStats":
        m = np.asarray(means, dtype=float)
        k = len(m)
        if k < 2:
            raise TooShort("need at least two batches")
        half = Z95 * m.std(ddof=1) / np.sqrt(k) if np.ptp(m) > 0 else 0.0
        return cls(k, tuple(float(x) for x in m), float(m.mean()), float(half))

    @property
    def low(self) -> float:
        return self.overall_mean - self.ci_halfwidth

    @property
    def high(self) -> float:
        return self.overall_mean + self.ci_halfwidth

    def scaled(self, factor: float) -> "BatchStats":
        return BatchStats.from_batch_means([x * factor for x in self.batch_means])

    def overlaps(self, other: "BatchStats") -> bool:
        return abs(self.overall_mean - other.overall_mean) <= self.ci_halfwidth + other.ci_halfwidth


def batch_ci(series: Sequence[float], n_batches: int = 30) -> BatchStats:
    """Split ``series`` into ``n_batches`` equal batches and put a normal 95% CI on the mean.

    Any remainder that does not fill a whole batch is dropped from the front.
    """
    x = np.asarray(series, dtype=float)
    if n_batches < 2 or len(x) < 2 * n_batches:
        raise TooShort(f"{len(x)} points cannot fill {n_batches} batches of length >= 2")
    size = len(x) // n_batches
    x = x[len(x) - size * n_batches:]
    return BatchStats.from_batch_means(x.reshape(n_batches, size).mean(axis=1))
