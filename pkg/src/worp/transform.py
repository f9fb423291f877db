"""The bottom-k power transform of streams, and its inversion.

Scaling each element value by ``1 / r_key^(1/p)`` (r drawn per key from
Exp(1) or U(0,1)) turns "sample keys by |frequency|^p without
replacement" into "find the top-k keys by transformed frequency".
Estimated output frequencies map back to input frequencies by
multiplying with ``r^(1/p)``, preserving relative error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Element,
    FrequencyVector,
    Purpose,
    SeedRand,
    canonical_key,
    fingerprint64,
    fingerprints,
)
from .sample import SampleEntry, WorSample

__all__ = [
    "TransformConfig",
    "transform_element",
    "transform_vector",
    "invert_estimate",
    "exact_bottomk_sample",
]

_PURPOSE = {"exp1": Purpose.TRANSFORM_EXP, "uniform01": Purpose.TRANSFORM_UNIFORM}


@dataclass(frozen=True)
class TransformConfig:
    """Per-job transform parameters; the seed is fixed for a sampling job.

    ``dist="exp1"`` is the ppswor flavor (all statistical guarantees);
    ``dist="uniform01"`` is the priority flavor (experimental).
    ``keyhash_n`` is the integer domain that byte-string keys are hashed
    into; integer keys below it pass through unchanged.
    """

    p: float
    dist: str = "exp1"
    seed: int = 0
    keyhash_n: int = 1 << 16

    def __post_init__(self):
        if not 0 < self.p <= 2:
            raise ValueError("p must be in (0, 2]")
        if self.dist not in _PURPOSE:
            raise ValueError(f"unknown distribution {self.dist!r}")
        if self.keyhash_n < 1:
            raise ValueError("keyhash_n must be positive")

    def _rand(self) -> SeedRand:
        return SeedRand(self.seed, _PURPOSE[self.dist])

    def r_value(self, key) -> float:
        rand = self._rand()
        return rand.exp1(key) if self.dist == "exp1" else rand.uniform(key)

    def r_batch(self, fps: np.ndarray) -> np.ndarray:
        rand = self._rand()
        if self.dist == "exp1":
            return rand.exp1_batch(fps)
        return rand.uniform_batch(fps)

    def scale(self, key) -> float:
        """r_key^(1/p): divide by it going forward, multiply to invert."""
        return self.r_value(key) ** (1.0 / self.p)

    def scale_batch(self, fps: np.ndarray) -> np.ndarray:
        return self.r_batch(fps) ** (1.0 / self.p)

    def hashed_key(self, key):
        """Output key: identity for in-domain integers, else a hash into [keyhash_n]."""
        key = canonical_key(key)
        if isinstance(key, int) and key < self.keyhash_n:
            return key
        return SeedRand(self.seed, Purpose.KEY_HASH).key_index(key, self.keyhash_n)


def transform_element(e: Element, cfg: TransformConfig) -> Element:
    """Map one input element to its transformed output element."""
    return Element(cfg.hashed_key(e.key), e.value / cfg.scale(e.key))


def invert_estimate(est_out: float, key, cfg: TransformConfig) -> float:
    """Map an estimated output frequency back to an input-frequency estimate."""
    return est_out * cfg.scale(key)


def transform_vector(v: FrequencyVector, cfg: TransformConfig):
    """Vectorized transform of an aggregated vector.

    Returns (keys, values, scales, transformed) where ``keys`` is the
    canonical key order of ``v`` and ``transformed = values / scales``.
    """
    values = v.value_array
    scales = cfg.scale_batch(v.fingerprint_array)
    return v.key_list, values, scales, values / scales


def exact_bottomk_sample(v: FrequencyVector, k: int, cfg: TransformConfig) -> WorSample:
    """Ground-truth bottom-k sample computed from the aggregated vector.

    The top-k keys by |transformed frequency|, with exact frequencies and
    the exact (k+1)-st transformed magnitude as threshold.  This is the
    oracle the sketch pipelines are judged against.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(v) < k + 1:
        raise ValueError(f"need at least k+1={k + 1} nonzero keys, have {len(v)}")
    keys, values, scales, transformed = transform_vector(v, cfg)
    # stable sort on descending magnitude; base order breaks ties by key bytes
    order = np.argsort(-np.abs(transformed), kind="stable")
    entries = [
        SampleEntry(keys[i], float(values[i]), float(transformed[i]))
        for i in order[:k]
    ]
    tau = float(abs(transformed[order[k]]))
    return WorSample(
        entries=entries, tau=tau, mode="exact", p=cfg.p, seed=cfg.seed, k=k
    )
