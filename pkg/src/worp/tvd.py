"""One-pass WOR sampling with provably tiny total-variation distance.

Runs a battery of independent single-key lp samplers next to a residual-
heavy-hitter sketch.  Samplers are finalized in sequence; each fresh key
is added to the output set and its estimated frequency is subtracted
from all later samplers' vectors, so they effectively sample from the
residual distribution.  With exact samplers and exact frequency
estimates this reproduces successive without-replacement sampling
exactly; sketch error degrades it gracefully and is measured, not
assumed.

The perfect turnstile single sampler of prior art is out of scope; it
sits behind :class:`SingleSamplerPort`, with an exact oracle and a
rejection sampler over a stored aggregate as shipped implementations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .core import Element, FrequencyVector, canonical_key, key_order_bytes

__all__ = [
    "ExactFrequencyOracle",
    "OracleSingleSampler",
    "RejectionSingleSampler",
    "TvdConfig",
    "TvdResult",
    "build_oracle_samplers",
    "empirical_set_distribution",
    "oracle_single_sampler",
    "trial_count_monitor",
    "tv_distance",
    "tvd_sample",
    "wor_set_distribution",
]


@dataclass(frozen=True)
class TvdConfig:
    """Sampler-battery parameters.

    ``r`` defaults to the reduced mode 8k (exponentially small distance
    in k); ``full_r(n)`` gives the polynomially small variant
    ``ceil(c * k * log2 n)``.  ``magnitude_bound`` declares the largest
    value magnitude the run promises to feed in.
    """

    k: int
    p: float
    n: int
    r: int | None = None
    magnitude_bound: float = 1e18

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.p <= 2:
            raise ValueError("p must be in (0, 2]")
        if not math.isfinite(self.magnitude_bound):
            raise ValueError("magnitude bound must be finite")
        if self.r is not None and self.r < self.k:
            raise ValueError("need at least k samplers")

    @property
    def sampler_count(self) -> int:
        return self.r if self.r is not None else 8 * self.k

    def full_r(self, c: float = 8.0) -> int:
        return max(self.k, math.ceil(c * self.k * math.log2(max(self.n, 2))))


class SingleSamplerPort(Protocol):
    """One with-replacement lp sample from a turnstile stream.

    Implementations must use independent randomness per instance and may
    receive post-hoc value-delta updates between the stream end and
    ``finalize``.  ``finalize`` returns the sampled key, or None for FAIL.
    """

    def process(self, key, value: float) -> None: ...

    def finalize(self): ...


class OracleSingleSampler:
    """Exact lp single sampler over a stored aggregate.

    Samples key x with probability exactly |nu_x|^p / ||nu||_p^p.
    Post-hoc deltas are re-aggregated before finalizing.  A shared base
    vector (copy-on-write) keeps batteries of these cheap.
    """

    def __init__(self, p: float, rng: np.random.Generator, base: FrequencyVector | None = None):
        self.p = p
        self.rng = rng
        self._base = base
        self._delta: dict = {}

    def process(self, key, value: float) -> None:
        key = canonical_key(key)
        self._delta[key] = self._delta.get(key, 0.0) + float(value)

    def _weights(self):
        agg: dict = dict(self._base.items()) if self._base is not None else {}
        for key, dv in self._delta.items():
            agg[key] = agg.get(key, 0.0) + dv
        keys = sorted(agg, key=key_order_bytes)
        w = np.abs(np.asarray([agg[k] for k in keys])) ** self.p
        return keys, w

    def finalize(self):
        keys, w = self._weights()
        total = w.sum()
        if total <= 0:
            return None
        return keys[self.rng.choice(len(keys), p=w / total)]


def oracle_single_sampler(v: FrequencyVector, p: float, rng: np.random.Generator):
    """Draw one key with probability |nu_x|^p / ||nu||_p^p from a vector."""
    if len(v) == 0:
        raise ValueError("cannot sample from the zero vector")
    out = OracleSingleSampler(p, rng, base=v).finalize()
    if out is None:
        raise ValueError("cannot sample from the zero vector")
    return out


class RejectionSingleSampler(OracleSingleSampler):
    """Rejection sampler over the stored aggregate (desk-scale port).

    Proposes a stored key uniformly and accepts with probability
    |nu|^p / max |nu|^p; Las-Vegas, exact target distribution.
    """

    MAX_PROPOSALS = 10**6

    def finalize(self):
        keys, w = self._weights()
        top = w.max() if w.size else 0.0
        if top <= 0:
            return None
        for _ in range(self.MAX_PROPOSALS):
            i = int(self.rng.integers(0, len(keys)))
            if self.rng.random() * top <= w[i]:
                return keys[i]
        return None


class ExactFrequencyOracle:
    """Frequency store with the sketch's est() interface (exact answers)."""

    def __init__(self, v: FrequencyVector | None = None):
        self._sums: dict = dict(v.items()) if v is not None else {}

    def process(self, key, value: float) -> None:
        key = canonical_key(key)
        self._sums[key] = self._sums.get(key, 0.0) + float(value)

    def est(self, key) -> float:
        return self._sums.get(canonical_key(key), 0.0)


def build_oracle_samplers(
    v: FrequencyVector,
    p: float,
    count: int,
    seed: int,
    rejection: bool = False,
) -> list:
    """A battery of independent samplers sharing one base aggregate."""
    cls = RejectionSingleSampler if rejection else OracleSingleSampler
    streams = np.random.SeedSequence(seed).spawn(count)
    return [cls(p, np.random.default_rng(s), base=v) for s in streams]


@dataclass
class TvdResult:
    keys: set | None
    failed: bool
    trials: int
    sampler_fails: int = 0
    subtractions: dict = field(default_factory=dict)


def tvd_sample(
    cfg: TvdConfig,
    samplers: list,
    rhh,
    stream: Iterable | None = None,
) -> TvdResult:
    """Select k distinct keys from the sampler battery, or FAIL.

    When ``stream`` is given, every element is fed to all samplers and to
    the estimator ``rhh`` first; otherwise both must arrive pre-loaded.
    FAIL (samplers exhausted before k distinct keys) is a declared
    outcome carried on the result, not an exception.
    """
    if len(samplers) < cfg.k:
        raise ValueError("need at least k samplers")
    if stream is not None:
        for item in stream:
            e = item if isinstance(item, Element) else Element(*item)
            if abs(e.value) > cfg.magnitude_bound:
                raise ValueError("element magnitude exceeds the configured bound")
            rhh.process(e.key, e.value)
            for sampler in samplers:
                sampler.process(e.key, e.value)
    chosen: set = set()
    subtractions: dict = {}
    trials = 0
    sampler_fails = 0
    for i, sampler in enumerate(samplers):
        trials += 1
        out = sampler.finalize()
        if out is None:
            sampler_fails += 1
            continue
        if out not in chosen:
            chosen.add(out)
            est = float(rhh.est(out))
            subtractions[out] = est
            for later in samplers[i + 1 :]:
                later.process(out, -est)
        if len(chosen) == cfg.k:
            return TvdResult(chosen, False, trials, sampler_fails, subtractions)
    return TvdResult(None, True, trials, sampler_fails, subtractions)


def trial_count_monitor(results: list[TvdResult], k: int) -> dict:
    """Trials-to-completion statistics for a batch of runs."""
    done = [r.trials for r in results if not r.failed]
    out = {
        "runs": len(results),
        "fail_rate": sum(r.failed for r in results) / max(len(results), 1),
        "mean_trials": float(np.mean(done)) if done else float("nan"),
        "max_trials": max(done) if done else 0,
        "geometric_bound": 2.0 * k,
    }
    out["mean_within_bound"] = bool(done) and out["mean_trials"] <= out["geometric_bound"]
    return out


# -- brute-force oracles for TV evaluation ---------------------------------
def wor_set_distribution(v: FrequencyVector, p: float, k: int) -> dict:
    """Exact successive-sampling probability of every k-subset.

    p(S) sums, over all orderings of S, the product of
    mu_i / (1 - mass already drawn); mu is the normalized |nu|^p vector.
    Enumeration is exponential in k; meant for small oracle inputs.
    """
    keys = v.key_list
    n = len(keys)
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    mu = np.abs(v.value_array) ** p
    mu = mu / mu.sum()
    combos = np.asarray(list(itertools.combinations(range(n), k)))
    weights = mu[combos]  # (C, k)
    total = np.zeros(len(combos))
    for perm in itertools.permutations(range(k)):
        prob = np.ones(len(combos))
        drawn = np.zeros(len(combos))
        for j in perm:
            prob *= weights[:, j] / (1.0 - drawn)
            drawn += weights[:, j]
        total += prob
    return {
        frozenset(keys[i] for i in combo): float(pr)
        for combo, pr in zip(combos, total)
    }


def empirical_set_distribution(results: list[TvdResult]) -> dict:
    counts: dict = {}
    total = 0
    for r in results:
        if r.failed:
            continue
        s = frozenset(r.keys)
        counts[s] = counts.get(s, 0) + 1
        total += 1
    if total == 0:
        return {}
    return {s: c / total for s, c in counts.items()}


def tv_distance(dist_a: dict, dist_b: dict) -> float:
    """Half the L1 distance between two distributions over k-subsets."""
    keys = dist_a.keys() | dist_b.keys()
    return 0.5 * sum(abs(dist_a.get(s, 0.0) - dist_b.get(s, 0.0)) for s in keys)
