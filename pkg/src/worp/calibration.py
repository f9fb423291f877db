"""Monte Carlo calibration of the sketch parameters.

The residual-heavy-hitter failure probability of a transformed stream is
dominated, for every input and every key ordering, by the distribution

    R(n, k, rho) = sum_{i=k+1..n} (S_k / S_i)^rho,   S_i = Z_1 + ... + Z_i,

with Z_j i.i.d. Exp(1).  The largest usable heavy-hitter parameter at
failure budget delta is therefore psi = k / z', where z' is the
(1-delta) quantile of R.  This module estimates psi by simulation,
derives the pass-two collection constant B from the prefix-sum ratio
distribution G', and provides closed-form Erlang tail bounds used by the
concentration checks.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .core import FrequencyVector

__all__ = [
    "Calibration",
    "calibrate",
    "choose_B",
    "empirical_domination_check",
    "erlang_tail",
    "estimate_psi",
    "estimate_psi_grid",
    "sample_Gprime",
    "sample_R",
]

CACHE_VERSION = 1

B_CAP = 63  # worst-case collection constant from the Erlang bad-event analysis
B_MIN = 2


@dataclass(frozen=True)
class Calibration:
    """Monte Carlo calibration record consumed by the sampling pipelines."""

    n: int
    k: int
    rho: float
    delta: float
    trials: int
    seed: int
    psi: float
    z_quantile: float
    implied_c: float
    B: int
    ci_lo: float  # 95% bootstrap CI for implied_c
    ci_hi: float
    version: int = CACHE_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Calibration":
        return cls(**json.loads(text))


def _implied_c(z: float, n: int, k: int, rho: float) -> float:
    """Constant in the psi lower-bound form: psi >= (1/C) * b(n, k, rho)."""
    log_ratio = math.log(n / k)
    if rho == 1:
        return z / (k * log_ratio)
    return max(rho - 1.0, 1.0 / log_ratio) * z / k


def sample_R(n: int, k: int, rho: float, rng: np.random.Generator) -> float:
    """One draw of R(n, k, rho) using running prefix sums.

    O(n) time with O(1) extra state (exponentials are consumed in fixed
    blocks).  ``k == n`` gives the empty sum, 0.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    prefix = float(rng.standard_gamma(k))  # S_k, sum of k Exp(1)
    numer = prefix**rho
    total = 0.0
    remaining = n - k
    block = 4096
    while remaining > 0:
        z = rng.standard_exponential(min(block, remaining))
        s = prefix + np.cumsum(z)
        total += float((numer / s**rho).sum())
        prefix = float(s[-1])
        remaining -= z.size
    return total


def _r_draws(
    n: int, k: int, rho: float, trials: int, rng: np.random.Generator, chunk: int = 1000
) -> np.ndarray:
    """Vectorized R draws (used internally by the calibration estimators)."""
    out = np.empty(trials)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        z = rng.standard_exponential((m, n))
        s = np.cumsum(z, axis=1)
        ratio = s[:, k - 1][:, None] / s[:, k:]
        if rho != 1:
            ratio **= rho
        out[done : done + m] = ratio.sum(axis=1)
        done += m
    return out


def _quantile_with_ci(
    draws: np.ndarray, delta: float, rng: np.random.Generator, boots: int = 200
):
    z = float(np.quantile(draws, 1.0 - delta))
    reps = np.empty(boots)
    m = draws.size
    for b in range(boots):
        reps[b] = np.quantile(draws[rng.integers(0, m, m)], 1.0 - delta)
    lo, hi = np.quantile(reps, [0.025, 0.975])
    return z, float(lo), float(hi)


def default_trials(delta: float) -> int:
    return max(10**5, math.ceil(1000 / delta))


def estimate_psi(
    n: int,
    k: int,
    rho: float,
    delta: float,
    trials: int | None = None,
    seed: int = 0,
    bootstrap: int = 200,
) -> Calibration:
    """Estimate psi(n, k, rho; delta) = k / (empirical (1-delta)-quantile of R).

    Attaches a 95% bootstrap CI for the implied constant and the
    collection constant B for the same delta.
    """
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    trials = default_trials(delta) if trials is None else int(trials)
    if trials < 100 / delta:
        raise ValueError(
            f"trials={trials} cannot resolve the {1 - delta:.4g} quantile; "
            f"need at least {math.ceil(100 / delta)}"
        )
    rng = np.random.default_rng(seed)
    draws = _r_draws(n, k, rho, trials, rng)
    z, z_lo, z_hi = _quantile_with_ci(draws, delta, rng, bootstrap)
    return Calibration(
        n=n,
        k=k,
        rho=rho,
        delta=delta,
        trials=trials,
        seed=seed,
        psi=k / z,
        z_quantile=z,
        implied_c=_implied_c(z, n, k, rho),
        B=choose_B(k, delta, seed=seed + 1),
        ci_lo=_implied_c(z_lo, n, k, rho),
        ci_hi=_implied_c(z_hi, n, k, rho),
    )


def estimate_psi_grid(
    n: int,
    ks: list[int],
    rhos: list[float],
    delta: float,
    trials: int | None = None,
    seed: int = 0,
    bootstrap: int = 200,
    chunk: int = 1000,
) -> dict:
    """Calibrations for every (k, rho) cell sharing one set of Exp(1) draws.

    Each cell's estimate has exactly the distribution of
    :func:`estimate_psi`; sharing the underlying exponentials across
    cells (common random numbers) only correlates cells with each other.
    Suffix sums make every cell O(trials) once the prefix table is built.
    """
    ks = sorted(set(int(k) for k in ks))
    if not all(1 <= k < n for k in ks):
        raise ValueError("need 1 <= k < n for every k")
    rhos = sorted(set(float(r) for r in rhos))
    trials = default_trials(delta) if trials is None else int(trials)
    if trials < 100 / delta:
        raise ValueError(f"trials={trials} cannot resolve the {1 - delta:.4g} quantile")
    rng = np.random.default_rng(seed)
    draws = {(k, r): np.empty(trials) for k in ks for r in rhos}
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        z = rng.standard_exponential((m, n))
        s = np.cumsum(z, axis=1)
        inv = 1.0 / s
        for rho in rhos:
            power = inv if rho == 1 else inv**rho
            # suffix[i] = sum_{j >= i} 1/S_{j+1}^rho
            suffix = np.cumsum(power[:, ::-1], axis=1)[:, ::-1]
            for k in ks:
                numer = s[:, k - 1] ** rho
                draws[(k, rho)][done : done + m] = numer * suffix[:, k]
        done += m
    out = {}
    for (k, rho), d in draws.items():
        z, z_lo, z_hi = _quantile_with_ci(d, delta, rng, bootstrap)
        out[(k, rho)] = Calibration(
            n=n,
            k=k,
            rho=rho,
            delta=delta,
            trials=trials,
            seed=seed,
            psi=k / z,
            z_quantile=z,
            implied_c=_implied_c(z, n, k, rho),
            B=choose_B(k, delta, seed=seed + 1),
            ci_lo=_implied_c(z_lo, n, k, rho),
            ci_hi=_implied_c(z_hi, n, k, rho),
        )
    return out


def erlang_tail(ell: int, eps: float, side: str) -> float:
    """Closed-form tail bounds for X ~ Erlang(ell, 1).

    ``side="upper"`` (requires eps >= 1) bounds P[X >= eps*ell];
    ``side="lower"`` (requires eps <= 1) bounds P[X <= eps*ell].
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    expo = eps - 1.0 - math.log(eps)
    if side == "upper":
        if eps < 1:
            raise ValueError("upper tail bound needs eps >= 1")
        return min(math.exp(-ell * expo) / eps, math.exp(1.0 - eps))
    if side == "lower":
        if eps > 1:
            raise ValueError("lower tail bound needs eps <= 1")
        return math.exp(-ell * expo)
    raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")


def sample_Gprime(rho: float, k1: int, k2: int, rng: np.random.Generator) -> float:
    """One draw of G'(rho, k1, k2) = (S_k1 / S_k2)^rho, always in (0, 1]."""
    if k1 >= k2:
        raise ValueError("need k1 < k2")
    a = rng.standard_gamma(k1)  # S_k1
    b = rng.standard_gamma(k2 - k1)  # S_k2 - S_k1
    return float((a / (a + b)) ** rho)


def sample_Gprime_batch(
    rho: float, k1: int, k2: int, trials: int, rng: np.random.Generator
) -> np.ndarray:
    if k1 >= k2:
        raise ValueError("need k1 < k2")
    a = rng.standard_gamma(k1, trials)
    b = rng.standard_gamma(k2 - k1, trials)
    return (a / (a + b)) ** rho


def choose_B(
    k: int, delta: float, trials: int | None = None, seed: int = 0
) -> int:
    """Smallest B with P[G'(rho, k+1, B(k+1)) > (1/3)^rho] <= delta.

    The event (S_{k+1}/S_{B(k+1)})^rho > (1/3)^rho does not depend on
    rho, so neither does B.  Capped at 63 (the worst-case constant from
    the Erlang bad-event analysis) and floored at 2.
    """
    if delta >= 1:
        return B_MIN
    trials = max(2 * 10**4, math.ceil(50 / delta)) if trials is None else int(trials)
    rng = np.random.default_rng(seed)
    # S at the marks B*(k+1) for B = 1..B_CAP, via Gamma(k+1) increments
    increments = rng.standard_gamma(k + 1, size=(trials, B_CAP))
    marks = np.cumsum(increments, axis=1)
    ratios = marks[:, :1] / marks[:, 1:]  # columns: B = 2..B_CAP
    exceed = (ratios > 1.0 / 3.0).mean(axis=0)
    hits = np.nonzero(exceed <= delta)[0]
    if hits.size == 0:
        return B_CAP
    return max(B_MIN, int(hits[0]) + 2)


def empirical_domination_check(
    v: FrequencyVector,
    p: float,
    q: float,
    k: int,
    trials: int = 10**5,
    seed: int = 0,
    grid_points: int = 512,
    chunk: int = 2000,
) -> dict:
    """One-sided CDF comparison of the realized tail ratio against R.

    Draws F = tail_k(w*)_q^q / |w*_(k)|^q under fresh transform
    randomness of ``v``, draws R(n, k, q/p), and reports the largest
    one-sided CDF violation max_t (CDF_R(t) - CDF_F(t)).  Domination
    predicts CDF_F >= CDF_R everywhere, so the violation should be MC
    noise only.  The two-sided gap is also reported for tightness checks.
    """
    if len(v) == 0:
        raise ValueError("need a nonzero input vector")
    n = len(v)
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    rho = q / p
    values = np.abs(v.value_array)
    rng = np.random.default_rng(seed)
    f_draws = np.empty(trials)
    done = 0
    inv_p = 1.0 / p
    while done < trials:
        m = min(chunk, trials - done)
        r = rng.standard_exponential((m, n))
        mags_q = (values[None, :] / r**inv_p) ** q
        part = np.partition(mags_q, n - k, axis=1)
        top = part[:, n - k :]
        kth = top.min(axis=1)
        f_draws[done : done + m] = (part[:, : n - k].sum(axis=1)) / kth
        done += m
    r_draws = _r_draws(n, k, rho, trials, rng, chunk=min(chunk, 1000))
    pooled = np.concatenate([f_draws, r_draws])
    grid = np.quantile(pooled, np.linspace(0.0, 1.0, grid_points))
    cdf_f = np.searchsorted(np.sort(f_draws), grid, side="right") / trials
    cdf_r = np.searchsorted(np.sort(r_draws), grid, side="right") / trials
    diff = cdf_r - cdf_f
    return {
        "n": n,
        "k": k,
        "rho": rho,
        "trials": trials,
        "violation": float(diff.max()),  # positive = F above R somewhere
        "max_gap": float(np.abs(diff).max()),
        "mean_F": float(f_draws.mean()),
        "mean_R": float(r_draws.mean()),
    }


def _cache_path(cache_dir, n, k, rho, delta, trials, seed) -> str:
    name = (
        f"cal_v{CACHE_VERSION}_n{n}_k{k}_rho{rho:g}_d{delta:g}_t{trials}_s{seed}.json"
    )
    return os.path.join(cache_dir, name)


def calibrate(
    n: int,
    k: int,
    rho: float,
    delta: float,
    trials: int | None = None,
    seed: int = 0,
    cache_dir: str | None = None,
) -> Calibration:
    """Cached wrapper around :func:`estimate_psi`.

    Calibration dominates setup cost, so results are memoized to a
    versioned JSON file keyed by every input parameter.
    """
    trials = default_trials(delta) if trials is None else int(trials)
    if cache_dir:
        path = _cache_path(cache_dir, n, k, rho, delta, trials, seed)
        if os.path.exists(path):
            with open(path) as fh:
                return Calibration.from_json(fh.read())
    cal = estimate_psi(n, k, rho, delta, trials, seed)
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(cal.to_json())
    return cal
