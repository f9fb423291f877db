"""Inverse-probability estimators over without-replacement samples.

A sampled key's estimate is f(frequency) / P[key enters the sample given
the threshold]; keys outside the sample contribute exactly zero.  Exact
samples use exact frequencies and the exact threshold; one-pass samples
substitute the approximate frequency and estimated threshold, which
makes them slightly biased (quantified by :func:`bias_mse_report`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FrequencyVector, StatisticSpec, canonical_key
from .sample import WorSample

__all__ = [
    "Estimate",
    "bias_mse_report",
    "covariance_sign_check",
    "estimate_statistic",
    "hypothesis_constant",
    "inclusion_prob",
    "nrmse",
    "per_key_estimates",
    "variance_bound_check",
]


def inclusion_prob(nu, tau: float, p: float):
    """P[key sampled | threshold tau] = 1 - exp(-(|nu|/tau)^p), ppswor flavor.

    ``tau`` is on the transformed scale, ``nu`` on the input scale.
    """
    if tau <= 0:
        raise ValueError("threshold must be positive")
    return 1.0 - np.exp(-((np.abs(nu) / tau) ** p))


@dataclass
class Estimate:
    """A sum-statistic estimate with its per-key contributions."""

    value: float
    contributions: dict
    mode_matched: bool = True


def estimate_statistic(sample: WorSample, spec: StatisticSpec) -> Estimate:
    """Estimate sum_x f(nu_x) L_x from a sample.

    Exact modes divide f(exact frequency) by the inclusion probability at
    the exact threshold; approximate mode uses the sample's approximate
    frequencies and estimated threshold the same way.  Underfull samples
    contain every key, so the plain sum is returned.
    """
    if sample.failed:
        raise ValueError("cannot estimate from a failed sample")
    keys = [e.key for e in sample.entries]
    freqs = np.asarray([e.frequency for e in sample.entries])
    fvals = spec.apply(freqs)
    coef = np.asarray([spec.coefficient(k) for k in keys])
    if sample.underfull or not sample.entries:
        contrib = fvals * coef
    else:
        contrib = fvals * coef / inclusion_prob(freqs, sample.tau, sample.p)
    return Estimate(
        value=float(contrib.sum()),
        contributions=dict(zip(keys, contrib.tolist())),
    )


def per_key_estimates(
    samples: list[WorSample], v: FrequencyVector, spec: StatisticSpec | None = None
) -> np.ndarray:
    """(runs, keys) matrix of per-key estimates, zero off-sample.

    Keys are ordered as ``v.key_list``; ``spec`` defaults to identity.
    """
    spec = spec or StatisticSpec.identity()
    index = {k: i for i, k in enumerate(v.key_list)}
    out = np.zeros((len(samples), len(index)))
    for r, sample in enumerate(samples):
        est = estimate_statistic(sample, spec)
        for key, c in est.contributions.items():
            i = index.get(key)
            if i is not None:
                out[r, i] = c
    return out


def nrmse(estimates, true_value: float) -> float:
    """Root mean squared error across runs, normalized by |true value|."""
    err = np.asarray(estimates, dtype=np.float64) - true_value
    return float(np.sqrt(np.mean(err**2)) / abs(true_value))


def variance_bound_check(
    samples: list[WorSample],
    v: FrequencyVector,
    k: int,
    slack_sigmas: float = 4.0,
) -> dict:
    """Check the per-key variance bound Var <= w_x ||w||_1 / (k-1).

    Applies to exact-mode samples drawn proportionally to the weight
    itself (p = 1, f = identity).  Empirical variances are compared to
    the bound plus ``slack_sigmas`` standard errors of the variance
    estimate; the summed bound ||w||_1^2 / (k-1) is checked the same
    way.  The tail-norm refinement has unspecified constants, so only
    its fitted constant is reported.
    """
    if k < 2:
        raise ValueError("the variance bound needs k >= 2")
    ests = per_key_estimates(samples, v)
    runs = ests.shape[0]
    w = np.abs(v.value_array)
    l1 = w.sum()
    bound = w * l1 / (k - 1)
    emp_mean = ests.mean(axis=0)
    emp_var = ests.var(axis=0, ddof=1)
    centered = ests - emp_mean
    m4 = (centered**4).mean(axis=0)
    var_se = np.sqrt(np.maximum(m4 - emp_var**2, 0.0) / runs)
    ok = emp_var <= bound + slack_sigmas * var_se
    total_se = math.sqrt(float((var_se**2).sum()))
    sum_ok = emp_var.sum() <= l1**2 / (k - 1) + slack_sigmas * total_se
    # Eq-style tail refinement: Var <= O(1/k) w_x ||tail_k(w)||_1, constant fitted
    from .core import tail_norm

    tail1 = tail_norm(v, k, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c_tail = np.nanmax(np.where(w > 0, emp_var * k / (w * tail1), 0.0)) if tail1 > 0 else float("nan")
    return {
        "runs": runs,
        "per_key_ok": bool(ok.all()),
        "violations": [v.key_list[i] for i in np.nonzero(~ok)[0]],
        "max_ratio": float(np.max(emp_var / bound)),
        "sum_ok": bool(sum_ok),
        "sum_var": float(emp_var.sum()),
        "sum_bound": float(l1**2 / (k - 1)),
        "tail_refinement_constant": float(c_tail),
    }


def covariance_sign_check(
    samples: list[WorSample],
    v: FrequencyVector,
    x1,
    x2,
    slack_sigmas: float = 3.0,
) -> dict:
    """One-sided check that Cov[w_hat_x1, w_hat_x2] <= 0 up to MC slack."""
    x1, x2 = canonical_key(x1), canonical_key(x2)
    if x1 == x2:
        raise ValueError("covariance sign check needs two distinct keys")
    ests = per_key_estimates(samples, v)
    index = {k: i for i, k in enumerate(v.key_list)}
    a = ests[:, index[x1]]
    b = ests[:, index[x2]]
    runs = a.size
    ac, bc = a - a.mean(), b - b.mean()
    cov = float((ac * bc).sum() / (runs - 1))
    se = float(np.sqrt(max(((ac * bc - cov) ** 2).mean(), 0.0) / runs))
    return {"cov": cov, "se": se, "ok": cov <= slack_sigmas * se}


def hypothesis_constant(p: float, eps_max: float = 0.25, grid: int = 2048) -> float:
    """sup over eps in (0, eps_max] of |(1 +/- eps)^p - 1| / eps.

    The smallest c with |f((1+eps)w) - f(w)| <= c*eps*f(w) for
    f(w) = w^p over the given range (both perturbation signs).
    """
    eps = np.linspace(eps_max / grid, eps_max, grid)
    up = np.abs((1.0 + eps) ** p - 1.0) / eps
    down = np.abs((1.0 - eps) ** p - 1.0) / eps
    return float(max(up.max(), down.max()))


def bias_mse_report(
    one_pass: list[WorSample],
    perfect: list[WorSample],
    v: FrequencyVector,
    spec: StatisticSpec,
    eps: float,
    keys=None,
    c_bias: float = 1.5,
    mse_var_slack: float = 1.0,
    mse_f2_slack: float = 1.0,
) -> dict:
    """Per-key bias and MSE of one-pass estimates against a perfect baseline.

    Runs must be paired (same transform seed per index).  Checks
    |bias| <= c_bias * eps * f(nu_x) and
    MSE <= (1 + mse_var_slack) * Var_perfect + mse_f2_slack * f(nu_x)^2
    for the requested keys (default: top 10 by |frequency|).
    """
    if len(one_pass) != len(perfect):
        raise ValueError("bias report needs paired run lists")
    if keys is None:
        mags = np.abs(v.value_array)
        order = np.argsort(-mags, kind="stable")[:10]
        keys = [v.key_list[i] for i in order]
    keys = [canonical_key(k) for k in keys]
    one_m = per_key_estimates(one_pass, v, spec)
    per_m = per_key_estimates(perfect, v, spec)
    index = {k: i for i, k in enumerate(v.key_list)}
    rows = []
    for key in keys:
        i = index[key]
        f_true = float(spec.apply(np.asarray([v[key]]))[0]) * spec.coefficient(key)
        bias = float(one_m[:, i].mean() - f_true)
        ratio = abs(bias) / abs(f_true) if f_true != 0 else float("inf")
        mse = float(((one_m[:, i] - f_true) ** 2).mean())
        var_perfect = float(per_m[:, i].var(ddof=1))
        rows.append(
            {
                "key": key,
                "f_true": f_true,
                "bias": bias,
                "bias_ratio": ratio,
                "bias_ok": ratio <= c_bias * eps,
                "mse": mse,
                "var_perfect": var_perfect,
                "mse_ok": mse
                <= (1.0 + mse_var_slack) * var_perfect + mse_f2_slack * f_true**2,
            }
        )
    return {
        "keys": rows,
        "bias_ok": all(r["bias_ok"] for r in rows),
        "mse_ok": all(r["mse_ok"] for r in rows),
        "max_bias_ratio": max(r["bias_ratio"] for r in rows),
    }
