"""Experiment harness: data generation, baselines, and end-to-end runs.

Reproduces the reference experiments at desk scale: Zipf inputs,
with-replacement vs without-replacement quality, sum-statistic NRMSE for
every pipeline, and rank-frequency curves, all emitted as CSV for
external plotting.  All WOR pipelines in a run share the same transform
seed, so their samples are directly comparable.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import Calibration, calibrate
from .core import Element, FrequencyVector, StatisticSpec, aggregate, fingerprints, read_elements
from .estimate import estimate_statistic, nrmse
from .rhh import RhhConfig
from .sample import WorSample
from .transform import TransformConfig, exact_bottomk_sample, transform_vector
from .tvd import ExactFrequencyOracle, TvdConfig, build_oracle_samplers, tvd_sample
from .worp import one_pass_sample, sketch_pass, two_pass_sample

__all__ = [
    "Scenario",
    "ScenarioResult",
    "gen_uniform",
    "gen_zipf",
    "perfect_wr_sample",
    "run_scenario",
    "table3_scenarios",
    "vector_to_elements",
    "wr_effective_size_curve",
    "wr_estimate",
]

PIPELINES = ("perfectWR", "perfectWOR", "worp1", "worp2", "tvd")


def gen_zipf(alpha: float, n: int, scale: float = 1.0) -> FrequencyVector:
    """Zipf frequencies nu_i = scale * i^(-alpha) on integer keys 1..n."""
    if alpha < 0 or n < 1:
        raise ValueError("need alpha >= 0 and n >= 1")
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return FrequencyVector(dict(zip(range(1, n + 1), scale * ranks**-alpha)))


def gen_uniform(n: int, scale: float = 1.0) -> FrequencyVector:
    return gen_zipf(0.0, n, scale)


def vector_to_elements(
    v: FrequencyVector,
    parts: int = 1,
    signed: bool = False,
    seed: int = 0,
    shuffle: bool = False,
) -> list[Element]:
    """Unroll an aggregated vector into a stream of elements.

    With ``parts > 1`` each frequency is split into that many updates
    summing to it; ``signed`` draws the updates around zero so individual
    elements carry both signs even for positive frequencies.
    """
    rng = np.random.default_rng(seed)
    out: list[Element] = []
    for key in v.key_list:
        value = v[key]
        if parts == 1:
            out.append(Element(key, value))
            continue
        if signed:
            noise = rng.normal(0.0, abs(value) + 1.0, parts - 1)
        else:
            noise = rng.uniform(0.0, abs(value) / parts, parts - 1)
        pieces = np.concatenate([noise, [value - noise.sum()]])
        out.extend(Element(key, float(x)) for x in pieces)
    if shuffle:
        perm = rng.permutation(len(out))
        out = [out[i] for i in perm]
    return out


# -- with-replacement baseline ---------------------------------------------
@dataclass
class WrSample:
    draws: list
    distinct: list
    k: int
    p: float

    @property
    def effective_size(self) -> int:
        return len(self.distinct)


def perfect_wr_sample(v: FrequencyVector, k: int, p: float, rng: np.random.Generator) -> WrSample:
    """k i.i.d. draws with P[x] proportional to |nu_x|^p."""
    if len(v) == 0:
        raise ValueError("cannot sample from the zero vector")
    weights = np.abs(v.value_array) ** p
    probs = weights / weights.sum()
    idx = rng.choice(len(probs), size=k, p=probs)
    keys = v.key_list
    draws = [keys[i] for i in idx]
    distinct = [keys[i] for i in sorted(set(int(j) for j in idx))]
    return WrSample(draws=draws, distinct=distinct, k=k, p=p)


def wr_estimate(sample: WrSample, v: FrequencyVector, spec: StatisticSpec) -> float:
    """Distinct-key inverse-inclusion estimate from a WR sample.

    pi_x = 1 - (1 - q_x)^k with q the normalized |nu|^p weights; needs
    oracle access to the weights, which is fine for a reference baseline.
    """
    weights = np.abs(v.value_array) ** sample.p
    probs = weights / weights.sum()
    index = {key: i for i, key in enumerate(v.key_list)}
    total = 0.0
    for key in sample.distinct:
        i = index[key]
        pi = 1.0 - (1.0 - probs[i]) ** sample.k
        fval = float(spec.apply(np.asarray([v.value_array[i]]))[0])
        total += fval * spec.coefficient(key) / pi
    return total


def wr_effective_size_curve(
    v: FrequencyVector, p: float, ks: list[int], runs: int, seed: int = 0
) -> list[dict]:
    """Mean effective (distinct) sample size of WR draws per actual size k."""
    rows = []
    for k in ks:
        sizes = [
            perfect_wr_sample(v, k, p, np.random.default_rng(seed + 7919 * r + k)).effective_size
            for r in range(runs)
        ]
        rows.append({"k": k, "effective_mean": float(np.mean(sizes))})
    return rows


# -- scenarios ---------------------------------------------------------------
@dataclass(frozen=True)
class Scenario:
    """One experiment: input family, sampling parameters, pipelines, runs."""

    name: str
    distribution: str = "zipf"  # zipf | uniform | file
    alpha: float = 1.0
    n: int = 10**4
    input_path: str | None = None
    k: int = 100
    p: float = 2.0
    q: int = 2
    eps: float = 1.0 / 3.0
    runs: int = 100
    seed_base: int = 1
    pipelines: tuple = ("perfectWR", "perfectWOR", "worp1", "worp2")
    statistics: tuple = (1.0, 2.0, 3.0)
    delta: float = 0.01
    cal_trials: int = 10**5
    sketch_rows: int | None = 5
    sketch_width: int | None = None  # default: 31k/rows style preset, see _sketch_cfg
    B: int | None = None
    tvd_runs_cap: int | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        for pipe in self.pipelines:
            if pipe not in PIPELINES:
                raise ValueError(f"unknown pipeline {pipe!r}")

    def load_vector(self) -> FrequencyVector:
        if self.distribution == "zipf":
            return gen_zipf(self.alpha, self.n)
        if self.distribution == "uniform":
            return gen_uniform(self.n)
        if self.distribution == "file":
            return aggregate(read_elements(self.input_path))
        raise ValueError(f"unknown distribution {self.distribution!r}")


def next_pow2(x: int) -> int:
    return 1 << max(0, (int(x) - 1).bit_length())


def _sketch_cfg(sc: Scenario, cal: Calibration, keyhash_n: int, seed: int) -> RhhConfig:
    """Fixed-size experimental sketch: total cells = 31k split over rows."""
    rows = sc.sketch_rows or 5
    width = sc.sketch_width or max(1, round(31 * sc.k / rows))
    return RhhConfig(
        k=sc.k + 1,
        psi=min(cal.psi / 3**sc.q, 1.0),
        delta=sc.delta,
        q=sc.q,
        n=keyhash_n,
        seed=seed,
        rows=rows,
        width=width,
    )


@dataclass
class ScenarioResult:
    scenario: Scenario
    nrmse_rows: list[dict]
    pipeline_stats: dict
    rank_frequency: list[dict]
    wall_seconds: float

    def nrmse(self, pipeline: str, power: float) -> float:
        for row in self.nrmse_rows:
            if row["pipeline"] == pipeline and row["power"] == power:
                return row["nrmse"]
        raise KeyError((pipeline, power))


def _error_event_holds(sketch, tcfg, v: FrequencyVector) -> bool:
    """Oracle check of the pass-one uniform error event on all keys."""
    keys, _, _, transformed = transform_vector(v, tcfg)
    if isinstance(sketch, ExactFrequencyOracle):
        return True
    from .worp import _TransformedEstimator

    ests = _TransformedEstimator(sketch, tcfg).batch(keys)
    kth = np.sort(np.abs(transformed))[-(sketch.cfg.k)]
    return bool(np.max(np.abs(ests - transformed)) <= kth / 3.0)


def _one_run(sc: Scenario, v: FrequencyVector, cal: Calibration, run: int) -> dict:
    seed = sc.seed_base + run
    keyhash_n = next_pow2(4 * len(v))
    tcfg = TransformConfig(p=sc.p, seed=seed, keyhash_n=keyhash_n)
    elements = vector_to_elements(v)
    out: dict = {"run": run}
    perfect = exact_bottomk_sample(v, sc.k, tcfg)
    specs = {pw: StatisticSpec(power=pw) for pw in sc.statistics}

    if "perfectWOR" in sc.pipelines:
        out["perfectWOR"] = {
            "sample": perfect,
            "estimates": {pw: estimate_statistic(perfect, sp).value for pw, sp in specs.items()},
            "effective_size": sc.k,
        }
    if "perfectWR" in sc.pipelines:
        wr = perfect_wr_sample(v, sc.k, sc.p, np.random.default_rng(10**9 + seed))
        out["perfectWR"] = {
            "estimates": {pw: wr_estimate(wr, v, sp) for pw, sp in specs.items()},
            "effective_size": wr.effective_size,
            "sample": wr,
        }
    rhh_cfg = _sketch_cfg(sc, cal, keyhash_n, seed)
    sketch = None
    if "worp2" in sc.pipelines or "worp1" in sc.pipelines:
        sketch = sketch_pass(elements, tcfg, rhh_cfg)
        event = _error_event_holds(sketch, tcfg, v)
    if "worp2" in sc.pipelines:
        s2 = two_pass_sample(
            elements, sc.k, sc.q, cal, tcfg, rhh_cfg=rhh_cfg, B=sc.B, sketch=sketch
        )
        out["worp2"] = {
            "sample": s2,
            "failed": s2.failed,
            "event": event,
            "equal": (not s2.failed) and s2.key_set() == perfect.key_set(),
            "estimates": {}
            if s2.failed
            else {pw: estimate_statistic(s2, sp).value for pw, sp in specs.items()},
        }
    if "worp1" in sc.pipelines:
        s1 = one_pass_sample(
            elements, sc.k, sc.q, sc.eps, cal, tcfg, rhh_cfg=rhh_cfg
        )
        overlap = len(s1.key_set() & perfect.key_set()) if not s1.failed else 0
        out["worp1"] = {
            "sample": s1,
            "failed": s1.failed,
            "event": event,
            "overlap": overlap,
            "estimates": {}
            if s1.failed
            else {pw: estimate_statistic(s1, sp).value for pw, sp in specs.items()},
        }
    if "tvd" in sc.pipelines:
        samplers = build_oracle_samplers(v, sc.p, 8 * sc.k, seed=10**6 + seed)
        result = tvd_sample(TvdConfig(k=sc.k, p=sc.p, n=len(v)), samplers, ExactFrequencyOracle(v))
        out["tvd"] = {
            "failed": result.failed,
            "trials": result.trials,
            "overlap": len(result.keys & perfect.key_set()) if not result.failed else 0,
        }
    return out


def _one_run_star(args):
    return _one_run(*args)


def run_scenario(
    sc: Scenario,
    cache_dir: str | None = None,
    out_dir: str | None = None,
    threads: int = 1,
) -> ScenarioResult:
    """Execute a scenario and assemble NRMSE and pipeline statistics.

    Failed pipeline runs are excluded from NRMSE and counted; the
    reduction over runs is ordered, so results are reproducible for a
    fixed scenario and seed base regardless of thread count.
    """
    t0 = time.time()
    v = sc.load_vector()
    cal = calibrate(
        n=len(v),
        k=sc.k + 1,
        rho=sc.q / sc.p,
        delta=sc.delta,
        trials=sc.cal_trials,
        seed=97,
        cache_dir=cache_dir,
    )
    args = [(sc, v, cal, r) for r in range(sc.runs)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(_one_run_star, args, chunksize=4))
    else:
        runs = [_one_run(*a) for a in args]

    specs = {pw: StatisticSpec(power=pw) for pw in sc.statistics}
    true_values = {pw: sp.true_value(v) for pw, sp in specs.items()}
    nrmse_rows = []
    stats: dict = {}
    for pipe in sc.pipelines:
        datas = [r[pipe] for r in runs]
        failures = sum(1 for d in datas if d.get("failed", False))
        used = [d for d in datas if not d.get("failed", False)]
        if pipe != "tvd":
            for pw in sc.statistics:
                ests = [d["estimates"][pw] for d in used]
                nrmse_rows.append(
                    {
                        "pipeline": pipe,
                        "power": pw,
                        "nrmse": nrmse(ests, true_values[pw]) if ests else float("nan"),
                        "true_value": true_values[pw],
                        "runs_used": len(ests),
                        "failures": failures,
                        "mean_estimate": float(np.mean(ests)) if ests else float("nan"),
                    }
                )
        pipe_stats = {"failures": failures, "runs": len(datas)}
        if pipe == "perfectWR":
            pipe_stats["effective_size_mean"] = float(
                np.mean([d["effective_size"] for d in datas])
            )
        if pipe == "worp2":
            pipe_stats["equality_rate"] = float(np.mean([d["equal"] for d in datas]))
            pipe_stats["event_rate"] = float(np.mean([d["event"] for d in datas]))
            pipe_stats["equal_given_event"] = _rate(
                [d["equal"] for d in datas if d["event"]]
            )
        if pipe == "worp1":
            pipe_stats["overlap_mean"] = float(
                np.mean([d["overlap"] for d in used]) if used else float("nan")
            )
        if pipe == "tvd":
            pipe_stats["trials_mean"] = float(np.mean([d["trials"] for d in datas]))
            pipe_stats["overlap_mean"] = float(
                np.mean([d["overlap"] for d in used]) if used else float("nan")
            )
        stats[pipe] = pipe_stats

    rank_rows = _rank_frequency_rows(sc, v, runs[0])
    result = ScenarioResult(
        scenario=sc,
        nrmse_rows=nrmse_rows,
        pipeline_stats=stats,
        rank_frequency=rank_rows,
        wall_seconds=time.time() - t0,
    )
    if out_dir:
        _write_outputs(result, out_dir)
    return result


def _rate(flags: list) -> float:
    return float(np.mean(flags)) if flags else float("nan")


def _rank_frequency_rows(sc: Scenario, v: FrequencyVector, run0: dict) -> list[dict]:
    """Rank-frequency curve from one representative run, per pipeline."""
    true_sorted = np.sort(np.abs(v.value_array))[::-1]
    columns: dict[str, list] = {}
    for pipe in sc.pipelines:
        if pipe == "tvd":
            continue
        data = run0.get(pipe)
        if data is None or data.get("failed", False):
            continue
        sample = data["sample"]
        if isinstance(sample, WrSample):
            freqs = sorted((abs(v[key]) for key in sample.distinct), reverse=True)
        else:
            freqs = sorted((abs(e.frequency) for e in sample.entries), reverse=True)
        columns[pipe] = freqs
    depth = max([len(c) for c in columns.values()] + [sc.k])
    rows = []
    for i in range(min(depth, len(true_sorted))):
        row = {"rank": i + 1, "true": float(true_sorted[i])}
        for pipe, freqs in columns.items():
            row[pipe] = float(freqs[i]) if i < len(freqs) else ""
        rows.append(row)
    return rows


# -- CSV emission -------------------------------------------------------------
def _csv_text(rows: list[dict], columns: list[str]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(row.get(c, "")) for c in columns))
    return "\n".join(lines) + "\n"


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_outputs(result: ScenarioResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, result.scenario.name)
    with open(base + "_nrmse.csv", "w") as fh:
        fh.write(
            _csv_text(
                result.nrmse_rows,
                ["pipeline", "power", "nrmse", "true_value", "runs_used", "failures", "mean_estimate"],
            )
        )
    stat_rows = [
        {"pipeline": pipe, "stat": stat, "value": value}
        for pipe, d in sorted(result.pipeline_stats.items())
        for stat, value in sorted(d.items())
    ]
    with open(base + "_pipeline_stats.csv", "w") as fh:
        fh.write(_csv_text(stat_rows, ["pipeline", "stat", "value"]))
    pipes = [p for p in result.scenario.pipelines if p != "tvd"]
    with open(base + "_rank_frequency.csv", "w") as fh:
        fh.write(_csv_text(result.rank_frequency, ["rank", "true", *pipes]))


# -- canned experiment sets ----------------------------------------------------
def table3_scenarios(profile: str = "desk", seed_base: int = 1) -> list[Scenario]:
    """The five summary-error rows: (lp, alpha, statistic powers) at desk scale.

    ``desk``: n=10^4, k=100, 100 runs, 31k-cell sketch.  ``small``:
    n=10^3, k=30, 50 runs, keeps CI runs under a minute.
    """
    if profile == "desk":
        n, k, runs = 10**4, 100, 100
    elif profile == "small":
        n, k, runs = 10**3, 30, 50
    else:
        raise ValueError(f"unknown profile {profile!r}")
    rows = [
        ("l2_zipf2", 2.0, 2.0, (2.0, 3.0)),
        ("l1_zipf2", 1.0, 2.0, (1.0, 3.0)),
        ("l1_zipf1", 1.0, 1.0, (3.0,)),
    ]
    return [
        Scenario(
            name=f"{name}_{profile}",
            alpha=alpha,
            n=n,
            k=k,
            p=p,
            runs=runs,
            seed_base=seed_base,
            statistics=powers,
        )
        for name, p, alpha, powers in rows
    ]
