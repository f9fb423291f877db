"""Command-line front end: generate / calibrate / sample / estimate / tvd-sample / bench."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from .calibration import Calibration, estimate_psi
from .core import StatisticSpec, aggregate, read_elements, write_elements
from .estimate import estimate_statistic
from .rhh import RhhConfig
from .sample import WorSample
from .transform import TransformConfig
from .tvd import (
    ExactFrequencyOracle,
    TvdConfig,
    build_oracle_samplers,
    tvd_sample,
)
from .worp import one_pass_sample, two_pass_sample


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for bench")
    parser.add_argument("--out-dir", default=".", help="directory for outputs")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="worp",
        description="Without-replacement lp sampling of element streams via heavy-hitter sketches",
    )
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic element file")
    _add_common(g)
    g.add_argument("--dist", choices=["zipf", "uniform"], default="zipf")
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--parts", type=int, default=1, help="elements per key")
    g.add_argument("--signed", action="store_true", help="split into signed updates")
    g.add_argument("--shuffle", action="store_true")
    g.add_argument("--out", required=True)

    c = sub.add_parser("calibrate", help="Monte Carlo estimate of the sketch parameter")
    _add_common(c)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--rho", type=float, required=True)
    c.add_argument("--delta", type=float, default=0.01)
    c.add_argument("--trials", type=int, default=None)
    c.add_argument("--out", required=True)

    s = sub.add_parser("sample", help="run a WOR sampling pipeline over an element file")
    _add_common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--passes", type=int, choices=[1, 2], default=2)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--q", type=int, choices=[1, 2], default=2)
    s.add_argument("--epsilon", type=float, default=1.0 / 3.0)
    s.add_argument("--cal", required=True, help="calibration JSON from `worp calibrate`")
    s.add_argument("--keyhash-n", type=int, default=None)
    s.add_argument("--rows", type=int, default=None, help="override sketch rows")
    s.add_argument("--width", type=int, default=None, help="override sketch width")
    s.add_argument("--half-gate", action="store_true")
    s.add_argument("--extended", action="store_true")
    s.add_argument("--integer-keys", action="store_true")
    s.add_argument("--out", required=True)

    e = sub.add_parser("estimate", help="estimate a sum statistic from a sample file")
    _add_common(e)
    e.add_argument("--sample", required=True)
    e.add_argument("--stat", default="p1", help="p<power>, e.g. p1, p2, p3")
    e.add_argument("--out", required=True)

    t = sub.add_parser("tvd-sample", help="low-variation-distance k-set sampler runs")
    _add_common(t)
    t.add_argument("--input", required=True)
    t.add_argument("--k", type=int, required=True)
    t.add_argument("--p", type=float, required=True)
    t.add_argument("--mode", choices=["oracle", "rejection"], default="oracle")
    t.add_argument("--runs", type=int, default=1000)
    t.add_argument("--r", type=int, default=None, help="sampler count (default 8k)")
    t.add_argument("--integer-keys", action="store_true")
    t.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="desk-scale experiment suite, CSV outputs")
    _add_common(b)
    b.add_argument("--profile", choices=["desk", "small"], default="small")

    return top


def cmd_generate(args) -> int:
    v = (
        bench_mod.gen_zipf(args.alpha, args.n, args.scale)
        if args.dist == "zipf"
        else bench_mod.gen_uniform(args.n, args.scale)
    )
    elements = bench_mod.vector_to_elements(
        v, parts=args.parts, signed=args.signed, seed=args.seed, shuffle=args.shuffle
    )
    count = write_elements(args.out, elements)
    print(f"wrote {count} elements for {args.n} keys to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    cal = estimate_psi(args.n, args.k, args.rho, args.delta, args.trials, seed=args.seed)
    with open(args.out, "w") as fh:
        fh.write(cal.to_json())
    print(
        f"psi={cal.psi:.6g} impliedC={cal.implied_c:.4g} "
        f"(95% CI {cal.ci_lo:.4g}..{cal.ci_hi:.4g}) B={cal.B} -> {args.out}"
    )
    return 0


def _load_elements(args) -> list:
    return list(read_elements(args.input, integer_keys=args.integer_keys))


def cmd_sample(args) -> int:
    with open(args.cal) as fh:
        cal = Calibration.from_json(fh.read())
    elements = _load_elements(args)
    distinct = len({e.key for e in elements})
    keyhash_n = args.keyhash_n or bench_mod.next_pow2(4 * max(distinct, 1))
    tcfg = TransformConfig(p=args.p, seed=args.seed, keyhash_n=keyhash_n)
    rhh_cfg = None
    if args.rows or args.width:
        psi = cal.psi / 3**args.q if args.passes == 2 else args.epsilon**args.q * cal.psi
        rhh_cfg = RhhConfig(
            k=args.k + 1,
            psi=min(psi, 1.0),
            delta=cal.delta,
            q=args.q,
            n=keyhash_n,
            seed=args.seed,
            rows=args.rows,
            width=args.width,
        )
    if args.passes == 2:
        sample = two_pass_sample(
            elements,
            args.k,
            args.q,
            cal,
            tcfg,
            rhh_cfg=rhh_cfg,
            half_gate=args.half_gate,
            extended=args.extended,
        )
    else:
        sample = one_pass_sample(
            elements, args.k, args.q, args.epsilon, cal, tcfg, rhh_cfg=rhh_cfg
        )
    with open(args.out, "w") as fh:
        fh.write(sample.to_json())
    status = "FAILED" if sample.failed else f"{len(sample.entries)} keys, tau={sample.tau:.6g}"
    print(f"{sample.mode}: {status} -> {args.out}")
    return 0


def cmd_estimate(args) -> int:
    with open(args.sample) as fh:
        sample = WorSample.from_json(fh.read())
    stat = args.stat.strip().lower()
    if stat == "identity":
        stat = "p1"
    if not stat.startswith("p"):
        raise SystemExit(f"unknown statistic {args.stat!r}; use p<power>")
    spec = StatisticSpec(power=float(stat[1:]))
    est = estimate_statistic(sample, spec)

    def enc(key):
        return key.decode("utf-8") if isinstance(key, bytes) else key

    doc = {
        "statistic": stat,
        "value": est.value,
        "mode": sample.mode,
        "per_key": {str(enc(k)): c for k, c in est.contributions.items()},
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    print(f"{stat} estimate = {est.value!r} -> {args.out}")
    return 0


def cmd_tvd_sample(args) -> int:
    elements = _load_elements(args)
    v = aggregate(elements)
    cfg = TvdConfig(k=args.k, p=args.p, n=len(v), r=args.r)
    counts: dict = {}
    fails = 0
    for run in range(args.runs):
        samplers = build_oracle_samplers(
            v, args.p, cfg.sampler_count, seed=args.seed + run, rejection=args.mode == "rejection"
        )
        result = tvd_sample(cfg, samplers, ExactFrequencyOracle(v))
        if result.failed:
            fails += 1
            continue
        key = tuple(sorted(result.keys, key=lambda x: (isinstance(x, bytes), x)))
        counts[key] = counts.get(key, 0) + 1

    def enc(key):
        return key.decode("utf-8") if isinstance(key, bytes) else str(key)

    lines = ["keys,count,frequency"]
    ok_runs = args.runs - fails
    for key, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        lines.append(f"{'|'.join(enc(k) for k in key)},{count},{count / ok_runs!r}")
    if fails:
        lines.append(f"FAIL,{fails},{fails / args.runs!r}")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"{ok_runs}/{args.runs} runs produced k-sets ({len(counts)} distinct) -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    cache = os.path.join(out_dir, "cal-cache")
    for sc in bench_mod.table3_scenarios(args.profile, seed_base=args.seed + 1):
        result = bench_mod.run_scenario(sc, cache_dir=cache, out_dir=out_dir, threads=args.threads)
        print(f"[{sc.name}] {result.wall_seconds:.1f}s")
        for row in result.nrmse_rows:
            print(
                f"  {row['pipeline']:>10} nu^{row['power']:g}: NRMSE {row['nrmse']:.3e}"
                f" ({row['runs_used']} runs, {row['failures']} failures)"
            )
    # effective-size curve for the WR-vs-WOR comparison
    profile_n = 10**4 if args.profile == "desk" else 10**3
    for alpha in (1.0, 2.0):
        v = bench_mod.gen_zipf(alpha, profile_n)
        for p in (1.0, 2.0):
            rows = bench_mod.wr_effective_size_curve(
                v, p, ks=[10, 30, 100, 300, 1000], runs=30, seed=args.seed
            )
            path = os.path.join(out_dir, f"effective_size_zipf{alpha:g}_p{p:g}.csv")
            with open(path, "w") as fh:
                fh.write(bench_mod._csv_text(rows, ["k", "effective_mean"]))
    print(f"CSV outputs in {out_dir}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "calibrate": cmd_calibrate,
    "sample": cmd_sample,
    "estimate": cmd_estimate,
    "tvd-sample": cmd_tvd_sample,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
