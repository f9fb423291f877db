"""Two-pass and one-pass sampling pipelines over unaggregated streams.

Pass one sketches the power-transformed stream with a residual-heavy-
hitter sketch.  The two-pass pipeline then re-reads the stream,
collecting exact frequencies for keys whose estimated transformed
frequency ranks high (the composable :class:`CollectT` structure), and
emits the exact top-k by transformed frequency.  The one-pass pipeline
skips the second pass and emits estimated frequencies instead.

Both pipelines shard: sketches merge linearly, CollectT structures merge
by priority union, and workers only need to agree on the seeds.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .calibration import Calibration
from .core import Element, canonical_key, fingerprints, key_order_bytes
from .rhh import CounterSketch, ProjectionSketch, RhhConfig, new_sketch
from .sample import SampleEntry, WorSample
from .transform import TransformConfig

__all__ = [
    "CollectT",
    "collect_pass",
    "one_pass_sample",
    "sample_from_collect",
    "sketch_pass",
    "two_pass_sample",
]

_CHUNK = 4096


def _element_chunks(stream: Iterable, chunk: int = _CHUNK):
    keys, values = [], []
    for item in stream:
        if isinstance(item, Element):
            keys.append(item.key)
            values.append(item.value)
        else:
            k, v = item
            keys.append(canonical_key(k))
            values.append(float(v))
        if len(keys) >= chunk:
            yield keys, np.asarray(values)
            keys, values = [], []
    if keys:
        yield keys, np.asarray(values)


class _TransformedEstimator:
    """Frozen pass-one sketch queried on the transformed key domain."""

    def __init__(self, sketch, tcfg: TransformConfig):
        self.sketch = sketch
        self.tcfg = tcfg
        self.hashed = isinstance(sketch, ProjectionSketch)

    def batch(self, keys: list) -> np.ndarray:
        if self.hashed:
            out_keys = [self.tcfg.hashed_key(k) for k in keys]
            return self.sketch.est_batch(fingerprints(out_keys))
        return self.sketch.est_batch(keys)


def sketch_pass(stream: Iterable, tcfg: TransformConfig, cfg: RhhConfig):
    """Build the pass-one rHH sketch of the transformed stream (shardable).

    The projection flavor processes hashed integer output keys; the
    counter flavor stores original keys natively.
    """
    sketch = new_sketch(cfg)
    hashed = isinstance(sketch, ProjectionSketch)
    for keys, values in _element_chunks(stream):
        scales = tcfg.scale_batch(fingerprints(keys))
        tvalues = values / scales
        if hashed:
            out_keys = [tcfg.hashed_key(k) for k in keys]
            sketch.process_batch(fingerprints(out_keys), tvalues)
        else:
            for key, tv in zip(keys, tvalues):
                sketch.process(key, tv)
    return sketch


class CollectT:
    """Composable top-priority structure collecting exact frequencies.

    Priorities are the frozen pass-one estimates.  In capacity mode the
    structure keeps the ``capacity`` keys with the largest priority
    magnitudes.  In half-gate mode it keeps the top-(k+1) priorities seen
    so far plus every key whose priority magnitude is at least half the
    (k+1)-st; the gate only tightens as keys arrive, so an admitted key
    has been admitted since its first element and its exact frequency is
    complete.
    """

    def __init__(self, capacity: int | None = None, half_gate_k: int | None = None):
        if (capacity is None) == (half_gate_k is None):
            raise ValueError("exactly one of capacity / half_gate_k is required")
        self.capacity = capacity
        self.half_gate_k = half_gate_k
        self.stored: dict = {}  # key -> [priority, value_sum]
        self._heap: list = []  # (|priority|, order_bytes, key), capacity mode
        self._topset: dict = {}  # key -> |priority|, half-gate mode
        # False while no key was ever rejected or dropped: then the stored
        # set provably contains every distinct key of the processed stream
        self.saturated = False

    # -- admission ----------------------------------------------------------
    def process(self, key, value: float, est: float) -> None:
        key = canonical_key(key)
        slot = self.stored.get(key)
        if slot is not None:
            slot[1] += value
            return
        if self.capacity is not None:
            self._admit_capacity(key, value, est)
        else:
            self._admit_half_gate(key, value, est)

    def _admit_capacity(self, key, value, est) -> None:
        mag = abs(est)
        if len(self.stored) >= self.capacity:
            self.saturated = True
            lo_mag, lo_bytes, lo_key = self._peek_min()
            if (mag, key_order_bytes(key)) <= (lo_mag, lo_bytes):
                return
            heapq.heappop(self._heap)
            del self.stored[lo_key]
        self.stored[key] = [est, value]
        heapq.heappush(self._heap, (mag, key_order_bytes(key), key))

    def _peek_min(self):
        while self._heap:
            mag, ob, key = self._heap[0]
            if key in self.stored and abs(self.stored[key][0]) == mag:
                return mag, ob, key
            heapq.heappop(self._heap)
        raise RuntimeError("collect heap out of sync")

    def _admit_half_gate(self, key, value, est) -> None:
        mag = abs(est)
        k1 = self.half_gate_k + 1
        gate = self._gate()
        in_top = False
        if key not in self._topset:
            if len(self._topset) < k1:
                self._topset[key] = mag
                in_top = True
            else:
                lo_key = min(self._topset, key=lambda x: (self._topset[x], key_order_bytes(x)))
                if mag > self._topset[lo_key]:
                    del self._topset[lo_key]
                    self._topset[key] = mag
                    in_top = True
        new_gate = self._gate()
        if in_top or mag >= 0.5 * new_gate:
            self.stored[key] = [est, value]
        else:
            self.saturated = True
        if new_gate > gate:
            self._sweep(new_gate)

    def _gate(self) -> float:
        if len(self._topset) < self.half_gate_k + 1:
            return 0.0
        return min(self._topset.values())

    def _sweep(self, gate: float) -> None:
        drop = [
            k
            for k, (pri, _) in self.stored.items()
            if abs(pri) < 0.5 * gate and k not in self._topset
        ]
        for k in drop:
            self.saturated = True
            del self.stored[k]

    def __len__(self) -> int:
        return len(self.stored)

    # -- composition ----------------------------------------------------------
    def merge(self, other: "CollectT") -> "CollectT":
        """Priority union, then re-apply the structure's retention rule.

        Both inputs must be built against the same frozen pass-one sketch,
        so a key stored on both sides carries the same priority; exact
        value accumulators add.
        """
        if (self.capacity, self.half_gate_k) != (other.capacity, other.half_gate_k):
            raise ValueError("cannot merge differently configured structures")
        out = CollectT(capacity=self.capacity, half_gate_k=self.half_gate_k)
        out.saturated = self.saturated or other.saturated
        merged: dict = {}
        for src in (self.stored, other.stored):
            for key, (pri, val) in src.items():
                slot = merged.get(key)
                if slot is None:
                    merged[key] = [pri, val]
                else:
                    slot[1] += val
        if self.capacity is not None:
            keep = sorted(
                merged.items(),
                key=lambda kv: (abs(kv[1][0]), key_order_bytes(kv[0])),
                reverse=True,
            )[: self.capacity]
            if len(keep) < len(merged):
                out.saturated = True
            out.stored = {k: v for k, v in keep}
            out._heap = [
                (abs(pri), key_order_bytes(k), k) for k, (pri, _) in out.stored.items()
            ]
            heapq.heapify(out._heap)
        else:
            top = sorted(
                {**self._topset, **other._topset}.items(),
                key=lambda kv: (-kv[1], key_order_bytes(kv[0])),
            )[: self.half_gate_k + 1]
            out._topset = dict(top)
            gate = out._gate()
            out.stored = {
                k: v
                for k, v in merged.items()
                if k in out._topset or abs(v[0]) >= 0.5 * gate
            }
            if len(out.stored) < len(merged):
                out.saturated = True
        return out


def collect_pass(
    stream: Iterable,
    tcfg: TransformConfig,
    estimator: _TransformedEstimator,
    capacity: int | None = None,
    half_gate_k: int | None = None,
) -> CollectT:
    """Run pass two over a stream shard against a frozen pass-one sketch."""
    T = CollectT(capacity=capacity, half_gate_k=half_gate_k)
    for keys, values in _element_chunks(stream):
        unique = list(dict.fromkeys(keys))
        ests = dict(zip(unique, estimator.batch(unique)))
        for key, value in zip(keys, values):
            T.process(key, float(value), float(ests[key]))
    return T


def sample_from_collect(
    T: CollectT, k: int, tcfg: TransformConfig, extended: bool = False
) -> WorSample:
    """Extract the final sample: top-k stored keys by exact transformed frequency."""
    keys = list(T.stored.keys())
    if not keys:
        return WorSample([], 0.0, "exact2pass", tcfg.p, tcfg.seed, k, underfull=True)
    values = np.asarray([T.stored[key][1] for key in keys])
    scales = tcfg.scale_batch(fingerprints(keys))
    transformed = values / scales
    order = sorted(
        range(len(keys)),
        key=lambda i: (-abs(transformed[i]), key_order_bytes(keys[i])),
    )

    def entry(i):
        return SampleEntry(keys[i], float(values[i]), float(transformed[i]))

    info = {"stored": len(keys)}
    if len(keys) < k + 1:
        return WorSample(
            [entry(i) for i in order],
            0.0,
            "exact2pass",
            tcfg.p,
            tcfg.seed,
            k,
            underfull=True,
            info=info,
        )
    if extended:
        ext = _extended_entries(T, k, keys, values, transformed, order)
        if ext is not None:
            entries = [entry(i) for i in ext]
            tau = abs(transformed[ext[-1]])
            info["extended_k"] = len(ext)
            return WorSample(
                entries, float(tau), "exact2pass", tcfg.p, tcfg.seed, k, info=info
            )
    entries = [entry(i) for i in order[:k]]
    tau = float(abs(transformed[order[k]]))
    return WorSample(entries, tau, "exact2pass", tcfg.p, tcfg.seed, k, info=info)


def _extended_entries(T, k, keys, values, transformed, order):
    """Larger certified sample: keys with |nu*| >= L + |nu*_(k+1)|/3.

    Certification requires every stored estimate to be within a third of
    the (k+1)-st exact transformed magnitude; when that fails the caller
    falls back to the plain size-k sample.  A collection that never
    rejected a key holds the whole dataset, so everything is certified.
    """
    if not T.saturated:
        return list(order)
    err = abs(transformed[order[k]]) / 3.0
    priorities = np.asarray([T.stored[key][0] for key in keys])
    if np.any(np.abs(priorities - transformed) > err + 1e-12):
        return None
    L = float(np.abs(priorities).min())
    cut = L + err
    chosen = [i for i in order if abs(transformed[i]) >= cut]
    top_k = order[:k]
    ext = list(dict.fromkeys(list(top_k) + chosen))
    ext.sort(key=lambda i: (-abs(transformed[i]), key_order_bytes(keys[i])))
    return ext


def _default_rhh(k: int, q: int, psi: float, cal: Calibration, tcfg: TransformConfig) -> RhhConfig:
    return RhhConfig(
        k=k + 1,
        psi=min(psi, 1.0),
        delta=cal.delta,
        q=q,
        n=tcfg.keyhash_n,
        seed=tcfg.seed,
    )


def _check_cal(cal: Calibration, k: int, q: int, tcfg: TransformConfig) -> None:
    rho = q / tcfg.p
    if cal.k != k + 1 or abs(cal.rho - rho) > 1e-9:
        raise ValueError(
            f"calibration is for (k={cal.k}, rho={cal.rho}), "
            f"pipeline needs (k={k + 1}, rho={rho})"
        )


def _failed(mode: str, tcfg: TransformConfig, k: int, reason: str) -> WorSample:
    return WorSample(
        [], 0.0, mode, tcfg.p, tcfg.seed, k, failed=True, info={"reason": reason}
    )


def two_pass_sample(
    stream,
    k: int,
    q: int,
    cal: Calibration,
    tcfg: TransformConfig,
    rhh_cfg: RhhConfig | None = None,
    B: int | None = None,
    half_gate: bool = False,
    extended: bool = False,
    check_failure: bool = True,
    sketch=None,
) -> WorSample:
    """Exact without-replacement sample of k keys by |frequency|^p, two passes.

    ``stream`` must be re-iterable with identical content (list, tuple,
    or a replayable reader); raw elements are never buffered.  The
    pass-one sketch parameter is psi = cal.psi / 3^q and pass two
    collects exact frequencies for the B(k+1) top-priority keys (or the
    half-gate variant).  Statistical failure is reported on the returned
    sample, not raised.  A prebuilt pass-one ``sketch`` (for example the
    merge of per-shard sketches) skips pass one.
    """
    _check_cal(cal, k, q, tcfg)
    if rhh_cfg is None:
        rhh_cfg = _default_rhh(k, q, cal.psi / 3**q, cal, tcfg)
    if sketch is None:
        sketch = sketch_pass(stream, tcfg, rhh_cfg)
    if check_failure and sketch.failure_test(k + 1):
        return _failed("exact2pass", tcfg, k, "rhh failure test fired")
    estimator = _TransformedEstimator(sketch, tcfg)
    B = cal.B if B is None else B
    if half_gate:
        T = collect_pass(stream, tcfg, estimator, half_gate_k=k)
    else:
        T = collect_pass(stream, tcfg, estimator, capacity=B * (k + 1))
    out = sample_from_collect(T, k, tcfg, extended=extended)
    out.info.update({"B": B, "half_gate": half_gate, "sketch_count": sketch.count})
    return out


def one_pass_sample(
    stream,
    k: int,
    q: int,
    eps: float,
    cal: Calibration,
    tcfg: TransformConfig,
    rhh_cfg: RhhConfig | None = None,
    tracker_capacity: int | None = None,
    check_failure: bool = True,
) -> WorSample:
    """Approximate without-replacement sample in a single pass.

    The sketch parameter is psi = eps^q * cal.psi.  The sample is the
    top-k keys by estimated transformed frequency; each entry carries the
    approximate input frequency est * r^(1/p) and the threshold is the
    (k+1)-st estimated transformed magnitude.
    """
    if not 0 < eps <= 1.0 / 3.0:
        raise ValueError("eps must be in (0, 1/3]")
    _check_cal(cal, k, q, tcfg)
    if rhh_cfg is None:
        rhh_cfg = _default_rhh(k, q, eps**q * cal.psi, cal, tcfg)
    sketch = new_sketch(rhh_cfg)
    hashed = isinstance(sketch, ProjectionSketch)
    cap = tracker_capacity or max(4 * (k + 1), 64)
    tracked: dict = {}  # original key -> |running estimate|
    for keys, values in _element_chunks(stream):
        scales = tcfg.scale_batch(fingerprints(keys))
        tvalues = values / scales
        if hashed:
            out_keys = [tcfg.hashed_key(kk) for kk in keys]
            sketch.process_batch(fingerprints(out_keys), tvalues)
        else:
            for key, tv in zip(keys, tvalues):
                sketch.process(key, tv)
        estimator = _TransformedEstimator(sketch, tcfg)
        unique = list(dict.fromkeys(keys))
        for key, est in zip(unique, estimator.batch(unique)):
            tracked[key] = abs(float(est))
            if len(tracked) > cap:
                lo = min(tracked, key=lambda x: (tracked[x], key_order_bytes(x)))
                del tracked[lo]
    if check_failure and sketch.failure_test(k + 1):
        return _failed("approx1pass", tcfg, k, "rhh failure test fired")
    if not tracked:
        return WorSample([], 0.0, "approx1pass", tcfg.p, tcfg.seed, k, underfull=True)
    estimator = _TransformedEstimator(sketch, tcfg)
    keys = list(tracked.keys())
    ests = estimator.batch(keys)
    scales = tcfg.scale_batch(fingerprints(keys))
    order = sorted(
        range(len(keys)), key=lambda i: (-abs(ests[i]), key_order_bytes(keys[i]))
    )
    info = {"eps": eps, "psi": rhh_cfg.psi, "tracked": len(keys)}
    entries = [
        SampleEntry(keys[i], float(ests[i] * scales[i]), float(ests[i]))
        for i in order[:k]
    ]
    if len(keys) < k + 1:
        return WorSample(
            entries, 0.0, "approx1pass", tcfg.p, tcfg.seed, k, underfull=True, info=info
        )
    tau = float(abs(ests[order[k]]))
    return WorSample(entries, tau, "approx1pass", tcfg.p, tcfg.seed, k, info=info)
