"""Mergeable residual-heavy-hitter sketches.

Two flavors behind one interface (init / process / merge / est):

* :class:`ProjectionSketch` -- a CountSketch-style signed random
  projection.  Handles signed values, works in the l2 norm, and is linear
  in the input, so merged tables are bit-identical to the table of the
  concatenated stream.
* :class:`CounterSketch` -- a Space-Saving counter table.  Positive
  values only, works in the l1 norm, deterministic error bound.

Both promise, for a (k, psi) configuration sized by their capacity
formulas, that all frequency estimates are within
``(psi/k) * tail_k`` of the truth (in the respective norm, with
probability 1 - delta for the projection flavor).
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Purpose, SeedRand, _mix64, canonical_key, fingerprint64, fingerprints, key_order_bytes

__all__ = ["RhhConfig", "ProjectionSketch", "CounterSketch", "new_sketch", "load_sketch"]


@dataclass(frozen=True)
class RhhConfig:
    """Parameters shared by both sketch flavors.

    ``rows``/``width``/``capacity`` override the sizing formulas when set;
    otherwise the sizes are derived from (k, psi, delta, n) with the
    empirical constants ``c_rows``, ``c_width``, ``c_capacity``.
    """

    k: int
    psi: float
    delta: float = 0.05
    q: int = 2
    n: int = 1 << 16
    seed: int = 0
    c_rows: float = 4.0
    c_width: float = 6.0
    c_capacity: float = 4.0
    rows: int | None = None
    width: int | None = None
    capacity: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.psi <= 1:
            raise ValueError("psi must be in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.q not in (1, 2):
            raise ValueError("q must be 1 or 2")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def projection_rows(self) -> int:
        if self.rows is not None:
            return self.rows
        return math.ceil(self.c_rows * math.log(self.n / self.delta))

    @property
    def projection_width(self) -> int:
        if self.width is not None:
            return self.width
        return math.ceil(self.c_width * self.k / self.psi)

    @property
    def counter_capacity(self) -> int:
        if self.capacity is not None:
            return self.capacity
        return math.ceil(self.c_capacity * self.k / self.psi)


def new_sketch(cfg: RhhConfig):
    """Initialize the sketch flavor matching cfg.q (2 -> projection, 1 -> counters)."""
    return ProjectionSketch(cfg) if cfg.q == 2 else CounterSketch(cfg)


def _check_mergeable(a, b):
    if type(a) is not type(b):
        raise ValueError("cannot merge different sketch flavors")
    if a._merge_key() != b._merge_key():
        raise ValueError("cannot merge sketches with different configurations")


class ProjectionSketch:
    """Signed random projection (CountSketch) with median-of-rows estimates.

    Keys may be anything hashable by the key fingerprint; the pipelines
    feed integer keys from [n].  The table is linear in the input, so
    ``merge`` is an entrywise sum; merged state is bit-identical to the
    single-stream state whenever cell sums are exact in float64
    (integer-valued updates), and equal up to addition rounding otherwise.
    """

    FLAVOR = 2

    def __init__(self, cfg: RhhConfig):
        if cfg.q != 2:
            raise ValueError("projection sketch is the q=2 flavor")
        self.cfg = cfg
        self.rows = cfg.projection_rows
        self.width = cfg.projection_width
        stream = SeedRand(cfg.seed, Purpose.SKETCH_ROW)._stream
        idx = np.arange(self.rows, dtype=np.uint64)
        self._salt_bucket = _mix64(stream ^ (np.uint64(2) * idx + np.uint64(1)))
        self._salt_sign = _mix64(stream ^ (np.uint64(2) * idx + np.uint64(2)))
        self.table = np.zeros((self.rows, self.width))
        self.count = 0

    def _merge_key(self):
        c = self.cfg
        return (c.k, c.psi, c.delta, c.q, c.n, c.seed, self.rows, self.width)

    def _buckets_signs(self, fps: np.ndarray):
        h = _mix64(fps[None, :] ^ self._salt_bucket[:, None])
        buckets = (h % np.uint64(self.width)).astype(np.int64)
        h = _mix64(fps[None, :] ^ self._salt_sign[:, None])
        signs = 1.0 - 2.0 * ((h >> np.uint64(32)) & np.uint64(1)).astype(np.float64)
        return buckets, signs

    def process(self, key, value: float) -> None:
        self.process_batch(fingerprints([key]), np.asarray([float(value)]))

    def process_batch(self, fps: np.ndarray, values: np.ndarray) -> None:
        """Add many (key fingerprint, value) updates at once."""
        if fps.size == 0:
            return
        buckets, signs = self._buckets_signs(fps)
        flat = buckets + (np.arange(self.rows)[:, None] * self.width)
        np.add.at(
            self.table.reshape(-1), flat.reshape(-1), (signs * values).reshape(-1)
        )
        self.count += int(fps.size)

    def est(self, key) -> float:
        return float(self.est_batch(fingerprints([key]))[0])

    def est_batch(self, fps: np.ndarray) -> np.ndarray:
        """Median-of-rows estimates (lower middle for an even row count)."""
        buckets, signs = self._buckets_signs(fps)
        vals = signs * np.take_along_axis(self.table, buckets, axis=1)
        vals.sort(axis=0)
        return vals[(self.rows - 1) // 2]

    def est_domain(self) -> np.ndarray:
        """Estimates for every integer key in [0, n)."""
        return self.est_batch(fingerprints(range(self.cfg.n)))

    def merge(self, other: "ProjectionSketch") -> "ProjectionSketch":
        _check_mergeable(self, other)
        out = ProjectionSketch(self.cfg)
        out.table = self.table + other.table
        out.count = self.count + other.count
        return out

    def energy(self) -> float:
        """Median-of-rows estimate of ||nu||_2^2."""
        return float(np.sort((self.table**2).sum(axis=1))[(self.rows - 1) // 2])

    def failure_test(self, k: int | None = None, ests: np.ndarray | None = None) -> bool:
        """True when the input looks like it lacks (k, psi) residual heavy hitters.

        Checks whether one of the k largest estimates falls below the
        sketch's own error-bound scale.  ``ests`` supplies precomputed
        domain estimates; otherwise the integer domain [0, n) is scanned.
        """
        k = self.cfg.k if k is None else k
        if self.count == 0:
            return True
        if ests is None:
            ests = self.est_domain()
        top = np.sort(np.abs(ests))[-k:]
        if top.size < k:
            return True
        tail_est = max(self.energy() - float((top**2).sum()), 0.0)
        return float(top[0] ** 2) < (self.cfg.psi / k) * tail_est

    # -- serialization -----------------------------------------------------
    def to_bytes(self) -> bytes:
        head = _pack_header(self.cfg, self.FLAVOR, self.count, 0.0)
        body = struct.pack("<II", self.rows, self.width)
        return head + body + self.table.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ProjectionSketch":
        cfg, flavor, count, _, off = _unpack_header(blob)
        if flavor != cls.FLAVOR:
            raise ValueError("blob does not contain a projection sketch")
        rows, width = struct.unpack_from("<II", blob, off)
        off += 8
        sk = cls(replace(cfg, rows=rows, width=width))
        table = np.frombuffer(blob, dtype="<f8", count=rows * width, offset=off)
        sk.table = table.reshape(rows, width).astype(np.float64)
        sk.count = count
        return sk


class CounterSketch:
    """Space-Saving counters with per-key overestimation bounds.

    Stores at most ``capacity`` keys as (count, error) pairs.  A stored
    count never underestimates the key's true frequency and overshoots
    it by at most the recorded error.  Values must be positive.
    """

    FLAVOR = 1

    def __init__(self, cfg: RhhConfig):
        if cfg.q != 1:
            raise ValueError("counter sketch is the q=1 flavor")
        self.cfg = cfg
        self.capacity = cfg.counter_capacity
        self.counters: dict = {}  # key -> [count, err]
        self._heap: list = []  # (count, order_bytes, key), lazily stale
        self.total = 0.0
        self.count = 0

    def _merge_key(self):
        c = self.cfg
        return (c.k, c.psi, c.delta, c.q, c.n, c.seed, self.capacity)

    def process(self, key, value: float) -> None:
        value = float(value)
        if value < 0:
            raise ValueError("counter sketch accepts nonnegative values only")
        key = canonical_key(key)
        self.total += value
        self.count += 1
        slot = self.counters.get(key)
        if slot is not None:
            slot[0] += value
        elif len(self.counters) < self.capacity:
            self.counters[key] = [value, 0.0]
        else:
            mkey, mcount = self._pop_min()
            del self.counters[mkey]
            self.counters[key] = [mcount + value, mcount]
            key_to_push = key
            self._push(key_to_push, mcount + value)
            return
        self._push(key, self.counters[key][0])

    def _push(self, key, count: float) -> None:
        heapq.heappush(self._heap, (count, key_order_bytes(key), key))
        if len(self._heap) > 4 * self.capacity + 8:
            self._rebuild_heap()

    def _rebuild_heap(self) -> None:
        self._heap = [
            (c, key_order_bytes(k), k) for k, (c, _) in self.counters.items()
        ]
        heapq.heapify(self._heap)

    def _pop_min(self):
        # discard stale heap entries until one matches the live table
        while self._heap:
            count, _, key = heapq.heappop(self._heap)
            slot = self.counters.get(key)
            if slot is not None and slot[0] == count:
                return key, count
        raise RuntimeError("counter heap out of sync")

    def est(self, key) -> float:
        slot = self.counters.get(canonical_key(key))
        return slot[0] if slot is not None else 0.0

    def error_bound(self, key) -> float:
        slot = self.counters.get(canonical_key(key))
        return slot[1] if slot is not None else 0.0

    def est_batch(self, keys) -> np.ndarray:
        return np.asarray([self.est(k) for k in keys], dtype=np.float64)

    def merge(self, other: "CounterSketch") -> "CounterSketch":
        """Counter union, then truncation to the largest ``capacity`` keys.

        A key absent from a full sketch may have true frequency up to
        that sketch's minimum count, so the minimum is added to both the
        merged count and the merged error bound.  Merged estimates keep
        the overestimation invariant, with error bounds adding up.
        """
        _check_mergeable(self, other)
        out = CounterSketch(self.cfg)
        floor_a = self._admission_floor()
        floor_b = other._admission_floor()
        merged: dict = {}
        for key in self.counters.keys() | other.counters.keys():
            ca, ea = self.counters.get(key, (floor_a, floor_a))
            cb, eb = other.counters.get(key, (floor_b, floor_b))
            merged[key] = [ca + cb, ea + eb]
        keep = sorted(
            merged.items(), key=lambda kv: (-kv[1][0], key_order_bytes(kv[0]))
        )[: out.capacity]
        out.counters = {k: v for k, v in keep}
        out._rebuild_heap()
        out.total = self.total + other.total
        out.count = self.count + other.count
        return out

    def _admission_floor(self) -> float:
        if len(self.counters) < self.capacity or not self.counters:
            return 0.0
        return min(c for c, _ in self.counters.values())

    def failure_test(self, k: int | None = None) -> bool:
        """True when the input looks like it lacks (k, psi) residual heavy hitters."""
        k = self.cfg.k if k is None else k
        if not self.counters:
            return True
        counts = np.sort(np.asarray([c for c, _ in self.counters.values()]))
        if counts.size < k:
            return True
        top = counts[-k:]
        tail_est = max(self.total - float(top.sum()), 0.0)
        return float(top[0]) < (self.cfg.psi / k) * tail_est

    # -- serialization -----------------------------------------------------
    def to_bytes(self) -> bytes:
        head = _pack_header(self.cfg, self.FLAVOR, self.count, self.total)
        parts = [head, struct.pack("<II", self.capacity, len(self.counters))]
        for key, (count, err) in sorted(
            self.counters.items(), key=lambda kv: key_order_bytes(kv[0])
        ):
            kb = key_order_bytes(key)
            tag = 0 if isinstance(key, int) else 1
            parts.append(struct.pack("<BI", tag, len(kb)) + kb)
            parts.append(struct.pack("<dd", count, err))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CounterSketch":
        cfg, flavor, count, total, off = _unpack_header(blob)
        if flavor != cls.FLAVOR:
            raise ValueError("blob does not contain a counter sketch")
        capacity, n_entries = struct.unpack_from("<II", blob, off)
        off += 8
        sk = cls(replace(cfg, capacity=capacity))
        for _ in range(n_entries):
            tag, klen = struct.unpack_from("<BI", blob, off)
            off += 5
            kb = blob[off : off + klen]
            off += klen
            key = int.from_bytes(kb, "big") if tag == 0 else kb
            c, e = struct.unpack_from("<dd", blob, off)
            off += 16
            sk.counters[key] = [c, e]
        sk._rebuild_heap()
        sk.count = count
        sk.total = total
        return sk


# -- versioned binary header (shared by both flavors, little-endian) ------
_MAGIC = b"WRHH"
_VERSION = 1
# magic, version, flavor, q, k, n, seed, count, psi, delta,
# c_rows, c_width, c_capacity, total
_HEADER = "<4sHBBqqQQdddddd"


def _pack_header(cfg: RhhConfig, flavor: int, count: int, total: float) -> bytes:
    return struct.pack(
        _HEADER,
        _MAGIC,
        _VERSION,
        flavor,
        cfg.q,
        cfg.k,
        cfg.n,
        cfg.seed & ((1 << 64) - 1),
        count,
        cfg.psi,
        cfg.delta,
        cfg.c_rows,
        cfg.c_width,
        cfg.c_capacity,
        total,
    )


def _unpack_header(blob: bytes):
    size = struct.calcsize(_HEADER)
    magic, version, flavor, q, k, n, seed, count, psi, delta, cr, cw, cc, total = (
        struct.unpack_from(_HEADER, blob, 0)
    )
    if magic != _MAGIC:
        raise ValueError("not a sketch blob (bad magic)")
    if version != _VERSION:
        raise ValueError(f"unsupported sketch blob version {version}")
    cfg = RhhConfig(
        k=k, psi=psi, delta=delta, q=q, n=n, seed=seed,
        c_rows=cr, c_width=cw, c_capacity=cc,
    )
    return cfg, flavor, count, total, size


def load_sketch(blob: bytes):
    """Deserialize either sketch flavor from its versioned binary blob."""
    _, flavor, *_ = _unpack_header(blob)
    if flavor == ProjectionSketch.FLAVOR:
        return ProjectionSketch.from_bytes(blob)
    if flavor == CounterSketch.FLAVOR:
        return CounterSketch.from_bytes(blob)
    raise ValueError(f"unknown sketch flavor {flavor}")
