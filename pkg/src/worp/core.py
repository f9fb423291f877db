"""Element streams, frequency vectors, and deterministic seeded randomness.

Everything random in this library is a pure function of a 64-bit seed, a
purpose tag, and a key.  That makes runs reproducible across machines and
lets distributed workers agree on per-key random values without shipping
any state.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

__all__ = [
    "Element",
    "FrequencyVector",
    "Purpose",
    "SeedRand",
    "StatisticSpec",
    "aggregate",
    "draw_r",
    "fingerprint64",
    "fingerprints",
    "key_order_bytes",
    "read_elements",
    "tail_norm",
    "top_k_order",
    "write_elements",
]

Key = int | bytes

# splitmix64 finalizer constants
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_INT_KEY_TAG = np.uint64(0x1B873593A5A5A5A5)

# uint64 arithmetic relies on wrap-around
np.seterr(over="ignore")


def _mix64(x: np.uint64 | np.ndarray) -> np.uint64 | np.ndarray:
    """splitmix64 finalizer: a cheap, well-avalanched 64-bit permutation."""
    x = x.copy() if isinstance(x, np.ndarray) else np.uint64(x)
    x ^= x >> np.uint64(30)
    x *= _M1
    x ^= x >> np.uint64(27)
    x *= _M2
    x ^= x >> np.uint64(31)
    return x


def canonical_key(key) -> Key:
    """Normalize a key to the internal representation (int or bytes)."""
    if isinstance(key, str):
        key = key.encode("utf-8")
    if isinstance(key, bytes):
        if not key:
            raise ValueError("key must be non-empty")
        return key
    if isinstance(key, (int, np.integer)):
        key = int(key)
        if key < 0 or key >= 1 << 64:
            raise ValueError(f"integer keys must fit in uint64, got {key}")
        return key
    raise TypeError(f"unsupported key type {type(key).__name__}")


def key_order_bytes(key: Key) -> bytes:
    """Byte encoding used for deterministic tie-breaking (ascending)."""
    if isinstance(key, bytes):
        return key
    return int(key).to_bytes(8, "big")


def fingerprint64(key) -> int:
    """Seed-independent 64-bit fingerprint of a key.

    Byte keys go through blake2b; integer keys use an arithmetic mix so
    that whole integer domains can be fingerprinted vectorized.
    """
    key = canonical_key(key)
    if isinstance(key, bytes):
        return int.from_bytes(
            hashlib.blake2b(key, digest_size=8).digest(), "little"
        )
    return int(_mix64(np.uint64(key) * _GOLD + _INT_KEY_TAG))


def fingerprints(keys: Iterable) -> np.ndarray:
    """Vector of fingerprints for a sequence of keys (uint64 array)."""
    keys = list(keys)
    if keys and all(isinstance(k, (int, np.integer)) for k in keys):
        arr = np.asarray(keys, dtype=np.uint64)
        return _mix64(arr * _GOLD + _INT_KEY_TAG)
    return np.asarray([fingerprint64(k) for k in keys], dtype=np.uint64)


class Purpose(Enum):
    """Independent randomness streams derived from one seed."""

    TRANSFORM_EXP = np.uint64(0x7D1F_9E37_0000_0001)
    TRANSFORM_UNIFORM = np.uint64(0x7D1F_9E37_0000_0002)
    KEY_HASH = np.uint64(0x7D1F_9E37_0000_0003)
    SKETCH_ROW = np.uint64(0x7D1F_9E37_0000_0004)


class SeedRand:
    """Deterministic per-key randomness for one (seed, purpose) stream.

    The same (seed, purpose, key) always yields the same value, and
    distinct purposes or seeds give decorrelated values.  Uniform draws
    land in the open interval (0, 1); Exp(1) draws are -ln(u) and are
    therefore finite and strictly positive.
    """

    __slots__ = ("seed", "purpose", "_stream")

    def __init__(self, seed: int, purpose: Purpose):
        self.seed = int(seed) & ((1 << 64) - 1)
        self.purpose = purpose
        self._stream = _mix64(np.uint64(self.seed) ^ purpose.value)

    def _hash(self, key) -> np.uint64:
        return _mix64(np.uint64(fingerprint64(key)) ^ self._stream)

    def hash_batch(self, fps: np.ndarray) -> np.ndarray:
        return _mix64(fps ^ self._stream)

    def uniform(self, key) -> float:
        return float(_to_unit(self._hash(key)))

    def exp1(self, key) -> float:
        return -math.log(self.uniform(key))

    def key_index(self, key, n: int) -> int:
        if n <= 0:
            raise ValueError("key domain size must be positive")
        return int(self._hash(key) % np.uint64(n))

    def uniform_batch(self, fps: np.ndarray) -> np.ndarray:
        return _to_unit(self.hash_batch(fps))

    def exp1_batch(self, fps: np.ndarray) -> np.ndarray:
        return -np.log(self.uniform_batch(fps))

    def key_index_batch(self, fps: np.ndarray, n: int) -> np.ndarray:
        if n <= 0:
            raise ValueError("key domain size must be positive")
        return (self.hash_batch(fps) % np.uint64(n)).astype(np.int64)


def _to_unit(h):
    # top 53 bits plus a half-step: open interval (0, 1), 0 and 1 excluded
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def draw_r(key, seed: int, dist: str = "exp1") -> float:
    """Per-key random scale r_x for the bottom-k transform.

    ``dist`` is ``"exp1"`` (Exp(1), the ppswor flavor) or ``"uniform01"``
    (the priority flavor).  Pure function of (key, seed, dist).
    """
    if dist == "exp1":
        return SeedRand(seed, Purpose.TRANSFORM_EXP).exp1(key)
    if dist == "uniform01":
        return SeedRand(seed, Purpose.TRANSFORM_UNIFORM).uniform(key)
    raise ValueError(f"unknown distribution {dist!r}")


@dataclass(frozen=True)
class Element:
    """One unaggregated stream update: a key and a signed value."""

    key: Key
    value: float

    def __post_init__(self):
        object.__setattr__(self, "key", canonical_key(self.key))
        v = float(self.value)
        if not math.isfinite(v):
            raise ValueError(f"element value must be finite, got {self.value!r}")
        object.__setattr__(self, "value", v)


class FrequencyVector:
    """Aggregated key -> signed frequency map; the ground-truth oracle.

    Entries that aggregate to exactly zero are dropped, so absent keys
    are implicitly zero.  Instances are immutable after construction and
    safe to share between threads.
    """

    __slots__ = ("_entries", "_keys", "_values", "_fps")

    def __init__(self, entries: Mapping | None = None):
        cleaned: dict[Key, float] = {}
        for key, value in (entries or {}).items():
            v = float(value)
            if not math.isfinite(v):
                raise ValueError(f"non-finite frequency for key {key!r}")
            if v != 0.0:
                cleaned[canonical_key(key)] = v
        self._entries = cleaned
        self._keys = None
        self._values = None
        self._fps = None

    # -- mapping-ish interface -------------------------------------------
    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return canonical_key(key) in self._entries

    def __getitem__(self, key) -> float:
        return self._entries.get(canonical_key(key), 0.0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrequencyVector):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self) -> str:
        return f"FrequencyVector({len(self)} keys)"

    def keys(self):
        return self._entries.keys()

    def items(self):
        return self._entries.items()

    def to_dict(self) -> dict[Key, float]:
        return dict(self._entries)

    # -- cached array views ----------------------------------------------
    def _build_arrays(self) -> None:
        ordered = sorted(self._entries, key=key_order_bytes)
        self._keys = ordered
        self._values = np.asarray(
            [self._entries[k] for k in ordered], dtype=np.float64
        )
        self._fps = fingerprints(ordered)

    @property
    def key_list(self) -> list[Key]:
        """Keys in ascending key-byte order (the canonical tie-break order)."""
        if self._keys is None:
            self._build_arrays()
        return self._keys

    @property
    def value_array(self) -> np.ndarray:
        if self._values is None:
            self._build_arrays()
        return self._values

    @property
    def fingerprint_array(self) -> np.ndarray:
        if self._fps is None:
            self._build_arrays()
        return self._fps

    def norm(self, q: float) -> float:
        """||v||_q^q = sum |nu_x|^q."""
        return tail_norm(self, 0, q)


def aggregate(stream: Iterable, exact: bool = False) -> FrequencyVector:
    """Sum element values per key; exact-cancellation keys are dropped.

    Accepts :class:`Element` objects or (key, value) pairs, in any order
    (the result is order-invariant).  With ``exact=True`` values must be
    integral and are accumulated in exact integer arithmetic, which keeps
    oracle comparisons free of float rounding.
    """
    sums: dict[Key, float] = {}
    for item in stream:
        if isinstance(item, Element):
            key, value = item.key, item.value
        else:
            key, value = item
            key = canonical_key(key)
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"element value must be finite, got {value!r}")
        if exact:
            iv = int(value)
            if iv != value:
                raise ValueError("exact aggregation requires integral values")
            sums[key] = sums.get(key, 0) + iv
        else:
            sums[key] = sums.get(key, 0.0) + value
    return FrequencyVector({k: v for k, v in sums.items() if v != 0})


def tail_norm(v: FrequencyVector, k: int, q: float) -> float:
    """sum of |nu_x|^q over all but the k largest-magnitude entries."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if q <= 0:
        raise ValueError("q must be > 0")
    mags = np.abs(v.value_array)
    if k >= mags.size:
        return 0.0
    if k == 0:
        return float((mags**q).sum())
    part = np.partition(mags, mags.size - k)
    return float((part[: mags.size - k] ** q).sum())


def top_k_order(v: FrequencyVector, k: int) -> list[Key]:
    """Keys of the k largest magnitudes, ties broken by ascending key bytes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    mags = np.abs(v.value_array)
    # key_list is in ascending byte order, so a stable sort on -|nu|
    # breaks magnitude ties by ascending key bytes.
    order = np.argsort(-mags, kind="stable")[:k]
    keys = v.key_list
    return [keys[i] for i in order]


class StatisticSpec:
    """Specification of a sum statistic: sum_x f(nu_x) * L_x.

    ``f`` is either a power of the frequency or a custom callable with
    f(0) = 0.  ``L`` maps keys to coefficients; absent keys get 1.
    """

    __slots__ = ("power", "func", "L")

    def __init__(
        self,
        power: float | None = 1.0,
        func: Callable[[np.ndarray], np.ndarray] | None = None,
        L: Mapping | None = None,
    ):
        if func is not None:
            power = None
            if abs(float(func(np.asarray([0.0]))[0])) != 0.0:
                raise ValueError("statistic function must satisfy f(0) = 0")
        elif power is None:
            raise ValueError("either power or func is required")
        self.power = power
        self.func = func
        self.L = {canonical_key(k): float(c) for k, c in L.items()} if L else None

    @classmethod
    def identity(cls) -> "StatisticSpec":
        return cls(power=1.0)

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.func is not None:
            return np.asarray(self.func(values), dtype=np.float64)
        if self.power == 1.0:
            return values
        # preserve sign for odd-power statistics on signed frequencies
        return np.sign(values) * np.abs(values) ** self.power

    def coefficient(self, key) -> float:
        if self.L is None:
            return 1.0
        return self.L.get(canonical_key(key), 1.0)

    def true_value(self, v: FrequencyVector) -> float:
        vals = self.apply(v.value_array)
        if self.L is None:
            return float(vals.sum())
        coef = np.asarray([self.coefficient(k) for k in v.key_list])
        return float((vals * coef).sum())


# -- flat-file element format -------------------------------------------
def write_elements(path, elements: Iterable[Element]) -> int:
    """Write elements as newline-delimited ``key,value`` records (UTF-8)."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for e in elements:
            if not isinstance(e, Element):
                e = Element(*e)
            key = e.key
            text = key.decode("utf-8") if isinstance(key, bytes) else str(key)
            fh.write(f"{text},{e.value!r}\n")
            n += 1
    return n


def read_elements(path, integer_keys: bool = False) -> Iterator[Element]:
    """Read ``key,value`` records written by :func:`write_elements`.

    Values are parsed as decimals; the key is everything before the last
    comma, so keys may themselves contain commas.  ``integer_keys``
    parses keys as integers instead of byte strings.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                key, value = line.rsplit(",", 1)
                yield Element(int(key) if integer_keys else key, float(value))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad element record: {line!r}") from exc


class FileElementStream:
    """Re-iterable element source backed by a flat file (for two passes)."""

    def __init__(self, path, integer_keys: bool = False):
        self.path = path
        self.integer_keys = integer_keys

    def __iter__(self) -> Iterator[Element]:
        return read_elements(self.path, self.integer_keys)
