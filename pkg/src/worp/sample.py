"""The without-replacement sample record produced by every sampling path."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

from .core import canonical_key

__all__ = ["SampleEntry", "WorSample"]


class SampleEntry(NamedTuple):
    key: object
    frequency: float  # input-scale frequency (exact or approximate)
    transformed: float  # frequency / r^(1/p), estimated in one-pass mode


@dataclass
class WorSample:
    """k sampled keys with frequencies and the bottom-k threshold.

    ``tau`` lives on the transformed scale: it is the (k+1)-st largest
    transformed magnitude (exact in two-pass mode, estimated in one-pass
    mode).  Entries are sorted by decreasing transformed magnitude.
    ``mode`` records which frequencies/threshold the estimator should
    pair: ``exact`` (oracle), ``exact2pass``, or ``approx1pass``.
    """

    entries: list[SampleEntry]
    tau: float
    mode: str
    p: float
    seed: int
    k: int
    underfull: bool = False
    failed: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries = [
            SampleEntry(canonical_key(e[0]), float(e[1]), float(e[2]))
            for e in self.entries
        ]
        if not self.failed:
            mags = [abs(e.transformed) for e in self.entries]
            if any(m2 > m1 + 1e-12 * max(m1, 1.0) for m1, m2 in zip(mags, mags[1:])):
                raise ValueError("entries must be sorted by decreasing |transformed|")
            if mags and self.tau > min(mags) * (1 + 1e-12) and not self.underfull:
                raise ValueError("threshold exceeds a sampled transformed magnitude")

    @property
    def keys(self) -> list:
        return [e.key for e in self.entries]

    def key_set(self) -> set:
        return {e.key for e in self.entries}

    def frequency_of(self, key) -> float:
        key = canonical_key(key)
        for e in self.entries:
            if e.key == key:
                return e.frequency
        return 0.0

    # -- JSON round trip ----------------------------------------------------
    def to_json(self) -> str:
        def enc(key):
            if isinstance(key, bytes):
                return {"s": key.decode("utf-8")}
            return {"i": int(key)}

        doc = {
            "entries": [
                {**enc(e.key), "frequency": e.frequency, "transformed": e.transformed}
                for e in self.entries
            ],
            "tau": self.tau,
            "mode": self.mode,
            "p": self.p,
            "seed": self.seed,
            "k": self.k,
            "underfull": self.underfull,
            "failed": self.failed,
            "info": self.info,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WorSample":
        doc = json.loads(text)

        def dec(rec):
            return rec["s"].encode("utf-8") if "s" in rec else int(rec["i"])

        return cls(
            entries=[
                SampleEntry(dec(r), r["frequency"], r["transformed"])
                for r in doc["entries"]
            ],
            tau=doc["tau"],
            mode=doc["mode"],
            p=doc["p"],
            seed=doc["seed"],
            k=doc["k"],
            underfull=doc.get("underfull", False),
            failed=doc.get("failed", False),
            info=doc.get("info", {}),
        )
