"""Domain types, score normalization, deterministic ranking, seeded randomness.

Everything here is immutable after construction and safe to share across
worker threads; the operations are pure functions.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DuplicateId, EmptyScores, InvalidScore, ParseError

SPLITS = ("train", "validation", "test")
ROLES = ("candidate_pool", "validation", "test")


@dataclass(frozen=True)
class ExampleRecord:
    """One candidate or evaluation example."""

    id: str
    task: str
    split: str
    input_text: str
    output_text: str = ""
    label: Optional[int] = None

    def __post_init__(self):
        if not self.id:
            raise ParseError("record id must be nonempty")
        if self.split not in SPLITS:
            raise ParseError(f"bad split {self.split!r} for id {self.id!r}")
        if self.label is not None and self.label < 0:
            raise ParseError(f"negative label for id {self.id!r}")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of records playing one role in a run."""

    records: tuple[ExampleRecord, ...]
    role: str = "candidate_pool"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ParseError(f"bad dataset role {self.role!r}")
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DuplicateId(f"duplicate id {rec.id!r}")
            seen.add(rec.id)
        if self.role in ("validation", "test"):
            for rec in self.records:
                if rec.label is None:
                    raise ParseError(
                        f"{self.role} dataset requires labels; id {rec.id!r} has none"
                    )

    def __len__(self):
        return len(self.records)

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]

    def by_id(self, rec_id: str) -> ExampleRecord:
        for rec in self.records:
            if rec.id == rec_id:
                return rec
        raise KeyError(rec_id)

    def id_map(self) -> dict[str, ExampleRecord]:
        return {rec.id: rec for rec in self.records}


@dataclass(frozen=True)
class ScoreVector:
    """Per-example real scores produced by one scoring method."""

    entries: Mapping[str, float]
    method_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))
        for rec_id, value in self.entries.items():
            if not math.isfinite(value):
                raise InvalidScore(f"non-finite score {value!r} for id {rec_id!r}")

    def __len__(self):
        return len(self.entries)

    def ids(self) -> set[str]:
        return set(self.entries)


@dataclass(frozen=True)
class RankedSelection:
    """Ordered selection, best first, with the scores that ranked it."""

    ids: tuple[str, ...]
    scores: tuple[float, ...]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        object.__setattr__(self, "provenance", dict(self.provenance))
        if len(self.ids) != len(self.scores):
            raise InvalidScore("ids and scores length mismatch")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("duplicate ids in selection")
        for i in range(1, len(self.scores)):
            if self.scores[i] > self.scores[i - 1]:
                raise InvalidScore("selection scores must be non-increasing")
            if self.scores[i] == self.scores[i - 1] and self.ids[i] < self.ids[i - 1]:
                raise InvalidScore("tied scores must be ordered by ascending id")

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class RngSpec:
    """Seed plus a stream label; identical pairs reproduce identical draws."""

    seed: int
    label: str = ""

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise InvalidScore(f"seed {self.seed} outside u64 range")

    def generator(self) -> np.random.Generator:
        # Hash (seed, label) so distinct labels give independent, platform-
        # stable streams regardless of numpy's SeedSequence internals.
        digest = hashlib.sha256(f"{self.seed}:{self.label}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def minmax_normalize(scores: ScoreVector) -> ScoreVector:
    """Map scores affinely onto [0, 1]; a constant vector maps to all 0.5.

    The 0.5 rule keeps fusion with a second score channel meaningful when
    one channel is degenerate.
    """
    if len(scores) == 0:
        raise EmptyScores("cannot normalize an empty score vector")
    values = list(scores.entries.values())
    lo, hi = min(values), max(values)
    if lo == hi:
        mapped = {k: 0.5 for k in scores.entries}
    else:
        span = hi - lo
        mapped = {k: (v - lo) / span for k, v in scores.entries.items()}
    return ScoreVector(mapped, method_tag=f"minmax({scores.method_tag})")


def topk(scores: ScoreVector, k: int) -> RankedSelection:
    """Top-k ids by score descending, ties broken by ascending id."""
    if k < 0:
        raise InvalidScore(f"k must be >= 0, got {k}")
    ranked = sorted(scores.entries.items(), key=lambda kv: (-kv[1], kv[0]))
    ranked = ranked[: min(k, len(ranked))]
    return RankedSelection(
        ids=tuple(rec_id for rec_id, _ in ranked),
        scores=tuple(value for _, value in ranked),
        provenance={"strategy": "topk", "k": k, "method_tag": scores.method_tag},
    )


def rank_all(scores: ScoreVector) -> list[str]:
    """All ids under the global tie rule (score descending, id ascending)."""
    return [rec_id for rec_id, _ in sorted(scores.entries.items(), key=lambda kv: (-kv[1], kv[0]))]


def seeded_shuffle(ids: Sequence[str], rng: RngSpec) -> list[str]:
    """Deterministic permutation of ids, fully fixed by the RngSpec."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise DuplicateId("seeded_shuffle requires distinct ids")
    gen = rng.generator()
    perm = gen.permutation(len(ids))
    return [ids[i] for i in perm]
