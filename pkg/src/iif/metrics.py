"""Evaluation metrics: noisy-detection precision, rank correlation,
task-match rate, and selection overlap."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import Dataset, ExampleRecord, RankedSelection, ScoreVector, rank_all
from .errors import IdMismatch, Undefined, UnknownId


@dataclass(frozen=True)
class DetectionReport:
    m: int
    precision_at_m: float
    ranked_ids: tuple[str, ...]
    ledger_size: int

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "precision_at_m": self.precision_at_m,
            "ranked_ids": list(self.ranked_ids),
            "ledger_size": self.ledger_size,
        }


def detection_report(
    noisiness: ScoreVector, ledger: Sequence[str], m: int
) -> DetectionReport:
    """Precision of the top-m noisiness ranking against the flipped-id ledger."""
    ledger_set = set(ledger)
    unknown = ledger_set - noisiness.ids()
    if unknown:
        raise UnknownId(f"ledger ids not scored: {sorted(unknown)[:5]}")
    ranked = rank_all(noisiness)
    cutoff = min(m, len(ranked))
    hits = sum(1 for rec_id in ranked[:cutoff] if rec_id in ledger_set)
    precision = hits / cutoff if cutoff else 0.0
    return DetectionReport(
        m=m,
        precision_at_m=precision,
        ranked_ids=tuple(ranked),
        ledger_size=len(ledger_set),
    )


def spearman(a: ScoreVector, b: ScoreVector) -> float:
    """Rank correlation with average ranks on ties."""
    if a.ids() != b.ids():
        raise IdMismatch("score vectors cover different id sets")
    ids = sorted(a.entries)
    if len(ids) < 2:
        raise Undefined("rank correlation needs at least 2 entries")
    ra = rankdata([a.entries[i] for i in ids])
    rb = rankdata([b.entries[i] for i in ids])
    sa, sb = ra.std(), rb.std()
    if sa == 0.0 or sb == 0.0:
        raise Undefined("rank correlation undefined for constant scores")
    return float(np.corrcoef(ra, rb)[0, 1])


def task_match_rate(
    selections: Sequence[RankedSelection],
    queries: Sequence[ExampleRecord],
    pool: Dataset,
) -> float:
    """Fraction of selected demonstrations sharing the paired query's task tag,
    pooled over all queries."""
    if len(selections) != len(queries):
        raise IdMismatch("each selection must be paired with its query")
    by_id = pool.id_map()
    total = 0
    matched = 0
    for sel, query in zip(selections, queries):
        for rec_id in sel.ids:
            total += 1
            if by_id[rec_id].task == query.task:
                matched += 1
    return matched / total if total else 0.0


def selection_overlap(a: RankedSelection, b: RankedSelection) -> float:
    """|ids(a) & ids(b)| / max(|a|, |b|); 1.0 when both are empty."""
    if len(a) == 0 and len(b) == 0:
        return 1.0
    inter = len(set(a.ids) & set(b.ids))
    return inter / max(len(a), len(b))
