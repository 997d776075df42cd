"""Selection strategies over a candidate pool: two-stage similarity prune +
influence rerank, influence pruning, influence-similarity weighted
averaging, plus similarity-only and seeded-random baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import Dataset, RankedSelection, RngSpec, ScoreVector, minmax_normalize, topk
from .errors import EmptyPoolAfterPrune, InvalidWeight, MissingScore
from .influence import InfluenceScore

STRATEGIES = ("two_stage", "prune", "average", "similarity_only", "random")
SIM_METHODS = ("bsr", "cosine", "bm25")
STAGE_ONE_MULTIPLIER = 2


@dataclass(frozen=True)
class SelectionPlan:
    """Strategy plus exactly the parameters that strategy needs."""

    strategy: str
    k: int
    sim_method: Optional[str] = None
    influence_method: Optional[str] = None
    alpha: Optional[float] = None
    prune_fraction: Optional[float] = None
    rng: Optional[RngSpec] = None
    # within-prompt ordering: least relevant first unless disabled
    ascending_prompt_order: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidWeight(f"unknown strategy {self.strategy!r}")
        if self.k < 1:
            raise InvalidWeight("k must be >= 1")
        if self.sim_method is not None and self.sim_method not in SIM_METHODS:
            raise InvalidWeight(f"unknown similarity method {self.sim_method!r}")
        needs = {
            "two_stage": {"sim_method", "influence_method"},
            "prune": {"sim_method", "influence_method", "prune_fraction"},
            "average": {"sim_method", "influence_method", "alpha"},
            "similarity_only": {"sim_method"},
            "random": {"rng"},
        }[self.strategy]
        optional = {"alpha", "prune_fraction", "rng", "sim_method", "influence_method"}
        for name in optional:
            value = getattr(self, name)
            if name in needs and value is None:
                raise InvalidWeight(f"strategy {self.strategy!r} requires {name}")
            if name not in needs and value is not None:
                raise InvalidWeight(f"strategy {self.strategy!r} does not take {name}")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise InvalidWeight(f"alpha must lie strictly inside (0, 1), got {self.alpha}")
        if self.prune_fraction is not None and not 0.0 <= self.prune_fraction < 1.0:
            raise InvalidWeight(f"prune fraction must lie in [0, 1), got {self.prune_fraction}")

    @property
    def beta(self) -> Optional[float]:
        return None if self.alpha is None else 1.0 - self.alpha


def _restrict(scores: ScoreVector, ids: Sequence[str], what: str) -> ScoreVector:
    missing = [rec_id for rec_id in ids if rec_id not in scores.entries]
    if missing:
        raise MissingScore(f"{what} scores missing ids {missing[:5]} (of {len(missing)})")
    return ScoreVector({rec_id: scores.entries[rec_id] for rec_id in ids}, scores.method_tag)


def _provenance(plan: SelectionPlan, query_id: Optional[str], **extra) -> dict:
    prov = {
        "strategy": plan.strategy,
        "k": plan.k,
        "sim_method": plan.sim_method,
        "influence_method": plan.influence_method,
        "alpha": plan.alpha,
        "prune_fraction": plan.prune_fraction,
        "query_id": query_id,
    }
    prov.update(extra)
    return {key: value for key, value in prov.items() if value is not None}


def select_similarity_only(
    plan: SelectionPlan, query_id: str, pool: Dataset, sim_scores: ScoreVector
) -> RankedSelection:
    sim = _restrict(sim_scores, pool.ids(), "similarity")
    ranked = topk(sim, plan.k)
    return RankedSelection(ranked.ids, ranked.scores, _provenance(plan, query_id))


def select_two_stage(
    plan: SelectionPlan,
    query_id: str,
    pool: Dataset,
    sim_scores: ScoreVector,
    influence: InfluenceScore,
) -> RankedSelection:
    """Keep the 2k most similar candidates, then rerank those by benefit."""
    sim = _restrict(sim_scores, pool.ids(), "similarity")
    benefit = _restrict(influence.benefit_vector(), pool.ids(), "influence")
    stage_one = topk(sim, STAGE_ONE_MULTIPLIER * plan.k)
    survivors = list(stage_one.ids)
    final = topk(_restrict(benefit, survivors, "influence"), plan.k)
    return RankedSelection(
        final.ids,
        final.scores,
        _provenance(plan, query_id, stage_one_survivors=tuple(survivors)),
    )


def select_prune(
    plan: SelectionPlan,
    query_id: str,
    pool: Dataset,
    sim_scores: ScoreVector,
    influence: InfluenceScore,
) -> RankedSelection:
    """Drop the ceil(p * n) noisiest candidates, then rank the rest by similarity."""
    ids = pool.ids()
    sim = _restrict(sim_scores, ids, "similarity")
    noisiness = _restrict(influence.noisiness_vector(), ids, "influence")
    n = len(ids)
    n_remove = math.ceil(plan.prune_fraction * n)
    if n_remove >= n:
        raise EmptyPoolAfterPrune(f"pruning {n_remove} of {n} leaves nothing to select")
    removed = tuple(topk(noisiness, n_remove).ids)
    keep = [rec_id for rec_id in ids if rec_id not in set(removed)]
    final = topk(_restrict(sim, keep, "similarity"), plan.k)
    return RankedSelection(
        final.ids, final.scores, _provenance(plan, query_id, pruned_ids=removed)
    )


def select_average(
    plan: SelectionPlan,
    query_id: str,
    pool: Dataset,
    sim_scores: ScoreVector,
    influence: InfluenceScore,
) -> RankedSelection:
    """Fuse min-max normalized benefit and similarity with weights alpha, 1-alpha."""
    if plan.alpha is None or not 0.0 < plan.alpha < 1.0:
        raise InvalidWeight("averaging requires alpha strictly inside (0, 1)")
    ids = pool.ids()
    sim = minmax_normalize(_restrict(sim_scores, ids, "similarity"))
    benefit = minmax_normalize(_restrict(influence.benefit_vector(), ids, "influence"))
    combined = {
        rec_id: plan.alpha * benefit.entries[rec_id] + plan.beta * sim.entries[rec_id]
        for rec_id in ids
    }
    final = topk(ScoreVector(combined, method_tag="combined"), plan.k)
    return RankedSelection(final.ids, final.scores, _provenance(plan, query_id))


def select_random(plan: SelectionPlan, pool: Dataset) -> RankedSelection:
    """k ids drawn uniformly without replacement; order fixed by the seed."""
    ids = sorted(pool.ids())
    gen = plan.rng.generator()
    perm = gen.permutation(len(ids))
    chosen = [ids[i] for i in perm[: min(plan.k, len(ids))]]
    scores = [float(len(chosen) - i) for i in range(len(chosen))]
    return RankedSelection(
        tuple(chosen),
        tuple(scores),
        _provenance(plan, None, seed=plan.rng.seed, stream=plan.rng.label),
    )


def assemble_prompt(
    selection: RankedSelection, pool: Dataset, ascending: bool = True
) -> str:
    """Demonstration blocks (input, output, a ### separator line) in prompt
    order; ascending score puts the least relevant first."""
    by_id = pool.id_map()
    order = list(selection.ids)
    if ascending:
        order = order[::-1]
    blocks = []
    for rec_id in order:
        rec = by_id[rec_id]
        blocks.append(f"{rec.input_text}\n{rec.output_text}\n###\n")
    return "".join(blocks)
