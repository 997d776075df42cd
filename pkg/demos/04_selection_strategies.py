"""
Selection strategies end to end
===============================

Runs every selection strategy for one query over the same pool and shows
how they disagree: similarity ranks by closeness, two-stage reranks the
similar half by influence, pruning drops suspected-noisy candidates first,
and averaging fuses both signals.
"""

import numpy as np

from iif import (
    DampingPolicy,
    NoiseSpec,
    RngSpec,
    SelectionPlan,
    SynthSpec,
    assemble_prompt,
    avg_validation_gradient,
    cosine_scores,
    datainf_scores,
    flip_labels,
    gen_synth,
    lambda_policy,
    per_sample_gradients,
    select_average,
    select_prune,
    select_random,
    select_similarity_only,
    select_two_stage,
    train_logreg,
)

train_ds, train_feats = gen_synth(
    SynthSpec(n=60, d=6, sep=2.0, seed=RngSpec(3, "demo:train")), id_prefix="t"
)
val_ds, val_feats = gen_synth(
    SynthSpec(n=10, d=6, sep=2.0, seed=RngSpec(3, "demo:val")),
    id_prefix="v", split="validation", role="validation",
)
noisy_ds, ledger = flip_labels(train_ds, NoiseSpec(rho=0.2, seed=RngSpec(3, "flip")))

model = train_logreg(noisy_ds, train_feats, mu=1e-3)
train_grads = per_sample_gradients(model, noisy_ds, train_feats)
val_grads = per_sample_gradients(model, val_ds, val_feats, role="validation")
influence = datainf_scores(
    avg_validation_gradient(val_grads),
    train_grads,
    lambda_policy(train_grads, DampingPolicy()),
)

query = val_ds.records[0]
sim = cosine_scores(query.id, val_feats, noisy_ds.ids(), train_feats)

k = 4
plans = {
    "similarity": SelectionPlan(strategy="similarity_only", k=k, sim_method="cosine"),
    "two_stage": SelectionPlan(strategy="two_stage", k=k, sim_method="cosine",
                               influence_method="datainf"),
    "prune": SelectionPlan(strategy="prune", k=k, sim_method="cosine",
                           influence_method="datainf", prune_fraction=0.2),
    "average": SelectionPlan(strategy="average", k=k, sim_method="cosine",
                             influence_method="datainf", alpha=0.5),
    "random": SelectionPlan(strategy="random", k=k, rng=RngSpec(3, "demo:random")),
}

flipped = set(ledger)
selections = {
    "similarity": select_similarity_only(plans["similarity"], query.id, noisy_ds, sim),
    "two_stage": select_two_stage(plans["two_stage"], query.id, noisy_ds, sim, influence),
    "prune": select_prune(plans["prune"], query.id, noisy_ds, sim, influence),
    "average": select_average(plans["average"], query.id, noisy_ds, sim, influence),
    "random": select_random(plans["random"], noisy_ds),
}

print(f"query {query.id} (label {query.label}), k={k}, pool of {len(noisy_ds)} "
      f"with {len(flipped)} flipped labels\n")
for name, sel in selections.items():
    marks = ["*" if i in flipped else " " for i in sel.ids]
    picked = "  ".join(f"{i}{m}" for i, m in zip(sel.ids, marks))
    print(f"  {name:11s} -> {picked}")
print("\n(* = the selected demonstration carries a flipped label)")

print("\nassembled prompt for the averaged selection (least relevant first):")
print(assemble_prompt(selections["average"], noisy_ds)[:400])
