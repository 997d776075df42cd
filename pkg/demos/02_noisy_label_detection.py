"""
Finding flipped labels with influence scores
============================================

Flips 20% of the labels in a 500-point pool, trains on the corrupted data,
and ranks candidates by noisiness (the negated benefit score). The flip
ledger is the ground truth, so precision at any cutoff is measurable.
"""

import numpy as np

from iif import (
    DampingPolicy,
    NoiseSpec,
    RngSpec,
    SynthSpec,
    avg_validation_gradient,
    datainf_scores,
    detection_report,
    flip_labels,
    gen_synth,
    lambda_policy,
    per_sample_gradients,
    train_logreg,
)

train_ds, train_feats = gen_synth(
    SynthSpec(n=500, d=20, sep=2.0, seed=RngSpec(7, "demo:train")), id_prefix="t"
)
val_ds, val_feats = gen_synth(
    SynthSpec(n=100, d=20, sep=2.0, seed=RngSpec(7, "demo:val")),
    id_prefix="v", split="validation", role="validation",
)

noisy_ds, ledger = flip_labels(train_ds, NoiseSpec(rho=0.2, seed=RngSpec(7, "flip")))
print(f"flipped {len(ledger)} of {len(train_ds)} labels")

# the model only ever sees the corrupted pool; validation stays clean
model = train_logreg(noisy_ds, train_feats, mu=1e-3)
train_grads = per_sample_gradients(model, noisy_ds, train_feats)
val_grads = per_sample_gradients(model, val_ds, val_feats, role="validation")

v = avg_validation_gradient(val_grads)
lambdas = lambda_policy(train_grads, DampingPolicy("relative", 0.1))
score = datainf_scores(v, train_grads, lambdas)

print("\nprecision of the noisiness ranking against the flip ledger:")
for m in (25, 50, 100, 200):
    rep = detection_report(score.noisiness_vector(), ledger, m)
    print(f"  precision@{m:<4d} = {rep.precision_at_m:.3f}")

rep = detection_report(score.noisiness_vector(), ledger, 100)
hits = [i for i in rep.ranked_ids[:10]]
flags = ["flipped" if i in set(ledger) else "clean" for i in hits]
print("\ntop 10 suspects:")
for rec_id, flag in zip(hits, flags):
    print(f"  {rec_id}  {flag}")
