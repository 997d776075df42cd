"""
Does influence actually predict retraining?
===========================================

The leave-one-out oracle retrains the model once per training point and
measures the true validation-loss change. Influence scores claim to predict
that delta at a fraction of the cost; this script checks the claim.
"""

import numpy as np

from iif import (
    DampingPolicy,
    NoiseSpec,
    RngSpec,
    SynthSpec,
    avg_validation_gradient,
    exact_scores,
    flip_labels,
    gen_synth,
    lambda_policy,
    loo_oracle,
    per_sample_gradients,
    train_logreg,
)

train_ds, train_feats = gen_synth(
    SynthSpec(n=80, d=8, sep=2.0, seed=RngSpec(5, "demo:train")), id_prefix="t"
)
val_ds, val_feats = gen_synth(
    SynthSpec(n=80, d=8, sep=2.0, seed=RngSpec(5, "demo:val")),
    id_prefix="v", split="validation", role="validation",
)
noisy_ds, ledger = flip_labels(train_ds, NoiseSpec(rho=0.15, seed=RngSpec(5, "flip")))

model = train_logreg(noisy_ds, train_feats, mu=1e-3)
train_grads = per_sample_gradients(model, noisy_ds, train_feats)
val_grads = per_sample_gradients(model, val_ds, val_feats, role="validation")
score = exact_scores(
    avg_validation_gradient(val_grads),
    train_grads,
    lambda_policy(train_grads, DampingPolicy()),
)

print(f"retraining {len(noisy_ds)} times for the oracle...")
deltas = loo_oracle(noisy_ds, train_feats, val_ds, val_feats, mu=1e-3)

ids = sorted(deltas)
dv = np.array([deltas[i] for i in ids])
bv = np.array([score.benefit[i] for i in ids])

# first-order theory: delta ~ benefit / n
corr = np.corrcoef(bv, dv)[0, 1]
agree = np.mean(np.sign(bv) == np.sign(dv))
print(f"pearson(benefit, LOO delta) = {corr:.4f}")
print(f"sign agreement              = {agree:.3f}")

flipped = set(ledger)
helpful_removals = [i for i in ids if deltas[i] < 0]
caught = sum(1 for i in helpful_removals if i in flipped)
print(f"\npoints whose removal helps validation: {len(helpful_removals)}")
print(f"of those, actually label-flipped:      {caught}")

worst = min(ids, key=lambda i: deltas[i])
print(f"\nmost harmful point by the oracle: {worst} "
      f"(delta {deltas[worst]:+.5f}, benefit {score.benefit[worst]:+.4f}, "
      f"{'flipped' if worst in flipped else 'clean'})")
