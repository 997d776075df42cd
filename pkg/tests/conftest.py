import pytest

from iif.core import RngSpec
from iif.influence import (
    DampingPolicy,
    avg_validation_gradient,
    datainf_scores,
    exact_scores,
    lambda_policy,
)
from iif.synthlab import (
    NoiseSpec,
    SynthSpec,
    flip_labels,
    gen_synth,
    per_sample_gradients,
    train_logreg,
)


def build_noisy_instance(seed, n=500, n_val=100, d=20, sep=2.0, mu=1e-3, rho=0.2):
    """The standard lab chain: generate, corrupt, train on the noisy pool,
    extract gradients at the optimum."""
    train_ds, train_feats = gen_synth(
        SynthSpec(n=n, d=d, sep=sep, seed=RngSpec(seed, "synth:train")), id_prefix="t"
    )
    val_ds, val_feats = gen_synth(
        SynthSpec(n=n_val, d=d, sep=sep, seed=RngSpec(seed, "synth:validation")),
        id_prefix="v",
        split="validation",
        role="validation",
    )
    noisy_ds, ledger = flip_labels(train_ds, NoiseSpec(rho=rho, seed=RngSpec(seed, "flip")))
    model = train_logreg(noisy_ds, train_feats, mu=mu)
    train_grads = per_sample_gradients(model, noisy_ds, train_feats)
    val_grads = per_sample_gradients(model, val_ds, val_feats, role="validation")
    v = avg_validation_gradient(val_grads)
    lambdas = lambda_policy(train_grads, DampingPolicy("relative", 0.1))
    return {
        "clean_ds": train_ds,
        "noisy_ds": noisy_ds,
        "train_feats": train_feats,
        "val_ds": val_ds,
        "val_feats": val_feats,
        "ledger": ledger,
        "model": model,
        "train_grads": train_grads,
        "val_grads": val_grads,
        "v": v,
        "lambdas": lambdas,
        "mu": mu,
    }


@pytest.fixture(scope="session")
def default_instance():
    """Default acceptance instance: n=500, d=20, sep=2.0, mu=1e-3, rho=0.2."""
    return build_noisy_instance(seed=7)


@pytest.fixture(scope="session")
def fidelity_instance():
    """Same shape as the default instance, drawn with a different stream."""
    return build_noisy_instance(seed=2)


@pytest.fixture(scope="session")
def default_scores(default_instance):
    inst = default_instance
    return {
        "datainf": datainf_scores(inst["v"], inst["train_grads"], inst["lambdas"]),
        "exact": exact_scores(inst["v"], inst["train_grads"], inst["lambdas"]),
    }
