"""Convex desk-scale lab: Gaussian-mixture binary classification, an L2
logistic trainer, per-sample gradients, label flipping, and a leave-one-out
retraining oracle. Everything influence scoring claims can be checked here
against ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .concurrency import parallel_map
from .core import Dataset, ExampleRecord, RngSpec
from .errors import NotConverged, UnsupportedLabels
from .store import EmbeddingSet, GradientBundle, GradientStore, LayerSchema

LAYER_NAME = "logreg"
DEFAULT_INSTANCE = dict(n=500, d=20, sep=2.0, mu=1e-3, rho=0.2)


@dataclass(frozen=True)
class SynthSpec:
    n: int
    d: int
    sep: float
    seed: RngSpec

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise ValueError("n must be even and >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.sep < 0:
            raise ValueError("sep must be >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    rho: float
    seed: RngSpec

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("flip fraction must be in [0, 1]")


@dataclass(frozen=True)
class LogRegModel:
    """Binary logistic regression; bias is excluded from the L2 penalty."""

    weights: np.ndarray
    bias: float
    mu: float
    converged: bool = True
    grad_norm: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise NotConverged("model parameters are not finite")
        if self.mu <= 0:
            raise ValueError("l2 strength mu must be > 0")

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return expit(self.logits(x))


def _render_features(vec: np.ndarray) -> str:
    return " ".join(f"f{j}={vec[j]:+.2f}" for j in range(len(vec)))


def gen_synth(
    spec: SynthSpec, id_prefix: str = "ex", split: str = "train", role: str = "candidate_pool"
) -> tuple[Dataset, EmbeddingSet]:
    """Balanced two-Gaussian instance; class means at +/- sep * e1, unit cov.

    Features double as the sentence embeddings so the retrieval baselines
    run on the same draw.
    """
    gen = spec.seed.generator()
    labels = np.array([i % 2 for i in range(spec.n)])
    means = np.where(labels[:, None] == 1, spec.sep, -spec.sep) * np.eye(spec.d)[0]
    feats = gen.standard_normal((spec.n, spec.d)) + means
    records = []
    vectors = {}
    for i in range(spec.n):
        rec_id = f"{id_prefix}{i:05d}"
        records.append(
            ExampleRecord(
                id=rec_id,
                task="synthetic",
                split=split,
                input_text=_render_features(feats[i]),
                output_text=str(int(labels[i])),
                label=int(labels[i]),
            )
        )
        vectors[rec_id] = feats[i]
    return Dataset(records=tuple(records), role=role), EmbeddingSet(sentence=vectors)


def flip_labels(ds: Dataset, noise: NoiseSpec) -> tuple[Dataset, list[str]]:
    """Flip round(rho * n) labels; returns the new dataset and the ledger.

    output_text is rewritten alongside the label when it was the label's
    string form, so the corruption is visible in assembled prompts too.
    """
    labels = {rec.label for rec in ds.records}
    if not labels <= {0, 1}:
        raise UnsupportedLabels(f"flip_labels requires binary labels, saw {sorted(map(str, labels))}")
    n_flip = int(round(noise.rho * len(ds)))
    gen = noise.seed.generator()
    idx = gen.choice(len(ds), size=n_flip, replace=False) if n_flip else np.array([], dtype=int)
    flip_set = {ds.records[i].id for i in idx}
    new_records = []
    for rec in ds.records:
        if rec.id in flip_set:
            new_label = 1 - rec.label
            out = str(new_label) if rec.output_text == str(rec.label) else rec.output_text
            new_records.append(
                ExampleRecord(
                    id=rec.id,
                    task=rec.task,
                    split=rec.split,
                    input_text=rec.input_text,
                    output_text=out,
                    label=new_label,
                )
            )
        else:
            new_records.append(rec)
    return Dataset(records=tuple(new_records), role=ds.role), sorted(flip_set)


def _design(ds: Dataset, features: EmbeddingSet) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for rec in ds.records:
        if rec.label is None:
            raise UnsupportedLabels(f"record {rec.id!r} has no label")
        xs.append(features.sentence[rec.id])
        ys.append(float(rec.label))
    return np.stack(xs, axis=0), np.array(ys)


def _objective(theta: np.ndarray, x: np.ndarray, y: np.ndarray, mu: float) -> float:
    w, b = theta[:-1], theta[-1]
    z = x @ w + b
    nll = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return nll + 0.5 * mu * float(w @ w)


def _gradient(theta: np.ndarray, x: np.ndarray, y: np.ndarray, mu: float) -> np.ndarray:
    w, b = theta[:-1], theta[-1]
    resid = expit(x @ w + b) - y
    gw = x.T @ resid / len(y) + mu * w
    gb = float(np.mean(resid))
    return np.concatenate([gw, [gb]])


def train_logreg(
    ds: Dataset,
    features: EmbeddingSet,
    mu: float,
    tol: float = 1e-8,
    max_iters: int = 200_000,
    init: Optional[np.ndarray] = None,
) -> LogRegModel:
    """Full-batch gradient descent with Armijo backtracking to grad norm <= tol.

    Near the optimum the Armijo decrease drops below float64 resolution of
    the objective; steps there are accepted on gradient-norm contraction
    instead, which stays measurable far past that wall.
    """
    x, y = _design(ds, features)
    theta = np.zeros(x.shape[1] + 1) if init is None else np.asarray(init, dtype=np.float64).copy()
    step = 1.0
    fval = _objective(theta, x, y, mu)
    grad = _gradient(theta, x, y, mu)
    grad_norm = float(np.linalg.norm(grad))
    for it in range(max_iters):
        if grad_norm <= tol:
            return LogRegModel(
                weights=theta[:-1], bias=float(theta[-1]), mu=mu,
                converged=True, grad_norm=grad_norm, iterations=it,
            )
        step = min(step * 2.0, 1e8)
        gsq = grad_norm * grad_norm
        noise_floor = 16.0 * np.finfo(np.float64).eps * max(1.0, abs(fval))
        cand_grad = None
        while True:
            cand = theta - step * grad
            fcand = _objective(cand, x, y, mu)
            predicted = 1e-4 * step * gsq
            if predicted >= noise_floor:
                if fcand <= fval - predicted:
                    cand_grad = None
                    break
            else:
                cand_grad = _gradient(cand, x, y, mu)
                if fcand <= fval + noise_floor and np.linalg.norm(cand_grad) <= grad_norm:
                    break
            step *= 0.5
            if step < 1e-20:
                raise NotConverged(
                    f"backtracking stalled at grad norm {grad_norm:.3e}", grad_norm=grad_norm
                )
        theta, fval = cand, fcand
        grad = cand_grad if cand_grad is not None else _gradient(theta, x, y, mu)
        grad_norm = float(np.linalg.norm(grad))
    raise NotConverged(
        f"gradient norm {grad_norm:.3e} > tol {tol:.1e} after {max_iters} iterations",
        grad_norm=grad_norm,
    )


def per_sample_gradients(
    model: LogRegModel, ds: Dataset, features: EmbeddingSet, role: str = "train"
) -> GradientStore:
    """Gradient ((p - y) x, p - y) per record; the L2 term belongs to the
    objective, not to any data point, and is excluded."""
    x, y = _design(ds, features)
    p = model.predict_proba(x)
    resid = p - y
    schema = LayerSchema(((LAYER_NAME, x.shape[1] + 1),))
    bundles = {}
    for i, rec in enumerate(ds.records):
        flat = np.concatenate([resid[i] * x[i], [resid[i]]])
        bundles[rec.id] = GradientBundle(
            example_id=rec.id, layers={LAYER_NAME: flat}, provenance="synthetic"
        )
    return GradientStore(schema=schema, bundles=bundles, role=role)


def validation_loss(model: LogRegModel, ds: Dataset, features: EmbeddingSet) -> float:
    """Mean negative log-likelihood; no regularizer."""
    x, y = _design(ds, features)
    z = model.logits(x)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loo_oracle(
    ds: Dataset,
    features: EmbeddingSet,
    val_ds: Dataset,
    val_features: EmbeddingSet,
    mu: float,
    tol: float = 1e-7,
    max_iters: int = 200_000,
) -> dict[str, float]:
    """True validation-loss change from dropping each train point.

    delta(k) = valloss(theta trained without k) - valloss(theta*); positive
    means removal hurts. Retrains warm-start at theta*, which strong
    convexity makes safe.
    """
    if len(ds) < 2:
        raise UnsupportedLabels("leave-one-out needs at least 2 train points")
    full = train_logreg(ds, features, mu=mu, tol=tol, max_iters=max_iters)
    base = validation_loss(full, val_ds, val_features)
    warm = np.concatenate([full.weights, [full.bias]])

    def drop_one(index: int) -> float:
        reduced = Dataset(
            records=tuple(r for j, r in enumerate(ds.records) if j != index),
            role=ds.role,
        )
        model = train_logreg(
            reduced, features, mu=mu, tol=tol, max_iters=max_iters, init=warm
        )
        return validation_loss(model, val_ds, val_features) - base

    deltas = parallel_map(drop_one, range(len(ds)))
    return {rec.id: deltas[i] for i, rec in enumerate(ds.records)}
