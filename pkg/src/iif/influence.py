"""Influence scoring over gradient stores.

Four interchangeable scorers: a plain gradient inner product (tracin), a
Sherman-Morrison closed form (datainf), an iterative inverse-Hessian-vector
solver (lissa), and a dense damped direct solve (exact). All of them target
the same damped gradient-outer-product curvature

    H_l = (1/n) sum_i g_{l,i} g_{l,i}^T + lambda_l I

applied layer by layer, so their scores are directly comparable.

Sign convention: the primary quantity is ``benefit = v^T H^{-1} g_k``,
positive when up-weighting candidate k moves parameters along the
validation descent direction. ``noisiness`` is its exact negation;
ranking by it descending surfaces the harmful candidates first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.linalg

from .core import ScoreVector
from .errors import (
    DimensionTooLarge,
    DivergenceDetected,
    EmptyScores,
    EmptyValidation,
    NumericalError,
    SchemaMismatch,
    UnknownId,
)
from .store import GradientStore

METHODS = ("tracin", "datainf", "lissa", "exact")
LAMBDA_FLOOR = 1e-10
EXACT_DIM_LIMIT = 4096

LayeredVector = Mapping[str, np.ndarray]


@dataclass(frozen=True)
class DampingPolicy:
    """Per-layer ridge selection: relative(c) scales to gradient magnitude."""

    kind: str = "relative"
    value: float = 0.1

    def __post_init__(self):
        if self.kind not in ("relative", "constant"):
            raise ValueError(f"bad damping kind {self.kind!r}")
        if self.value <= 0:
            raise ValueError("damping value must be > 0")


@dataclass(frozen=True)
class LissaParams:
    iterations: int = 64
    scale: Optional[float] = None  # None: auto 0.9 / (lambda_l + max_i ||g_{l,i}||^2)
    growth_limit: float = 1e6

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("lissa iterations must be >= 1")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("lissa scale must be > 0")


@dataclass(frozen=True)
class InfluenceConfig:
    method: str = "datainf"
    damping: DampingPolicy = field(default_factory=DampingPolicy)
    lissa: LissaParams = field(default_factory=LissaParams)
    validation_mode: str = "averaged"  # or "per_query"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"bad influence method {self.method!r}")
        if self.validation_mode not in ("averaged", "per_query"):
            raise ValueError(f"bad validation mode {self.validation_mode!r}")


@dataclass(frozen=True)
class InfluenceScore:
    """Per-candidate benefit scores; noisiness is the exact negation."""

    benefit: Mapping[str, float]
    method_tag: str

    def __post_init__(self):
        object.__setattr__(self, "benefit", dict(self.benefit))
        for rec_id, value in self.benefit.items():
            if not np.isfinite(value):
                raise NumericalError(f"non-finite benefit for {rec_id!r}")

    @property
    def noisiness(self) -> dict[str, float]:
        return {k: -v for k, v in self.benefit.items()}

    def benefit_vector(self) -> ScoreVector:
        return ScoreVector(self.benefit, method_tag=f"{self.method_tag}:benefit")

    def noisiness_vector(self) -> ScoreVector:
        return ScoreVector(self.noisiness, method_tag=f"{self.method_tag}:noisiness")


class GramCache:
    """Stacked per-layer gradients and the inner products the scorers reuse.

    Rows follow ascending id order, which fixes every reduction order and
    makes scores independent of store insertion order and worker count.
    """

    def __init__(self, store: GradientStore):
        self.ids = store.sorted_ids()
        self.schema = store.schema
        self.matrices = {name: store.stacked(name) for name in store.schema.names}
        self.sq_norms = {
            name: np.einsum("nd,nd->n", m, m) for name, m in self.matrices.items()
        }

    @property
    def n(self) -> int:
        return len(self.ids)

    def dots_with(self, layer: str, v: np.ndarray) -> np.ndarray:
        """(n,) inner products of every train gradient with v on one layer."""
        return self.matrices[layer] @ v


def _check_layered(v: LayeredVector, store: GradientStore):
    if list(v.keys()) != store.schema.names:
        raise SchemaMismatch(
            f"layered vector layers {list(v.keys())} != store schema {store.schema.names}"
        )
    for name, dim in store.schema.layers:
        if np.asarray(v[name]).shape != (dim,):
            raise SchemaMismatch(f"layer {name!r} vector has wrong shape")


def avg_validation_gradient(val: GradientStore) -> dict[str, np.ndarray]:
    """Elementwise mean gradient per layer over the validation store."""
    if len(val) == 0:
        raise EmptyValidation("validation gradient store is empty")
    return {
        name: val.stacked(name).mean(axis=0) for name in val.schema.names
    }


def query_gradient(val: GradientStore, query_id: str) -> dict[str, np.ndarray]:
    """One query's own gradient, for per-query scoring."""
    if query_id not in val.bundles:
        raise UnknownId(f"query id {query_id!r} not in validation store")
    bundle = val.bundles[query_id]
    return {name: bundle.layers[name] for name in val.schema.names}


def lambda_policy(train: GradientStore, damping: DampingPolicy) -> dict[str, float]:
    """Per-layer ridge: relative(c) uses c * mean coordinate-wise second moment."""
    if len(train) == 0:
        raise EmptyScores("train gradient store is empty")
    lambdas = {}
    for name, dim in train.schema.layers:
        if damping.kind == "constant":
            lambdas[name] = damping.value
        else:
            mat = train.stacked(name)
            mean_sq = float(np.einsum("nd,nd->", mat, mat)) / (len(train) * dim)
            lambdas[name] = max(damping.value * mean_sq, LAMBDA_FLOOR)
    return lambdas


def tracin_scores(v: LayeredVector, train: GradientStore) -> InfluenceScore:
    """Identity-curvature scores: benefit(k) = sum_l v_l . g_{l,k}."""
    _check_layered(v, train)
    cache = GramCache(train)
    total = np.zeros(cache.n)
    for name in train.schema.names:
        total += cache.dots_with(name, np.asarray(v[name], dtype=np.float64))
    return InfluenceScore(
        benefit=dict(zip(cache.ids, total.tolist())), method_tag="tracin"
    )


def datainf_scores(
    v: LayeredVector, train: GradientStore, lambdas: Mapping[str, float]
) -> InfluenceScore:
    """Closed-form scores via a rank-one resolvent identity per train point.

    Per layer, with a_i = v.g_i and s_i = ||g_i||^2:

        benefit_l(k) = ( v - (1/n) sum_i [a_i / (lambda + s_i)] g_i ) . g_k / lambda

    The i-sum runs over the whole train store, including i = k.
    """
    _check_layered(v, train)
    cache = GramCache(train)
    total = np.zeros(cache.n)
    for name in train.schema.names:
        lam = float(lambdas[name])
        if lam <= 0:
            raise NumericalError(f"damping for layer {name!r} must be > 0")
        mat = cache.matrices[name]
        v_l = np.asarray(v[name], dtype=np.float64)
        dots = cache.dots_with(name, v_l)
        coef = dots / (lam + cache.sq_norms[name])
        adjusted = v_l - (mat.T @ coef) / cache.n
        total += (mat @ adjusted) / lam
    if not np.all(np.isfinite(total)):
        raise NumericalError("non-finite intermediate in datainf scoring")
    return InfluenceScore(
        benefit=dict(zip(cache.ids, total.tolist())), method_tag="datainf"
    )


def _auto_scale(lam: float, sq_norms: np.ndarray) -> float:
    # 0.9 over an upper bound of the damped curvature spectral norm.
    return 0.9 / (lam + float(sq_norms.max(initial=0.0)))


def lissa_invhvp(
    v: LayeredVector,
    train: GradientStore,
    lambdas: Mapping[str, float],
    params: LissaParams = LissaParams(),
) -> dict[str, np.ndarray]:
    """Iterate r <- sigma*v + r - sigma*H r per layer; fixed point solves H r = v."""
    _check_layered(v, train)
    cache = GramCache(train)
    result = {}
    for name in train.schema.names:
        lam = float(lambdas[name])
        mat = cache.matrices[name]
        v_l = np.asarray(v[name], dtype=np.float64)
        sigma = params.scale if params.scale is not None else _auto_scale(lam, cache.sq_norms[name])
        r = sigma * v_l
        base = max(float(np.linalg.norm(r)), 1e-300)
        for _ in range(params.iterations):
            hr = (mat.T @ (mat @ r)) / cache.n + lam * r
            r = sigma * v_l + r - sigma * hr
            norm = float(np.linalg.norm(r))
            if not np.isfinite(norm) or norm > params.growth_limit * base:
                raise DivergenceDetected(
                    f"layer {name!r}: iterate norm {norm:.3e} exceeded "
                    f"{params.growth_limit:.0e} x initial {base:.3e}"
                )
        result[name] = r
    return result


def lissa_scores(
    v: LayeredVector,
    train: GradientStore,
    lambdas: Mapping[str, float],
    params: LissaParams = LissaParams(),
) -> InfluenceScore:
    r = lissa_invhvp(v, train, lambdas, params)
    cache = GramCache(train)
    total = np.zeros(cache.n)
    for name in train.schema.names:
        total += cache.dots_with(name, r[name])
    return InfluenceScore(
        benefit=dict(zip(cache.ids, total.tolist())), method_tag="lissa"
    )


def exact_scores(
    v: LayeredVector, train: GradientStore, lambdas: Mapping[str, float]
) -> InfluenceScore:
    """Materialize H_l and solve by Cholesky; the oracle the others approximate."""
    _check_layered(v, train)
    for name, dim in train.schema.layers:
        if dim > EXACT_DIM_LIMIT:
            raise DimensionTooLarge(
                f"layer {name!r} dim {dim} exceeds dense limit {EXACT_DIM_LIMIT}"
            )
    cache = GramCache(train)
    total = np.zeros(cache.n)
    for name, dim in train.schema.layers:
        lam = float(lambdas[name])
        mat = cache.matrices[name]
        hess = (mat.T @ mat) / cache.n + lam * np.eye(dim)
        try:
            factor = scipy.linalg.cho_factor(hess, lower=True)
            r = scipy.linalg.cho_solve(factor, np.asarray(v[name], dtype=np.float64))
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"factorization failed on layer {name!r}: {exc}") from exc
        total += cache.dots_with(name, r)
    if not np.all(np.isfinite(total)):
        raise NumericalError("non-finite result in exact scoring")
    return InfluenceScore(
        benefit=dict(zip(cache.ids, total.tolist())), method_tag="exact"
    )


def compute_influence(
    cfg: InfluenceConfig,
    train: GradientStore,
    val: GradientStore,
    query_id: Optional[str] = None,
) -> InfluenceScore:
    """Dispatch on method and validation mode."""
    if train.schema.layers != val.schema.layers:
        raise SchemaMismatch("train and validation stores use different schemas")
    if cfg.validation_mode == "per_query":
        if query_id is None:
            raise UnknownId("per_query mode requires a query id")
        v = query_gradient(val, query_id)
    else:
        v = avg_validation_gradient(val)

    if cfg.method == "tracin":
        return tracin_scores(v, train)
    lambdas = lambda_policy(train, cfg.damping)
    if cfg.method == "datainf":
        return datainf_scores(v, train, lambdas)
    if cfg.method == "lissa":
        return lissa_scores(v, train, lambdas, cfg.lissa)
    return exact_scores(v, train, lambdas)
