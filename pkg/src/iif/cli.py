"""Batch command surface: generate, corrupt, train, extract gradients,
score, select, detect, evaluate, verify.

Exit codes: 0 success, 1 runtime error (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import synthlab
from .concurrency import parallel_map
from .core import Dataset, RngSpec, ScoreVector
from .errors import IifError, ParseError
from .influence import (
    DampingPolicy,
    InfluenceConfig,
    InfluenceScore,
    LissaParams,
    compute_influence,
)
from .metrics import detection_report, selection_overlap, spearman, task_match_rate
from .pipelines import (
    SelectionPlan,
    assemble_prompt,
    select_average,
    select_prune,
    select_random,
    select_similarity_only,
    select_two_stage,
)
from .report import emit_report, load_report, write_metrics_csv
from .retrieval import Bm25Params, bm25_build, bm25_scores, bsr_scores, cosine_scores
from .store import (
    EmbeddingSet,
    GradientStore,
    LayerSchema,
    load_examples,
    load_manifest,
    read_tensor_file,
    save_examples,
    verify_manifest,
    write_tensor_file,
)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _damping_from_args(args) -> DampingPolicy:
    if getattr(args, "lambda_const", None) is not None:
        return DampingPolicy(kind="constant", value=args.lambda_const)
    return DampingPolicy(kind="relative", value=args.lambda_c)


def _influence_config(args, mode: str) -> InfluenceConfig:
    lissa = LissaParams(iterations=args.lissa_iters, scale=args.lissa_scale)
    return InfluenceConfig(
        method=args.method,
        damping=_damping_from_args(args),
        lissa=lissa,
        validation_mode=mode,
    )


def _load_gradients(path, role) -> GradientStore:
    store = read_tensor_file(path, role=role)
    if not isinstance(store, GradientStore):
        raise ParseError(f"{path} is not a gradient tensor file")
    return store


def _load_embeddings(path) -> EmbeddingSet:
    emb = read_tensor_file(path)
    if not isinstance(emb, EmbeddingSet):
        raise ParseError(f"{path} is not an embedding tensor file")
    return emb


def cmd_gen_synth(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_spec = synthlab.SynthSpec(
        n=args.n, d=args.d, sep=args.sep, seed=RngSpec(args.seed, "synth:train")
    )
    val_spec = synthlab.SynthSpec(
        n=args.n_val, d=args.d, sep=args.sep, seed=RngSpec(args.seed, "synth:validation")
    )
    train_ds, train_feats = synthlab.gen_synth(train_spec, id_prefix="t", split="train")
    val_ds, val_feats = synthlab.gen_synth(
        val_spec, id_prefix="v", split="validation", role="validation"
    )
    save_examples(train_ds, out / "train.jsonl")
    save_examples(val_ds, out / "validation.jsonl")
    write_tensor_file(out / "train_features.iif", train_feats)
    write_tensor_file(out / "validation_features.iif", val_feats)
    manifest = {
        "schema_version": "1",
        "layer_schema": None,
        "artifacts": [
            {"path": "train.jsonl", "kind": "examples", "role": "candidate_pool"},
            {"path": "validation.jsonl", "kind": "examples", "role": "validation"},
            {"path": "train_features.iif", "kind": "sentence", "role": "candidate_pool"},
            {"path": "validation_features.iif", "kind": "sentence", "role": "validation"},
        ],
        "seeds": {"seed": args.seed},
        "instance": {"n": args.n, "n_val": args.n_val, "d": args.d, "sep": args.sep},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"gen-synth: wrote {args.n}+{args.n_val} records to {out} "
          f"({time.perf_counter() - t0:.2f}s)")
    return 0


def cmd_flip(args) -> int:
    ds = load_examples(args.data)
    noisy, ledger = synthlab.flip_labels(
        ds, synthlab.NoiseSpec(rho=args.rho, seed=RngSpec(args.seed, "flip"))
    )
    save_examples(noisy, args.out_data)
    _write_json(args.out_ledger, ledger)
    print(f"flip: {len(ledger)} of {len(ds)} labels flipped")
    return 0


def cmd_train_logreg(args) -> int:
    t0 = time.perf_counter()
    ds = load_examples(args.data)
    feats = _load_embeddings(args.features)
    model = synthlab.train_logreg(
        ds, feats, mu=args.mu, tol=args.tol, max_iters=args.max_iters
    )
    _write_json(
        args.out,
        {
            "schema_version": "1",
            "weights": list(model.weights),
            "bias": model.bias,
            "mu": model.mu,
            "converged": model.converged,
            "grad_norm": model.grad_norm,
            "iterations": model.iterations,
        },
    )
    print(f"train-logreg: grad norm {model.grad_norm:.3e} after "
          f"{model.iterations} iterations ({time.perf_counter() - t0:.2f}s)")
    return 0


def _load_model(path) -> synthlab.LogRegModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return synthlab.LogRegModel(
        weights=np.array(obj["weights"], dtype=np.float64),
        bias=float(obj["bias"]),
        mu=float(obj["mu"]),
        converged=bool(obj.get("converged", True)),
        grad_norm=float(obj.get("grad_norm", 0.0)),
        iterations=int(obj.get("iterations", 0)),
    )


def cmd_grads(args) -> int:
    model = _load_model(args.model)
    ds = load_examples(args.data, role="candidate_pool" if args.role == "train" else "validation")
    feats = _load_embeddings(args.features)
    store = synthlab.per_sample_gradients(model, ds, feats, role=args.role)
    write_tensor_file(args.out, store)
    if args.manifest:
        manifest = load_manifest(args.manifest)
        schema_list = [[n, d] for n, d in store.schema.layers]
        if manifest.get("layer_schema"):
            if manifest["layer_schema"] != schema_list:
                raise ParseError("gradient schema differs from the manifest layer_schema")
        else:
            manifest["layer_schema"] = schema_list
        rel = Path(args.out).resolve().relative_to(Path(args.manifest).resolve().parent)
        entry = {
            "path": str(rel),
            "kind": "gradient",
            "role": args.role,
            "provenance": "synthetic",
        }
        if entry not in manifest["artifacts"]:
            manifest["artifacts"].append(entry)
        _write_json(args.manifest, manifest)
    print(f"grads: wrote {len(store)} bundles ({store.schema.total_dim} dims) to {args.out}")
    return 0


def cmd_score(args) -> int:
    t0 = time.perf_counter()
    train = _load_gradients(args.train_grads, role="train")
    val = _load_gradients(args.val_grads, role="validation")
    mode = "per_query" if args.mode == "per-query" else "averaged"
    cfg = _influence_config(args, mode)
    score = compute_influence(cfg, train, val, query_id=args.query_id)
    emit_report(
        args.out,
        config={
            "command": "score",
            "method": args.method,
            "mode": mode,
            "query_id": args.query_id,
            "train_grads": str(args.train_grads),
            "val_grads": str(args.val_grads),
            "damping": {"kind": cfg.damping.kind, "value": cfg.damping.value},
            "lissa": {"iterations": cfg.lissa.iterations, "scale": cfg.lissa.scale},
        },
        scores={
            "benefit": score.benefit_vector(),
            "noisiness": score.noisiness_vector(),
        },
        timings={"score_s": time.perf_counter() - t0},
    )
    print(f"score: {args.method} over {len(train)} candidates -> {args.out}")
    return 0


def _scores_from_report(path, which) -> ScoreVector:
    report = load_report(path)
    if which not in report.get("scores", {}):
        raise ParseError(f"{path} has no {which!r} scores")
    entry = report["scores"][which]
    return ScoreVector(entry["entries"], method_tag=entry.get("method_tag", which))


def cmd_detect(args) -> int:
    t0 = time.perf_counter()
    noisiness = _scores_from_report(args.scores, "noisiness")
    ledger = json.loads(Path(args.ledger).read_text(encoding="utf-8"))
    if not isinstance(ledger, list):
        raise ParseError("ledger must be a JSON id list")
    rep = detection_report(noisiness, ledger, args.m)
    metrics = {"detection": rep.to_dict()}
    emit_report(
        args.out,
        config={
            "command": "detect",
            "scores": str(args.scores),
            "ledger": str(args.ledger),
            "m": args.m,
        },
        metrics=metrics,
        timings={"detect_s": time.perf_counter() - t0},
    )
    if args.csv:
        write_metrics_csv(metrics, args.csv)
    print(f"detect: precision@{rep.m} = {rep.precision_at_m:.3f} "
          f"({rep.ledger_size} flipped ids)")
    return 0


_STRATEGY_MAP = {
    "two-stage": "two_stage",
    "prune": "prune",
    "average": "average",
    "similarity": "similarity_only",
    "random": "random",
}


def _build_plan(args, rng=None) -> SelectionPlan:
    strategy = _STRATEGY_MAP[args.strategy]
    fields = dict(strategy=strategy, k=args.k,
                  ascending_prompt_order=args.prompt_order == "ascending")
    if strategy in ("two_stage", "prune", "average", "similarity_only"):
        fields["sim_method"] = args.sim
    if strategy in ("two_stage", "prune", "average"):
        fields["influence_method"] = args.method
    if strategy == "average":
        fields["alpha"] = args.alpha
    if strategy == "prune":
        fields["prune_fraction"] = args.prune_frac
    if strategy == "random":
        fields["rng"] = rng
    return SelectionPlan(**fields)


def cmd_select(args) -> int:
    t0 = time.perf_counter()
    strategy = _STRATEGY_MAP[args.strategy]
    pool = load_examples(args.pool)
    queries = load_examples(args.queries, role="validation")

    pool_emb = _load_embeddings(args.pool_emb) if args.pool_emb else None
    query_emb = _load_embeddings(args.query_emb) if args.query_emb else None
    needs_sim = strategy != "random"
    if needs_sim and args.sim in ("cosine", "bsr") and (pool_emb is None or query_emb is None):
        raise ParseError(f"--sim {args.sim} requires --pool-emb and --query-emb")

    index = bm25_build(pool, Bm25Params()) if needs_sim and args.sim == "bm25" else None

    needs_influence = strategy in ("two_stage", "prune", "average")
    train_store = val_store = None
    averaged_influence = None
    if needs_influence:
        if not args.train_grads or not args.val_grads:
            raise ParseError(f"strategy {args.strategy} requires --train-grads and --val-grads")
        train_store = _load_gradients(args.train_grads, role="train")
        val_store = _load_gradients(args.val_grads, role="validation")
        if strategy in ("prune", "average"):
            cfg = _influence_config(args, "averaged")
            averaged_influence = compute_influence(cfg, train_store, val_store)

    def sim_scores_for(query) -> ScoreVector:
        if args.sim == "cosine":
            return cosine_scores(query.id, query_emb, pool.ids(), pool_emb)
        if args.sim == "bsr":
            return bsr_scores(query.id, query_emb, pool.ids(), pool_emb)
        return bm25_scores(index, query.input_text)

    def select_for(query):
        if strategy == "random":
            plan = _build_plan(args, rng=RngSpec(args.seed, f"random:{query.id}"))
            return select_random(plan, pool)
        plan = _build_plan(args)
        sim = sim_scores_for(query)
        if strategy == "similarity_only":
            return select_similarity_only(plan, query.id, pool, sim)
        if strategy == "two_stage":
            cfg = _influence_config(args, "per_query")
            influence = compute_influence(cfg, train_store, val_store, query_id=query.id)
            return select_two_stage(plan, query.id, pool, sim, influence)
        if strategy == "prune":
            return select_prune(plan, query.id, pool, sim, averaged_influence)
        return select_average(plan, query.id, pool, sim, averaged_influence)

    selections = parallel_map(select_for, list(queries.records))
    by_query = {rec.id: sel for rec, sel in zip(queries.records, selections)}

    if args.prompts_dir:
        prompts = Path(args.prompts_dir)
        prompts.mkdir(parents=True, exist_ok=True)
        for rec in queries.records:
            text = assemble_prompt(
                by_query[rec.id], pool, ascending=args.prompt_order == "ascending"
            )
            (prompts / f"{rec.id}.txt").write_text(text, encoding="utf-8")

    emit_report(
        args.out,
        config={
            "command": "select",
            "strategy": args.strategy,
            "sim": args.sim if needs_sim else None,
            "method": args.method if needs_influence else None,
            "k": args.k,
            "alpha": args.alpha if strategy == "average" else None,
            "prune_frac": args.prune_frac if strategy == "prune" else None,
            "pool": str(args.pool),
            "queries": str(args.queries),
            "prompt_order": args.prompt_order,
        },
        seeds={"seed": args.seed} if strategy == "random" else {},
        selections=by_query,
        timings={"select_s": time.perf_counter() - t0},
    )
    print(f"select: {args.strategy} picked {args.k} of {len(pool)} for "
          f"{len(queries)} queries -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    metrics = {}

    def selections_of(path):
        report = load_report(path)
        out = {}
        for qid, sel in report.get("selections", {}).items():
            from .core import RankedSelection

            out[qid] = RankedSelection(
                tuple(sel["ids"]), tuple(sel["scores"]), sel.get("provenance", {})
            )
        return out

    if args.selections and args.selections_b:
        sel_a = selections_of(args.selections)
        sel_b = selections_of(args.selections_b)
        shared = sorted(set(sel_a) & set(sel_b))
        per_query = {qid: selection_overlap(sel_a[qid], sel_b[qid]) for qid in shared}
        metrics["overlap"] = {
            "per_query": per_query,
            "mean": sum(per_query.values()) / len(per_query) if per_query else 1.0,
        }
    if args.scores_a and args.scores_b:
        vec_a = _scores_from_report(args.scores_a, "benefit")
        vec_b = _scores_from_report(args.scores_b, "benefit")
        metrics["spearman_benefit"] = spearman(vec_a, vec_b)
    if args.selections and args.queries and args.pool:
        sel_a = selections_of(args.selections)
        queries = load_examples(args.queries, role="validation")
        pool = load_examples(args.pool)
        ordered = [sel_a[rec.id] for rec in queries.records if rec.id in sel_a]
        paired = [rec for rec in queries.records if rec.id in sel_a]
        metrics["task_match_rate"] = task_match_rate(ordered, paired, pool)

    if not metrics:
        raise ParseError("eval: nothing to evaluate; pass selections and/or scores")
    if args.csv:
        write_metrics_csv(metrics, args.csv)
    emit_report(
        args.out,
        config={
            "command": "eval",
            "selections": args.selections and str(args.selections),
            "selections_b": args.selections_b and str(args.selections_b),
            "scores_a": args.scores_a and str(args.scores_a),
            "scores_b": args.scores_b and str(args.scores_b),
            "queries": args.queries and str(args.queries),
            "pool": args.pool and str(args.pool),
        },
        metrics=metrics,
        timings={"eval_s": time.perf_counter() - t0},
    )
    print(f"eval: {sorted(metrics)} -> {args.out}")
    return 0


def cmd_verify(args) -> int:
    manifest = args.manifest or (Path(args.dir) / "manifest.json")
    checked = verify_manifest(manifest)
    print("verify: ok " + " ".join(f"{k}={v}" for k, v in sorted(checked.items())))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iif",
        description="Influence-function scoring and demonstration selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic labeled instance")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--sep", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("flip", help="flip a fraction of binary labels")
    p.add_argument("--data", required=True)
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-data", required=True)
    p.add_argument("--out-ledger", required=True)
    p.set_defaults(fn=cmd_flip)

    p = sub.add_parser("train-logreg", help="fit the L2 logistic model")
    p.add_argument("--data", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--mu", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=200_000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_logreg)

    p = sub.add_parser("grads", help="export per-sample gradients")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--role", choices=["train", "validation"], default="train")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_grads)

    def add_influence_flags(p):
        p.add_argument("--method", choices=["tracin", "datainf", "lissa", "exact"],
                       default="datainf")
        p.add_argument("--lambda-c", type=float, default=0.1)
        p.add_argument("--lambda-const", type=float, default=None)
        p.add_argument("--lissa-iters", type=int, default=64)
        p.add_argument("--lissa-scale", type=float, default=None)

    p = sub.add_parser("score", help="influence scores from gradient stores")
    add_influence_flags(p)
    p.add_argument("--train-grads", required=True)
    p.add_argument("--val-grads", required=True)
    p.add_argument("--mode", choices=["averaged", "per-query"], default="averaged")
    p.add_argument("--query-id")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("detect", help="noisy-label detection report")
    p.add_argument("--scores", required=True)
    p.add_argument("--ledger", required=True)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--csv", help="also flatten metrics to CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("select", help="pick demonstrations for each query")
    add_influence_flags(p)
    p.add_argument("--strategy", choices=sorted(_STRATEGY_MAP), required=True)
    p.add_argument("--sim", choices=["bsr", "cosine", "bm25"], default="cosine")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--prune-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--pool", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--pool-emb")
    p.add_argument("--query-emb")
    p.add_argument("--train-grads")
    p.add_argument("--val-grads")
    p.add_argument("--prompt-order", choices=["ascending", "descending"],
                   default="ascending")
    p.add_argument("--prompts-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("eval", help="metrics over selection/score reports")
    p.add_argument("--selections")
    p.add_argument("--selections-b")
    p.add_argument("--scores-a")
    p.add_argument("--scores-b")
    p.add_argument("--queries")
    p.add_argument("--pool")
    p.add_argument("--csv", help="also flatten metrics to CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="re-validate an artifact directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--dir")
    group.add_argument("--manifest")
    p.set_defaults(fn=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except IifError as exc:
        print(f"iif {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"iif {args.command}: io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
