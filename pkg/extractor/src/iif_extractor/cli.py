"""Extraction command: reads an examples JSONL, writes a tensor file and
its manifest. Exit codes: 0 success, 1 runtime error, 2 usage error."""

from __future__ import annotations

import argparse
import sys

from .errors import ExtractorError
from .extract import ExtractionSpec, extract_gradients, extract_sentence, extract_tokens
from .records import load_examples


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iif-extract",
        description="Extract engine artifacts (embeddings, gradients) from a transformer model",
    )
    parser.add_argument("--model", required=True, help="model identifier or local path")
    parser.add_argument("--data", required=True, help="examples JSONL")
    parser.add_argument("--kind", choices=["sentence", "token", "gradient"], required=True)
    parser.add_argument("--grad-source", choices=["adapter_layers", "layernorm_layers"])
    parser.add_argument("--fine-tune", action="store_true",
                        help="train value-projection adapters before extracting")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--max-length", type=int)
    parser.add_argument("--num-labels", type=int)
    parser.add_argument("--lora-rank", type=int, default=2)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--learning-rate", type=float, default=3e-4)
    parser.add_argument("--warmup-frac", type=float, default=0.06)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded deterministic kernels")
    parser.add_argument("--role", choices=["train", "validation"], default="train")
    parser.add_argument("--out", required=True)
    parser.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExtractionSpec(
            model_id=args.model,
            kind=args.kind,
            grad_source=args.grad_source,
            batch_size=args.batch_size,
            max_length=args.max_length,
            num_labels=args.num_labels,
            lora_rank=args.lora_rank,
            epochs=args.epochs,
            learning_rate=args.learning_rate,
            warmup_frac=args.warmup_frac,
            seed=args.seed,
            deterministic=args.deterministic,
            role=args.role,
        )
        examples = load_examples(args.data)
        if args.kind == "sentence":
            extract_sentence(spec, examples, args.out, manifest_path=args.manifest)
        elif args.kind == "token":
            extract_tokens(spec, examples, args.out, manifest_path=args.manifest)
        else:
            extract_gradients(
                spec, examples, args.out,
                fine_tune_first=args.fine_tune, manifest_path=args.manifest,
            )
        print(f"extract: {args.kind} artifacts for {len(examples)} records -> {args.out}")
        return 0
    except ExtractorError as exc:
        print(f"iif-extract: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"iif-extract: io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
