"""Artifact extraction from transformer encoders.

Three pathways produce the engine's tensor files: mean-pooled L2-normalized
sentence vectors (kind 1), per-token hidden states (kind 2), and per-example
flattened gradients of a chosen parameter subset (kind 3). A manifest JSON
sits next to every output so the engine's `verify` can re-validate it, and
it documents truncation plus the gradient layer schema.

Gradient sources mirror the two model pathways: `adapter_layers` takes the
low-rank value-projection adapters of a (typically fine-tuned) surrogate;
`layernorm_layers` takes the LayerNorm weights of a frozen model, the only
generally non-degenerate subset there.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .errors import ExtractorError, NoGradParams
from .lora import adapter_parameter_names, attach_value_adapters, fine_tune
from .records import Example
from .tensorio import write_gradient_file, write_sentence_file, write_token_file

KINDS = ("sentence", "token", "gradient")
GRAD_SOURCES = ("adapter_layers", "layernorm_layers")


@dataclass(frozen=True)
class ExtractionSpec:
    model_id: str
    kind: str
    grad_source: Optional[str] = None
    batch_size: int = 16
    max_length: Optional[int] = None
    num_labels: Optional[int] = None
    lora_rank: int = 2
    epochs: int = 10
    learning_rate: float = 3e-4
    warmup_frac: float = 0.06
    seed: int = 0
    deterministic: bool = False
    role: str = "train"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ExtractorError(f"bad artifact kind {self.kind!r}")
        if self.kind == "gradient":
            if self.grad_source not in GRAD_SOURCES:
                raise ExtractorError(
                    f"gradient extraction needs grad_source in {GRAD_SOURCES}"
                )
        elif self.grad_source is not None:
            raise ExtractorError(f"kind {self.kind!r} does not take a grad_source")
        if self.batch_size < 1:
            raise ExtractorError("batch size must be >= 1")


def _seed_everything(spec: ExtractionSpec):
    random.seed(spec.seed)
    np.random.seed(spec.seed % 2**32)
    torch.manual_seed(spec.seed)
    if spec.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _load_tokenizer(spec: ExtractionSpec):
    from transformers import AutoTokenizer

    try:
        return AutoTokenizer.from_pretrained(spec.model_id)
    except Exception as exc:
        raise ExtractorError(f"cannot load tokenizer {spec.model_id!r}: {exc}") from exc


def _load_model(spec: ExtractionSpec, with_head: bool):
    try:
        if with_head:
            from transformers import AutoModelForSequenceClassification

            kwargs = {}
            if spec.num_labels is not None:
                kwargs["num_labels"] = spec.num_labels
            model = AutoModelForSequenceClassification.from_pretrained(
                spec.model_id, **kwargs
            )
        else:
            from transformers import AutoModel

            model = AutoModel.from_pretrained(spec.model_id)
    except Exception as exc:
        raise ExtractorError(f"cannot load model {spec.model_id!r}: {exc}") from exc
    model.eval()
    return model


def _effective_max_length(spec: ExtractionSpec, model, tokenizer) -> int:
    if spec.max_length is not None:
        return spec.max_length
    configured = getattr(model.config, "max_position_embeddings", None)
    if configured:
        return int(configured)
    return int(min(tokenizer.model_max_length, 512))


def _encode(tokenizer, texts, max_length):
    return tokenizer(
        texts,
        return_tensors="pt",
        padding=True,
        truncation=True,
        max_length=max_length,
    )


def _truncated_ids(tokenizer, examples, max_length) -> list[str]:
    if not examples:
        return []
    raw = tokenizer([ex.input_text for ex in examples], truncation=False)["input_ids"]
    return [ex.id for ex, ids in zip(examples, raw) if len(ids) > max_length]


def _write_manifest(
    out_path: Path,
    spec: ExtractionSpec,
    kind: str,
    extras: dict,
    manifest_path: Optional[Path] = None,
) -> Path:
    manifest = {
        "schema_version": "1",
        "layer_schema": extras.pop("layer_schema", None),
        "artifacts": [
            {
                "path": out_path.name,
                "kind": kind,
                "role": spec.role,
                **(
                    {"provenance": extras.pop("provenance")}
                    if "provenance" in extras
                    else {}
                ),
            }
        ],
        "model": spec.model_id,
        "extraction": {
            "kind": spec.kind,
            "grad_source": spec.grad_source,
            "batch_size": spec.batch_size,
            "seed": spec.seed,
            "deterministic": spec.deterministic,
            **extras,
        },
    }
    path = manifest_path or out_path.with_name(out_path.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def extract_sentence(
    spec: ExtractionSpec,
    examples: Sequence[Example],
    out_path: Union[str, Path],
    manifest_path: Optional[Union[str, Path]] = None,
) -> Path:
    """One L2-normalized mean-pooled vector per record, dataset order."""
    _seed_everything(spec)
    tokenizer = _load_tokenizer(spec)
    model = _load_model(spec, with_head=False)
    max_length = _effective_max_length(spec, model, tokenizer)
    truncated = _truncated_ids(tokenizer, examples, max_length)

    vectors: dict[str, np.ndarray] = {}
    dim = int(model.config.hidden_size)
    with torch.no_grad():
        for start in range(0, len(examples), spec.batch_size):
            batch = examples[start : start + spec.batch_size]
            enc = _encode(tokenizer, [ex.input_text for ex in batch], max_length)
            hidden = model(**enc).last_hidden_state
            mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
            pooled = torch.nn.functional.normalize(pooled, p=2, dim=-1)
            for ex, vec in zip(batch, pooled):
                vectors[ex.id] = vec.numpy().astype(np.float32)

    out_path = Path(out_path)
    write_sentence_file(out_path, vectors, dim)
    _write_manifest(
        out_path, spec, "sentence",
        {"max_length": max_length, "truncated_ids": truncated, "dim": dim},
        Path(manifest_path) if manifest_path else None,
    )
    return out_path


def extract_tokens(
    spec: ExtractionSpec,
    examples: Sequence[Example],
    out_path: Union[str, Path],
    manifest_path: Optional[Union[str, Path]] = None,
) -> Path:
    """Per-record (T, d) hidden-state matrices over non-padding positions."""
    _seed_everything(spec)
    tokenizer = _load_tokenizer(spec)
    model = _load_model(spec, with_head=False)
    max_length = _effective_max_length(spec, model, tokenizer)
    truncated = _truncated_ids(tokenizer, examples, max_length)

    matrices: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for start in range(0, len(examples), spec.batch_size):
            batch = examples[start : start + spec.batch_size]
            enc = _encode(tokenizer, [ex.input_text for ex in batch], max_length)
            hidden = model(**enc).last_hidden_state
            for row, ex in enumerate(batch):
                t = int(enc["attention_mask"][row].sum())
                matrices[ex.id] = hidden[row, :t].numpy().astype(np.float32)

    out_path = Path(out_path)
    write_token_file(out_path, matrices)
    _write_manifest(
        out_path, spec, "token",
        {"max_length": max_length, "truncated_ids": truncated,
         "dim": int(model.config.hidden_size)},
        Path(manifest_path) if manifest_path else None,
    )
    return out_path


def _select_gradient_params(model, grad_source: str) -> list[tuple[str, torch.nn.Parameter]]:
    if grad_source == "adapter_layers":
        names = set(adapter_parameter_names(model))
        selected = [(n, p) for n, p in model.named_parameters() if n in names]
    else:
        ln_prefixes = {
            name
            for name, module in model.named_modules()
            if isinstance(module, torch.nn.LayerNorm)
        }
        selected = [
            (n, p)
            for n, p in model.named_parameters()
            if n.rpartition(".")[0] in ln_prefixes
        ]
    if not selected:
        raise NoGradParams(
            f"gradient source {grad_source!r} matches no parameters on this model"
        )
    return selected


def extract_gradients(
    spec: ExtractionSpec,
    examples: Sequence[Example],
    out_path: Union[str, Path],
    fine_tune_first: bool = False,
    manifest_path: Optional[Union[str, Path]] = None,
) -> Path:
    """Per-example flattened gradients of the selected parameter subset.

    Loss is the label's negative log-likelihood under the classification
    head. With `fine_tune_first`, rank-r adapters on the value projections
    are trained before extraction (surrogate pathway); `layernorm_layers`
    reads the frozen model directly (pretrained pathway).
    """
    _seed_everything(spec)
    for ex in examples:
        if ex.label is None:
            raise ExtractorError(f"gradient extraction needs labels; {ex.id!r} has none")
    tokenizer = _load_tokenizer(spec)
    model = _load_model(spec, with_head=True)
    max_length = _effective_max_length(spec, model, tokenizer)
    truncated = _truncated_ids(tokenizer, examples, max_length)

    training_info = None
    if spec.grad_source == "adapter_layers":
        attached = attach_value_adapters(model, rank=spec.lora_rank)
        if attached == 0:
            raise NoGradParams("model has no value-projection linears to adapt")
        if fine_tune_first and examples:
            inputs = _encode(tokenizer, [ex.input_text for ex in examples], max_length)
            training_info = fine_tune(
                model,
                dict(inputs),
                [ex.label for ex in examples],
                epochs=spec.epochs,
                lr=spec.learning_rate,
                warmup_frac=spec.warmup_frac,
                batch_size=spec.batch_size,
                seed=spec.seed,
            )
    elif fine_tune_first:
        raise ExtractorError("fine-tuning applies to the adapter_layers source only")

    selected = _select_gradient_params(model, spec.grad_source)
    schema = [(name, int(param.numel())) for name, param in selected]
    model.eval()

    bundles: dict[str, np.ndarray] = {}
    for ex in examples:
        enc = _encode(tokenizer, [ex.input_text], max_length)
        out = model(**enc, labels=torch.tensor([ex.label], dtype=torch.long))
        model.zero_grad(set_to_none=True)
        out.loss.backward()
        parts = []
        for name, param in selected:
            if param.grad is None:
                parts.append(np.zeros(param.numel(), dtype=np.float32))
            else:
                parts.append(param.grad.detach().reshape(-1).numpy().astype(np.float32))
        bundles[ex.id] = np.concatenate(parts) if parts else np.zeros(0, dtype=np.float32)
    model.zero_grad(set_to_none=True)

    out_path = Path(out_path)
    write_gradient_file(out_path, schema, bundles)
    extras = {
        "max_length": max_length,
        "truncated_ids": truncated,
        "layer_schema": [[name, dim] for name, dim in schema],
        "provenance": "surrogate" if spec.grad_source == "adapter_layers" else "pretrained",
        "fine_tuned": bool(fine_tune_first),
    }
    if training_info:
        extras["training"] = training_info
    _write_manifest(
        out_path, spec, "gradient", extras,
        Path(manifest_path) if manifest_path else None,
    )
    return out_path
