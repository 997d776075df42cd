"""On-disk formats and loaders: examples JSONL, binary tensor files, manifests.

One container format with a kind byte covers sentence embeddings, token
embeddings, and layered gradients. Values are float32 little-endian on
disk and widened to float64 in memory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .core import Dataset, ExampleRecord
from .errors import (
    BadMagic,
    DuplicateId,
    InvalidScore,
    IoError,
    ParseError,
    SchemaMismatch,
    Truncated,
    UnsupportedDtype,
)

MAGIC = b"IIF1"
KIND_SENTENCE = 1
KIND_TOKEN = 2
KIND_GRADIENT = 3
DTYPE_F32 = 1

PROVENANCES = ("surrogate", "pretrained", "synthetic")


@dataclass(frozen=True)
class LayerSchema:
    """Ordered (layer_name, dim) pairs; the contract every bundle must match."""

    layers: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "layers", tuple((str(n), int(d)) for n, d in self.layers)
        )
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate layer names in schema")
        for name, dim in self.layers:
            if dim < 1:
                raise SchemaMismatch(f"layer {name!r} has dim {dim} < 1")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.layers]

    @property
    def dims(self) -> list[int]:
        return [d for _, d in self.layers]

    @property
    def total_dim(self) -> int:
        return sum(self.dims)


@dataclass(frozen=True)
class GradientBundle:
    """Per-layer flat gradient vectors for one example."""

    example_id: str
    layers: Mapping[str, np.ndarray]
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ParseError(f"bad provenance {self.provenance!r}")
        converted = {}
        for name, vec in self.layers.items():
            arr = np.asarray(vec, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise InvalidScore(f"non-finite gradient in layer {name!r}")
            converted[name] = arr
        object.__setattr__(self, "layers", converted)

    def matches(self, schema: LayerSchema) -> Optional[str]:
        """Name of the first mismatched layer, or None when conformant."""
        if list(self.layers.keys()) != schema.names:
            expected, got = schema.names, list(self.layers.keys())
            for name in expected:
                if name not in got:
                    return name
            return got[0] if got else "<empty>"
        for name, dim in schema.layers:
            if self.layers[name].shape != (dim,):
                return name
        return None


@dataclass(frozen=True)
class GradientStore:
    """Homogeneous collection of gradient bundles under one schema."""

    schema: LayerSchema
    bundles: Mapping[str, GradientBundle]
    role: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "bundles", dict(self.bundles))
        if self.role not in ("train", "validation"):
            raise ParseError(f"bad gradient store role {self.role!r}")
        for rec_id, bundle in self.bundles.items():
            if rec_id != bundle.example_id:
                raise DuplicateId(f"bundle keyed {rec_id!r} has id {bundle.example_id!r}")
            bad = bundle.matches(self.schema)
            if bad is not None:
                raise SchemaMismatch(f"bundle {rec_id!r} mismatches layer {bad!r}")

    def __len__(self):
        return len(self.bundles)

    def sorted_ids(self) -> list[str]:
        return sorted(self.bundles)

    def stacked(self, layer: str) -> np.ndarray:
        """(n, d) matrix of one layer's gradients, rows in ascending-id order.

        Every reduction in the scoring engine runs over this fixed order, so
        results cannot depend on file order or worker count.
        """
        ids = self.sorted_ids()
        return np.stack([self.bundles[i].layers[layer] for i in ids], axis=0)


@dataclass(frozen=True)
class EmbeddingSet:
    """Sentence vectors and/or per-example token matrices at one dim."""

    sentence: Mapping[str, np.ndarray] = field(default_factory=dict)
    token: Mapping[str, np.ndarray] = field(default_factory=dict)
    dim: int = 0

    def __post_init__(self):
        sent = {}
        for rec_id, vec in self.sentence.items():
            arr = np.asarray(vec, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise InvalidScore(f"non-finite embedding for id {rec_id!r}")
            sent[rec_id] = arr
        toks = {}
        for rec_id, mat in self.token.items():
            arr = np.asarray(mat, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise SchemaMismatch(f"token matrix for {rec_id!r} must be (T, d), T >= 1")
            if not np.all(np.isfinite(arr)):
                raise InvalidScore(f"non-finite token embedding for id {rec_id!r}")
            toks[rec_id] = arr
        dims = {v.shape[0] for v in sent.values()} | {m.shape[1] for m in toks.values()}
        if len(dims) > 1:
            raise SchemaMismatch(f"inconsistent embedding dims {sorted(dims)}")
        inferred = dims.pop() if dims else self.dim
        object.__setattr__(self, "sentence", sent)
        object.__setattr__(self, "token", toks)
        object.__setattr__(self, "dim", int(inferred))


def load_examples(path: Union[str, Path], role: str = "candidate_pool") -> Dataset:
    """Parse a JSON-Lines examples file, preserving insertion order."""
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc}", line_no=line_no) from exc
            if not isinstance(obj, dict):
                raise ParseError("line is not a JSON object", line_no=line_no)
            missing = {"id", "task", "split", "input_text", "output_text"} - set(obj)
            if missing:
                raise ParseError(f"missing fields {sorted(missing)}", line_no=line_no)
            label = obj.get("label")
            if label is not None and not isinstance(label, int):
                raise ParseError(f"label must be int or null, got {label!r}", line_no=line_no)
            try:
                records.append(
                    ExampleRecord(
                        id=str(obj["id"]),
                        task=str(obj["task"]),
                        split=str(obj["split"]),
                        input_text=str(obj["input_text"]),
                        output_text=str(obj["output_text"]),
                        label=label,
                    )
                )
            except ParseError as exc:
                raise ParseError(str(exc), line_no=line_no) from exc
    return Dataset(records=tuple(records), role=role)


def save_examples(dataset: Dataset, path: Union[str, Path]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in dataset.records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "task": rec.task,
                        "split": rec.split,
                        "input_text": rec.input_text,
                        "output_text": rec.output_text,
                        "label": rec.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


class _Reader:
    """Cursor over file bytes raising Truncated on short reads."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32s(self, n: int) -> np.ndarray:
        raw = self.take(4 * n)
        return np.frombuffer(raw, dtype="<f4", count=n)

    def string(self) -> str:
        n = self.u32()
        return self.take(n).decode("utf-8")

    def done(self):
        if self.pos != len(self.data):
            raise ParseError(f"{len(self.data) - self.pos} trailing bytes after payload")


def _check_finite_f32(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise InvalidScore(f"non-finite value in {what}")


def read_tensor_file(
    path: Union[str, Path],
    provenance: str = "synthetic",
    role: str = "train",
) -> Union[EmbeddingSet, GradientStore]:
    """Parse a tensor container; the kind byte selects the payload type.

    Gradient payloads get the given provenance/role since the format does
    not carry them; manifests are the authoritative source for both.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise BadMagic(f"{path} does not start with {MAGIC!r}")
    kind = rd.u8()
    dtype = rd.u8()
    if dtype != DTYPE_F32:
        raise UnsupportedDtype(f"dtype byte {dtype} (only f32=1 supported)")
    reserved = rd.u16()
    if reserved != 0:
        raise ParseError(f"reserved header bytes must be 0, got {reserved}")
    count = rd.u32()

    if kind == KIND_SENTENCE:
        d = rd.u32()
        vectors = {}
        for _ in range(count):
            rec_id = rd.string()
            if rec_id in vectors:
                raise DuplicateId(f"duplicate id {rec_id!r} in {path}")
            vec = rd.f32s(d)
            _check_finite_f32(vec, f"sentence vector {rec_id!r}")
            vectors[rec_id] = vec.astype(np.float64)
        rd.done()
        return EmbeddingSet(sentence=vectors, dim=d)

    if kind == KIND_TOKEN:
        matrices = {}
        dims = set()
        for _ in range(count):
            rec_id = rd.string()
            if rec_id in matrices:
                raise DuplicateId(f"duplicate id {rec_id!r} in {path}")
            t = rd.u32()
            d = rd.u32()
            if t < 1:
                raise ParseError(f"token record {rec_id!r} has T={t}")
            dims.add(d)
            mat = rd.f32s(t * d).reshape(t, d)
            _check_finite_f32(mat, f"token matrix {rec_id!r}")
            matrices[rec_id] = mat.astype(np.float64)
        rd.done()
        if len(dims) > 1:
            raise SchemaMismatch(f"inconsistent token dims {sorted(dims)} in {path}")
        return EmbeddingSet(token=matrices, dim=dims.pop() if dims else 0)

    if kind == KIND_GRADIENT:
        n_layers = rd.u16()
        layers = []
        for _ in range(n_layers):
            name = rd.string()
            dim = rd.u32()
            layers.append((name, dim))
        schema = LayerSchema(tuple(layers))
        bundles = {}
        for _ in range(count):
            rec_id = rd.string()
            if rec_id in bundles:
                raise DuplicateId(f"duplicate id {rec_id!r} in {path}")
            flat = rd.f32s(schema.total_dim)
            _check_finite_f32(flat, f"gradient bundle {rec_id!r}")
            per_layer = {}
            offset = 0
            for name, dim in schema.layers:
                per_layer[name] = flat[offset : offset + dim].astype(np.float64)
                offset += dim
            bundles[rec_id] = GradientBundle(
                example_id=rec_id, layers=per_layer, provenance=provenance
            )
        rd.done()
        return GradientStore(schema=schema, bundles=bundles, role=role)

    raise ParseError(f"unknown kind byte {kind}")


def _as_f32_checked(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise InvalidScore(f"refusing to write non-finite value in {what}")
    return arr.astype("<f4")


def write_tensor_file(
    path: Union[str, Path],
    payload: Union[EmbeddingSet, GradientStore],
    kind: Optional[int] = None,
) -> None:
    """Serialize a payload so read_tensor_file reproduces it bit-for-bit.

    An EmbeddingSet holding both sentence and token data needs an explicit
    kind; a tensor file stores exactly one payload kind.
    """
    chunks = [MAGIC]

    def put(fmt, *vals):
        chunks.append(struct.pack(fmt, *vals))

    def put_str(s: str):
        raw = s.encode("utf-8")
        put("<I", len(raw))
        chunks.append(raw)

    if isinstance(payload, GradientStore):
        ids = list(payload.bundles)
        put("<BBHI", KIND_GRADIENT, DTYPE_F32, 0, len(ids))
        put("<H", len(payload.schema.layers))
        for name, dim in payload.schema.layers:
            put_str(name)
            put("<I", dim)
        for rec_id in ids:
            bundle = payload.bundles[rec_id]
            put_str(rec_id)
            flat = np.concatenate([bundle.layers[n] for n in payload.schema.names])
            chunks.append(_as_f32_checked(flat, f"bundle {rec_id!r}").tobytes())
    elif isinstance(payload, EmbeddingSet):
        if kind is None:
            if payload.sentence and payload.token:
                raise ParseError("payload has both kinds; pass kind explicitly")
            kind = KIND_TOKEN if payload.token else KIND_SENTENCE
        if kind == KIND_SENTENCE:
            ids = list(payload.sentence)
            put("<BBHI", KIND_SENTENCE, DTYPE_F32, 0, len(ids))
            put("<I", payload.dim)
            for rec_id in ids:
                put_str(rec_id)
                chunks.append(
                    _as_f32_checked(payload.sentence[rec_id], f"vector {rec_id!r}").tobytes()
                )
        elif kind == KIND_TOKEN:
            ids = list(payload.token)
            put("<BBHI", KIND_TOKEN, DTYPE_F32, 0, len(ids))
            for rec_id in ids:
                mat = payload.token[rec_id]
                put_str(rec_id)
                put("<II", mat.shape[0], mat.shape[1])
                chunks.append(_as_f32_checked(mat, f"matrix {rec_id!r}").tobytes())
        else:
            raise ParseError(f"bad kind {kind} for EmbeddingSet")
    else:
        raise ParseError(f"unsupported payload type {type(payload).__name__}")

    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def verify_schema(store: GradientStore, schema: LayerSchema) -> None:
    """Raise SchemaMismatch unless every bundle matches name/dim exactly."""
    if store.schema.layers != schema.layers:
        raise SchemaMismatch(
            f"store schema {store.schema.layers} != expected {schema.layers}"
        )
    for rec_id, bundle in store.bundles.items():
        bad = bundle.matches(schema)
        if bad is not None:
            raise SchemaMismatch(f"bundle {rec_id!r} mismatches layer {bad!r}")


def load_manifest(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "artifacts" not in obj:
        raise ParseError("manifest must be an object with an 'artifacts' list")
    return obj


def verify_manifest(path: Union[str, Path]) -> dict:
    """Load every artifact a manifest lists and validate it; first failure raises."""
    path = Path(path)
    manifest = load_manifest(path)
    base = path.parent
    schema = None
    if manifest.get("layer_schema"):
        schema = LayerSchema(tuple((n, d) for n, d in manifest["layer_schema"]))
    checked = {"examples": 0, "sentence": 0, "token": 0, "gradient": 0}
    for art in manifest["artifacts"]:
        kind = art.get("kind")
        art_path = base / art["path"]
        if kind == "examples":
            load_examples(art_path, role=art.get("role", "candidate_pool"))
        elif kind in ("sentence", "token"):
            payload = read_tensor_file(art_path)
            if not isinstance(payload, EmbeddingSet):
                raise SchemaMismatch(f"{art_path} is not an embedding file")
            expect = KIND_SENTENCE if kind == "sentence" else KIND_TOKEN
            actual = KIND_TOKEN if payload.token else KIND_SENTENCE
            if payload.sentence or payload.token:
                if actual != expect:
                    raise SchemaMismatch(f"{art_path} holds the wrong embedding kind")
        elif kind == "gradient":
            payload = read_tensor_file(
                art_path,
                provenance=art.get("provenance", "synthetic"),
                role=art.get("role", "train"),
            )
            if not isinstance(payload, GradientStore):
                raise SchemaMismatch(f"{art_path} is not a gradient file")
            if schema is not None:
                verify_schema(payload, schema)
        else:
            raise ParseError(f"unknown artifact kind {kind!r} in manifest")
        checked[kind] += 1
    return checked
