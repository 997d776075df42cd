"""Writers for the engine's binary tensor container.

Layout (little-endian, float32 payloads):
  header: magic "IIF1" | kind u8 (1=sentence, 2=token, 3=gradient)
          | dtype u8 (1=f32) | reserved u16 = 0 | count u32
  kind 1: d u32, then per record: id_len u32, id bytes, d f32
  kind 2: per record: id_len u32, id bytes, T u32, d u32, T*d f32 row-major
  kind 3: schema: L u16, then L x (name_len u32, name, dim u32),
          then per record: id_len u32, id bytes, sum(dim) f32 in schema order
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ExtractorError

MAGIC = b"IIF1"


def _f32(arr, what: str) -> bytes:
    arr = np.asarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ExtractorError(f"non-finite value in {what}")
    return arr.astype("<f4").tobytes()


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_sentence_file(
    path: Union[str, Path], vectors: Mapping[str, np.ndarray], dim: int
) -> None:
    chunks = [MAGIC, struct.pack("<BBHI", 1, 1, 0, len(vectors)), struct.pack("<I", dim)]
    for rec_id, vec in vectors.items():
        if np.asarray(vec).shape != (dim,):
            raise ExtractorError(f"vector for {rec_id!r} is not {dim}-dimensional")
        chunks.append(_string(rec_id))
        chunks.append(_f32(vec, f"sentence vector {rec_id!r}"))
    Path(path).write_bytes(b"".join(chunks))


def write_token_file(path: Union[str, Path], matrices: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<BBHI", 2, 1, 0, len(matrices))]
    for rec_id, mat in matrices.items():
        mat = np.asarray(mat)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise ExtractorError(f"token matrix for {rec_id!r} must be (T, d), T >= 1")
        chunks.append(_string(rec_id))
        chunks.append(struct.pack("<II", mat.shape[0], mat.shape[1]))
        chunks.append(_f32(mat, f"token matrix {rec_id!r}"))
    Path(path).write_bytes(b"".join(chunks))


def write_gradient_file(
    path: Union[str, Path],
    schema: Sequence[tuple[str, int]],
    bundles: Mapping[str, np.ndarray],
) -> None:
    """bundles map id -> flat vector already concatenated in schema order."""
    total = sum(dim for _, dim in schema)
    chunks = [
        MAGIC,
        struct.pack("<BBHI", 3, 1, 0, len(bundles)),
        struct.pack("<H", len(schema)),
    ]
    for name, dim in schema:
        chunks.append(_string(name))
        chunks.append(struct.pack("<I", dim))
    for rec_id, flat in bundles.items():
        flat = np.asarray(flat).reshape(-1)
        if flat.shape != (total,):
            raise ExtractorError(
                f"bundle for {rec_id!r} has {flat.shape[0]} values, schema wants {total}"
            )
        chunks.append(_string(rec_id))
        chunks.append(_f32(flat, f"gradient bundle {rec_id!r}"))
    Path(path).write_bytes(b"".join(chunks))
