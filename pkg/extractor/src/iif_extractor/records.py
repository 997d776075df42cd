"""Minimal reader for the engine's JSON-Lines examples format.

The extractor talks to the engine exclusively through file formats, so the
handful of fields it needs are parsed here rather than importing the engine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .errors import ExtractorError


@dataclass(frozen=True)
class Example:
    id: str
    input_text: str
    output_text: str = ""
    label: Optional[int] = None


def load_examples(path: Union[str, Path]) -> list[Example]:
    path = Path(path)
    out = []
    seen = set()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ExtractorError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExtractorError(f"{path}:{line_no}: bad JSON: {exc}") from exc
        if "id" not in obj or "input_text" not in obj:
            raise ExtractorError(f"{path}:{line_no}: missing id/input_text")
        rec_id = str(obj["id"])
        if rec_id in seen:
            raise ExtractorError(f"{path}:{line_no}: duplicate id {rec_id!r}")
        seen.add(rec_id)
        label = obj.get("label")
        out.append(
            Example(
                id=rec_id,
                input_text=str(obj["input_text"]),
                output_text=str(obj.get("output_text") or ""),
                label=int(label) if label is not None else None,
            )
        )
    return out
