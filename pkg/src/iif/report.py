"""Run reports: one self-contained JSON document per run.

The "timestamp" and "timings" fields hold wall-clock data and are the only
parts of a report that may differ between identical runs; comparisons
exclude them.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .core import RankedSelection, ScoreVector
from .errors import IoError, ParseError

SCHEMA_VERSION = "1"
VOLATILE_FIELDS = ("timestamp", "timings")


def _selection_dict(sel: RankedSelection) -> dict:
    return {
        "ids": list(sel.ids),
        "scores": list(sel.scores),
        "provenance": {
            key: list(value) if isinstance(value, tuple) else value
            for key, value in sel.provenance.items()
        },
    }


def _score_dict(vec: ScoreVector) -> dict:
    return {"method_tag": vec.method_tag, "entries": dict(sorted(vec.entries.items()))}


def emit_report(
    path: Union[str, Path],
    config: Mapping[str, object],
    metrics: Optional[Mapping[str, object]] = None,
    scores: Optional[Mapping[str, ScoreVector]] = None,
    selections: Optional[Mapping[str, RankedSelection]] = None,
    seeds: Optional[Mapping[str, object]] = None,
    timings: Optional[Mapping[str, float]] = None,
) -> dict:
    report = {
        "schema_version": SCHEMA_VERSION,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": dict(config),
        "seeds": dict(seeds or {}),
        "metrics": dict(metrics or {}),
        "scores": {name: _score_dict(vec) for name, vec in (scores or {}).items()},
        "selections": {
            name: _selection_dict(sel) for name, sel in (selections or {}).items()
        },
        "timings": dict(timings or {}),
    }
    try:
        Path(path).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return report


def load_report(path: Union[str, Path]) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"report is not valid JSON: {exc}") from exc
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported report schema {obj.get('schema_version')!r}")
    return obj


def stable_view(report: Mapping[str, object]) -> str:
    """Canonical dump with the wall-clock fields removed, for comparisons."""
    trimmed = {k: v for k, v in report.items() if k not in VOLATILE_FIELDS}
    return json.dumps(trimmed, indent=2, sort_keys=True)


def reports_equal(path_a: Union[str, Path], path_b: Union[str, Path]) -> bool:
    return stable_view(load_report(path_a)) == stable_view(load_report(path_b))


def flatten_metrics(metrics: Mapping[str, object], prefix: str = "") -> list[tuple[str, object]]:
    """Dotted-key scalar rows from a nested metrics mapping; lists are skipped."""
    rows: list[tuple[str, object]] = []
    for key in sorted(metrics):
        value = metrics[key]
        name = f"{prefix}.{key}" if prefix else key
        if isinstance(value, Mapping):
            rows.extend(flatten_metrics(value, name))
        elif isinstance(value, (int, float, str, bool)):
            rows.append((name, value))
    return rows


def write_metrics_csv(metrics: Mapping[str, object], path: Union[str, Path]) -> None:
    import csv

    try:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerows(flatten_metrics(metrics))
    except OSError as exc:
        raise IoError(str(exc)) from exc
