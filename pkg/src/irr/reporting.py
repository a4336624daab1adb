"""Report emission: JSON-lines plus an aligned text table.

Every metric row carries exactly the fields metric, k, value, setting,
mode, W. The first JSONL line is a header object with the resolved config
digest so reports are traceable to their configuration.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

FIELDS = ("metric", "k", "value", "setting", "mode", "W")


def config_digest(resolved_text: str) -> str:
    return hashlib.sha256(resolved_text.encode("utf-8")).hexdigest()[:16]


def write_jsonl(path, rows: list[dict], digest: str):
    lines = [json.dumps({"config_digest": digest}, sort_keys=True)]
    for row in rows:
        ordered = {name: row.get(name) for name in FIELDS}
        lines.append(json.dumps(ordered, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_table(rows: list[dict], digest: str) -> str:
    header = list(FIELDS)
    rendered = [[_fmt(row.get(name)) for name in FIELDS] for row in rows]
    widths = [max(len(header[i]), *(len(r[i]) for r in rendered)) if rendered else len(header[i])
              for i in range(len(header))]
    lines = [f"# config_digest={digest}"]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rendered:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(header))))
    return "\n".join(lines) + "\n"


def write_report(base_path, rows: list[dict], digest: str):
    """Write <base>.jsonl and <base>.txt; returns the jsonl path."""
    base = Path(base_path)
    jsonl = base.with_suffix(".jsonl")
    write_jsonl(jsonl, rows, digest)
    base.with_suffix(".txt").write_text(format_table(rows, digest), encoding="utf-8")
    return jsonl


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)
