"""Delimited metrics output: CSV with a leading schema-version comment line.

Float cells are written with ``repr`` (shortest round-trip form) so serial
reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, schema: str, fieldnames: list[str], rows) -> Path:
    """Write rows (dicts) under a ``# schema=...`` header comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# schema=skyroad/{schema}/v1\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k, "")) for k in fieldnames})
    return path


def read_csv(path) -> tuple[str, list[dict[str, str]]]:
    """Read back a schema-tagged CSV; returns (schema line, rows as dicts)."""
    with open(path, newline="") as fh:
        schema = fh.readline().strip()
        return schema, list(csv.DictReader(fh))
