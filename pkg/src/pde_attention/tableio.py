"""Deterministic CSV/JSON writers shared by trajectories, reports, and the CLI.

CSV uses comma delimiters, period decimal separators, a header row, and
``\n`` line endings; floats are written via ``repr`` so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):  # numpy scalar
        return format_cell(value.item())
    return str(value)


def write_csv(path, fieldnames, rows) -> None:
    """Write dict rows to ``path`` with a fixed column order."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_cell(row[name]) for name in fieldnames])


def write_json(path, payload) -> None:
    """Pretty JSON with stable key order."""
    path = Path(path)
    with path.open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
