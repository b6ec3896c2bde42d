"""Read-only access to a run directory.

CSV cells are kept as the exact strings the run wrote, so the summary
can cite them verbatim; floats are parsed only where a plot needs
coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class ReportError(ValueError):
    """A run directory that cannot be rendered; the message names the file."""


@dataclass
class Table:
    """One CSV as raw strings: a header row and the data cells."""

    header: list[str]
    rows: list[list[str]]

    def column(self, name: str) -> list[str]:
        i = self.header.index(name)
        return [r[i] for r in self.rows]

    def floats(self, name: str) -> list[float]:
        return [float(v) for v in self.column(name)]


def load_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.is_file():
        raise ReportError(f"manifest.json not found in {run_dir}")
    return json.loads(path.read_text())


def read_table(run_dir: Path, name: str) -> Table:
    path = Path(run_dir) / name
    if not path.is_file():
        raise ReportError(f"{name} not found in {run_dir}")
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ReportError(f"{name} row {i + 1}: {len(row)} cells for {len(header)} columns")
    return Table(header=header, rows=rows)


def read_json(run_dir: Path, name: str) -> dict:
    path = Path(run_dir) / name
    if not path.is_file():
        raise ReportError(f"{name} not found in {run_dir}")
    return json.loads(path.read_text())


def cite(value) -> str:
    """A JSON value as the exact literal json would write for it."""
    return json.dumps(value)
