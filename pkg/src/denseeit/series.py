"""Spectrum container and the fixed-header CSV/JSON writers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np


@dataclass
class SpectrumSeries:
    """Observable values on a frequency grid.

    ``data`` holds one array per named quantity, all the length of ``detuning``.
    ``meta`` records provenance (parameters, solver settings).
    """

    detuning: np.ndarray
    data: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        for key, val in self.data.items():
            val = np.asarray(val)
            if val.shape[0] != self.detuning.shape[0]:
                raise ValueError(f"series {key!r} does not match grid length")
            self.data[key] = val

    def __len__(self) -> int:
        return self.detuning.shape[0]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    def to_csv(self, path: str | Path, columns: Sequence[tuple[str, Any]]) -> Path:
        """Write ``columns`` = [(header, array or callable(series))] as CSV."""
        return write_csv(path, [(name, col(self) if callable(col) else col) for name, col in columns])


def write_csv(path: str | Path, columns: Sequence[tuple[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [c[0] for c in columns]
    arrays = [np.asarray(c[1]) for c in columns]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*arrays):
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = list(zip(*body)) if body else [[] for _ in header]
    return {name: np.array([float(x) for x in col]) for name, col in zip(header, cols)}


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    # repr round-trips doubles exactly
    return repr(float(v))


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
