"""Trace container and its CSV form.

Columns are written with 17 significant digits so that a trace read back is
bitwise identical to the one written.  Run metadata (approach, time step,
wall-clock) goes to a JSON sidecar ``<name>.meta.json``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BASE_COLUMNS = ("t", "s_wheel", "F_contact", "u_under_wheel")


@dataclass
class Trace:
    t: np.ndarray
    s_wheel: np.ndarray
    F_contact: np.ndarray
    u_under_wheel: np.ndarray
    probes: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def columns(self) -> list[str]:
        return list(BASE_COLUMNS) + list(self.probes)

    def column(self, name: str) -> np.ndarray:
        if name in BASE_COLUMNS:
            return getattr(self, name)
        return self.probes[name]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = [self.column(c) for c in self.columns]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in zip(*cols):
                w.writerow([f"{v:.17g}" for v in row])
        if self.meta:
            meta_path(path).write_text(json.dumps(self.meta, indent=2, sort_keys=True, default=float) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "Trace":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or list(header[:4]) != list(BASE_COLUMNS):
                raise ValueError(f"{path}: expected header starting with {','.join(BASE_COLUMNS)}")
            data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
        if data.size == 0:
            data = np.zeros((0, len(header)))
        meta = {}
        mp = meta_path(path)
        if mp.exists():
            meta = json.loads(mp.read_text())
        return cls(
            t=data[:, 0],
            s_wheel=data[:, 1],
            F_contact=data[:, 2],
            u_under_wheel=data[:, 3],
            probes={name: data[:, 4 + i] for i, name in enumerate(header[4:])},
            meta=meta,
        )


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")
