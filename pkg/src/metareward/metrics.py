"""Comma-separated metrics emission with a strict schema.

One writer per run; rows are append-only and validated before writing so
a file can never contain NaN or Inf.
"""

from __future__ import annotations

import csv
import math

import numpy as np

HEADER = ["phase", "step", "lifetime", "seed", "episode_return",
          "lifetime_return", "intrinsic_reward", "entropy", "wall_ms"]

_PHASES = ("train", "eval")


class MetricsError(ValueError):
    pass


class MetricsWriter:
    """Appends schema-checked rows to a UTF-8 comma-separated file."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(HEADER)

    def write(self, row):
        if set(row) != set(HEADER):
            raise MetricsError(f"row keys {sorted(row)} != schema {sorted(HEADER)}")
        if row["phase"] not in _PHASES:
            raise MetricsError(f"unknown phase {row['phase']!r}")
        values = []
        for key in HEADER:
            v = row[key]
            if key != "phase":
                v = float(v)
                if not math.isfinite(v):
                    raise MetricsError(f"non-finite value for {key}")
                if key in ("step", "lifetime", "seed", "wall_ms"):
                    v = int(v)
            values.append(v)
        self._writer.writerow(values)
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_rows(path):
    """Parse a metrics file back into row dicts; validates the header."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HEADER:
            raise MetricsError(f"unexpected header {header}")
        rows = []
        for raw in reader:
            row = dict(zip(HEADER, raw))
            for key in HEADER[1:]:
                row[key] = float(row[key])
            rows.append(row)
    return rows


def emit_heatmap(path, visit_counts):
    """Write a grid of visit counts, one comma-separated row per grid row."""
    grid = np.asarray(visit_counts)
    if grid.ndim != 2 or not np.issubdtype(grid.dtype, np.integer):
        raise MetricsError("heatmap must be a 2-D integer grid")
    with open(path, "w", encoding="utf-8") as fh:
        for row in grid:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
