"""Overlap metrics and evaluation report containers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volio import Mask


def _as_bool(mask) -> np.ndarray:
    data = mask.data if isinstance(mask, Mask) else np.asarray(mask)
    return data.astype(bool)


def dsc(a, b) -> float:
    """Dice similarity coefficient; two empty masks score 1.0."""
    x = _as_bool(a)
    y = _as_bool(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    sx = int(x.sum())
    sy = int(y.sum())
    if sx + sy == 0:
        return 1.0
    inter = int(np.logical_and(x, y).sum())
    return 2.0 * inter / (sx + sy)


def volume_cc(mask: Mask) -> float:
    """Foreground volume in cubic centimeters."""
    voxel_mm3 = float(np.prod(mask.spacing_mm))
    return float(mask.data.sum()) * voxel_mm3 / 1000.0


@dataclass
class MetricsReport:
    """Per-scan rows plus per-method aggregates and pairwise tests.

    rows: dicts with scan_id, method, dsc, predicted_volume_cc,
        true_volume_cc (and optionally epoch).
    aggregates: method -> summary statistics over its rows.
    tests: pairwise Wilcoxon results between methods.
    """

    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    tests: list = field(default_factory=list)

    def methods(self) -> list:
        seen = []
        for row in self.rows:
            if row["method"] not in seen:
                seen.append(row["method"])
        return seen

    def scores(self, method: str) -> list:
        return [r["dsc"] for r in self.rows if r["method"] == method]

    def write_csv(self, path) -> None:
        path = Path(path)
        fields = ["scan_id", "method", "dsc", "predicted_volume_cc", "true_volume_cc"]
        extras = sorted({k for r in self.rows for k in r} - set(fields))
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields + extras)
            writer.writeheader()
            writer.writerows(self.rows)

    def write_json(self, path) -> None:
        payload = {
            "aggregates": self.aggregates,
            "tests": self.tests,
            "n_rows": len(self.rows),
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def aggregate_scores(scores) -> dict:
    arr = np.asarray(scores, dtype=np.float64)
    if len(arr) == 0:
        raise ValueError("no scores to aggregate")
    return {
        "n": int(len(arr)),
        "mean_dsc": float(arr.mean()),
        "median_dsc": float(np.median(arr)),
        "std_dsc": float(arr.std(ddof=0)),
        "min_dsc": float(arr.min()),
        "max_dsc": float(arr.max()),
    }
