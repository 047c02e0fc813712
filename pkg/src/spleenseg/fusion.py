"""Multi-view inference, mask fusion, and run evaluation.

A trained per-view generator segments a cubic volume slice by slice
along its view axis; the per-view masks are fused by voxelwise union
followed by morphological opening then closing. Evaluation walks a
training run directory epoch by epoch and produces per-method DSC
curves plus a final report with pairwise Wilcoxon tests.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import morphology
from .metrics import MetricsReport, aggregate_scores, dsc, volume_cc
from .models.checkpoint import load_generator
from .stats import MIN_PAIRS, TooFewPairsError, wilcoxon_signed_rank
from .training import VIEW_ORDER, normalize_slice
from .volio import Mask, ViewAxis, Volume, assemble_volume, extract_slices

SIGNIFICANCE_LEVEL = 0.01


@dataclass
class FusionConfig:
    """Union-then-morphology fusion parameters.

    Radius 0 skips the corresponding operation entirely.
    """

    structuring_element: str = "cross-6"
    open_radius: int = 1
    close_radius: int = 1

    def __post_init__(self):
        if self.structuring_element not in morphology.STRUCTURING_ELEMENTS:
            raise ValueError(
                f"unknown structuring element {self.structuring_element!r}"
            )
        if self.open_radius < 0 or self.close_radius < 0:
            raise ValueError("radii must be >= 0")

    def to_dict(self) -> dict:
        return {
            "structuring_element": self.structuring_element,
            "open_radius": self.open_radius,
            "close_radius": self.close_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(**d)


def union_masks(masks) -> Mask:
    """Voxelwise OR of two or more same-shape masks."""
    items = list(masks.values()) if isinstance(masks, dict) else list(masks)
    if len(items) < 1:
        raise ValueError("need at least one mask")
    first = items[0]
    out = first.data.astype(bool)
    for m in items[1:]:
        if m.data.shape != first.data.shape:
            raise ValueError("mask shapes differ")
        out |= m.data.astype(bool)
    return Mask(out.astype(np.uint8), first.spacing_mm)


def fuse_views(masks_by_view, config: FusionConfig | None = None) -> Mask:
    """Union the per-view masks, then open and close the result."""
    if config is None:
        config = FusionConfig()
    u = union_masks(masks_by_view)
    data = morphology.binary_open(
        u.data, config.structuring_element, config.open_radius
    )
    data = morphology.binary_close(
        data, config.structuring_element, config.close_radius
    )
    return Mask(data, u.spacing_mm)


def segment_volume(
    volume: Volume, model, view, batch_size: int = 16
) -> Mask:
    """Run a generator over every slice along the view axis.

    Slices are min-max normalized exactly as during training. Returns
    the assembled binary mask in volume orientation.
    """
    view = ViewAxis(view)
    size = model.spec.input_size
    if volume.data.shape != (size, size, size):
        raise ValueError(
            f"volume shape {volume.data.shape} does not match model input size "
            f"{size}; resample first"
        )
    slices = extract_slices(volume.data, view)
    model.eval()
    preds = np.empty_like(slices, dtype=np.uint8)
    with torch.no_grad():
        for start in range(0, len(slices), batch_size):
            chunk = slices[start : start + batch_size]
            batch = np.stack([normalize_slice(s) for s in chunk])
            x = torch.from_numpy(batch[:, None, :, :])
            logits = model(x)
            preds[start : start + len(chunk)] = (
                logits.argmax(dim=1).numpy().astype(np.uint8)
            )
    return assemble_volume(preds, view, volume.spacing_mm)


def multi_view_segment(
    volume: Volume,
    models_by_view: dict,
    fusion: FusionConfig | None = None,
    batch_size: int = 16,
):
    """Segment with every available view model and fuse when possible.

    Returns (masks_by_view, fused) where fused is None for a single view.
    """
    masks = {
        ViewAxis(v).value: segment_volume(volume, m, v, batch_size)
        for v, m in models_by_view.items()
    }
    fused = fuse_views(masks, fusion) if len(masks) >= 2 else None
    return masks, fused


def _ordered_views(keys) -> list:
    canon = list(VIEW_ORDER)
    return sorted(keys, key=lambda k: canon.index(k) if k in canon else len(canon))


def evaluate(
    segmenters: dict,
    pairs,
    fusion: FusionConfig | None = None,
    include_union: bool = True,
    include_fusion: bool = True,
) -> MetricsReport:
    """Score per-view, union, and fused predictions against ground truth.

    segmenters: view name -> callable(Volume) -> Mask.
    pairs: iterable of (scan_id, Volume, Mask) test cases.
    Fusion methods are added only when at least two views are present.
    """
    if not segmenters:
        raise ValueError("no segmenters given")
    views = _ordered_views(segmenters.keys())
    report = MetricsReport()
    for scan_id, volume, truth in pairs:
        masks = {v: segmenters[v](volume) for v in views}
        methods = dict(masks)
        if include_fusion and len(views) >= 2:
            if include_union:
                methods["union"] = union_masks(masks)
            methods["fused"] = fuse_views(masks, fusion)
        for name, mask in methods.items():
            report.rows.append(
                {
                    "scan_id": scan_id,
                    "method": name,
                    "dsc": dsc(mask, truth),
                    "predicted_volume_cc": volume_cc(mask),
                    "true_volume_cc": volume_cc(truth),
                }
            )
    for method in report.methods():
        report.aggregates[method] = aggregate_scores(report.scores(method))
    method_names = report.methods()
    for i, ma in enumerate(method_names):
        for mb in method_names[i + 1 :]:
            xs = report.scores(ma)
            ys = report.scores(mb)
            entry = {"method_a": ma, "method_b": mb, "n_pairs": len(xs)}
            try:
                w, p = wilcoxon_signed_rank(xs, ys)
                entry.update(
                    {
                        "W": w,
                        "p": p,
                        "significant": bool(p < SIGNIFICANCE_LEVEL),
                    }
                )
            except TooFewPairsError as exc:
                entry.update({"W": None, "p": None, "note": str(exc)})
            report.tests.append(entry)
    return report


def _epoch_dirs(view_dir: Path) -> list:
    out = []
    for child in view_dir.iterdir():
        m = re.fullmatch(r"epoch-(\d+)", child.name)
        if m and child.is_dir():
            out.append((int(m.group(1)), child))
    return [d for _, d in sorted(out)]


def evaluate_checkpoints(
    run_dir,
    pairs,
    fusion: FusionConfig | None = None,
    epochs=None,
    batch_size: int = 16,
    include_fusion: bool = True,
):
    """Evaluate every saved epoch of a training run.

    Returns (curve_rows, final_report). curve_rows holds one dict per
    (epoch, method) with mean and median DSC over the test pairs; the
    report covers the last evaluated epoch in full.
    """
    run_dir = Path(run_dir)
    view_dirs = {
        d.name.split("view-", 1)[1]: d
        for d in sorted(run_dir.iterdir())
        if d.is_dir() and d.name.startswith("view-")
    }
    if not view_dirs:
        raise ValueError(f"no view-* directories under {run_dir}")
    epoch_lists = {v: _epoch_dirs(d) for v, d in view_dirs.items()}
    n_epochs = min(len(lst) for lst in epoch_lists.values())
    if n_epochs == 0:
        raise ValueError(f"no epoch-* checkpoints under {run_dir}")
    wanted = list(range(1, n_epochs + 1)) if epochs is None else sorted(epochs)
    pairs = list(pairs)
    curve_rows = []
    final_report = None
    for epoch in wanted:
        segmenters = {}
        for view, lst in epoch_lists.items():
            model = load_generator(lst[epoch - 1] / "generator")
            segmenters[view] = _make_view_segmenter(model, view, batch_size)
        report = evaluate(segmenters, pairs, fusion, include_fusion=include_fusion)
        for method, agg in report.aggregates.items():
            curve_rows.append(
                {
                    "epoch": epoch,
                    "method": method,
                    "mean_dsc": agg["mean_dsc"],
                    "median_dsc": agg["median_dsc"],
                    "n": agg["n"],
                }
            )
        final_report = report
        for row in final_report.rows:
            row.setdefault("epoch", epoch)
    return curve_rows, final_report


def _make_view_segmenter(model, view, batch_size: int):
    def run(volume: Volume) -> Mask:
        return segment_volume(volume, model, view, batch_size)

    return run


def write_curve_csv(curve_rows, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "method", "mean_dsc", "median_dsc", "n"]
        )
        writer.writeheader()
        writer.writerows(curve_rows)


def load_curve_csv(path) -> list:
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "epoch": int(row["epoch"]),
                    "method": row["method"],
                    "mean_dsc": float(row["mean_dsc"]),
                    "median_dsc": float(row["median_dsc"]),
                    "n": int(row["n"]),
                }
            )
    return rows


def write_run_config(run_dir, payload: dict) -> None:
    Path(run_dir, "run.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True)
    )
