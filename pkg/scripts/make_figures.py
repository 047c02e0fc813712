#!/usr/bin/env python3
"""Plot epoch curves and final-score box plots for a finished desk run."""

import argparse
import json
from pathlib import Path

from spleenseg.figures import plot_epoch_curves, plot_score_boxes
from spleenseg.fusion import load_curve_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--run-root", default="desk-run",
                        help="directory produced by run_desk_pipeline.py")
    parser.add_argument("--out", default=None,
                        help="figure directory (default: <run-root>/figures)")
    args = parser.parse_args()

    root = Path(args.run_root)
    fig_dir = Path(args.out) if args.out else root / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)

    curves = {}
    for run_dir in sorted((root / "runs").iterdir()):
        curve_path = run_dir / "eval" / "epoch_curve.csv"
        if curve_path.exists():
            curves[run_dir.name] = load_curve_csv(curve_path)
    if not curves:
        raise SystemExit(f"no epoch_curve.csv found under {root / 'runs'}")
    plot_epoch_curves(curves, fig_dir / "epoch_curves.png")

    summary = json.loads((root / "summary.json").read_text())
    scores = {}
    for run_name, entry in sorted(summary["runs"].items()):
        for method, vals in entry.get("scores", {}).items():
            if method == "union":
                continue
            scores[f"{run_name}\n{method}"] = vals
    plot_score_boxes(scores, fig_dir / "final_dsc_boxes.png")

    print(f"wrote {fig_dir / 'epoch_curves.png'} and {fig_dir / 'final_dsc_boxes.png'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
