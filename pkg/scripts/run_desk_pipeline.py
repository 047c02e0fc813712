#!/usr/bin/env python3
"""Run the full desk-scale experiment: cohort, three regimes, evaluation.

Writes data/, runs/, and summary.json under --out. With defaults this
takes roughly 10-20 minutes on one CPU core.
"""

import argparse
import json

from spleenseg.pipeline import run_desk_pipeline


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="desk-run", help="output directory")
    parser.add_argument("--n-train", type=int, default=8)
    parser.add_argument("--n-test", type=int, default=4)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lambda", dest="lambda_gan", type=float, default=10.0,
                        help="adversarial weight for the GAN regimes")
    args = parser.parse_args()

    summary = run_desk_pipeline(
        args.out,
        n_train=args.n_train,
        n_test=args.n_test,
        epochs=args.epochs,
        seed=args.seed,
        lambda_gan=args.lambda_gan,
        progress=print,
    )
    print(json.dumps(summary["headline"], indent=2))
    print(f"runtime: {summary['runtime_seconds']} s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
