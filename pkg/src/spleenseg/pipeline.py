"""End-to-end experiment orchestration: cohort, training runs, evaluation.

The desk pipeline reproduces the study design at laptop scale: one
phantom cohort, three training regimes (plain segmentation baseline on
axial slices, adversarial axial-only, adversarial three-view with
fusion), per-epoch DSC curves for every method, and a cross-regime
comparison summary.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .fusion import (
    FusionConfig,
    evaluate_checkpoints,
    write_curve_csv,
)
from .models.gcn import GeneratorSpec
from .models.patchgan import DiscriminatorSpec
from .phantom import load_manifest, regenerate_scan, sample_cohort, write_cohort
from .stats import TooFewPairsError, wilcoxon_signed_rank
from .training import TrainConfig, train_experiment
from .volio import read_mvol

REGIMES = ("axial-only", "three-view")

# (directory name, regime, gan on) for the desk comparison
DESK_RUNS = (
    ("baseline-axial", "axial-only", False),
    ("adv-axial", "axial-only", True),
    ("adv-three-view", "three-view", True),
)


@dataclass
class RunConfig:
    """Fully resolved configuration for one training run.

    Serialized into the run directory as run.json; rerunning from that
    file with the same seed reproduces the run bit-exactly.
    """

    regime: str = "three-view"
    data_dir: str = "data"
    run_dir: str = "runs/run-0"
    n_train: int = 8
    n_test: int = 4
    grid_size: int = 64
    spacing_mm: float = 4.0
    bias_strength: float = 0.2
    noise_sigma: float = 0.05
    distractor_count: int = 3
    cohort_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec.desk)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if self.grid_size != self.generator.input_size:
            raise ValueError(
                f"grid_size {self.grid_size} must match generator input size "
                f"{self.generator.input_size}"
            )

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "data_dir": str(self.data_dir),
            "run_dir": str(self.run_dir),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "grid_size": self.grid_size,
            "spacing_mm": self.spacing_mm,
            "bias_strength": self.bias_strength,
            "noise_sigma": self.noise_sigma,
            "distractor_count": self.distractor_count,
            "cohort_seed": self.cohort_seed,
            "train": self.train.to_dict(),
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "fusion": self.fusion.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        d["generator"] = GeneratorSpec.from_dict(d.get("generator", {}))
        d["discriminator"] = DiscriminatorSpec.from_dict(d.get("discriminator", {}))
        d["fusion"] = FusionConfig.from_dict(d.get("fusion", {}))
        return cls(**d)

    def save(self, run_dir=None) -> Path:
        target = Path(run_dir if run_dir is not None else self.run_dir)
        target.mkdir(parents=True, exist_ok=True)
        path = target / "run.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def manifest_scans(manifest: dict, split: str | None = None) -> list:
    """(entry, Volume, Mask) per scan, reading MVOL files when present.

    Scans lacking files are regenerated from their stored config, which
    yields bit-identical data (phantoms are pure functions of config).
    """
    base = Path(manifest["_dir"]) if "_dir" in manifest else None
    out = []
    for entry in manifest["scans"]:
        if split is not None and entry["split"] != split:
            continue
        vol_path = base / entry["volume"] if base and "volume" in entry else None
        if vol_path is not None and vol_path.exists():
            volume = read_mvol(vol_path)
            mask = read_mvol(base / entry["mask"])
        else:
            scan = regenerate_scan(entry)
            volume, mask = scan.volume, scan.mask
        out.append((entry, volume, mask))
    return out


def evaluation_pairs(manifest: dict, split: str = "test") -> list:
    return [(e["id"], v, m) for e, v, m in manifest_scans(manifest, split)]


class _ScanShim:
    """Adapts (Volume, Mask) pairs to the trainer's scan interface."""

    __slots__ = ("volume", "mask")

    def __init__(self, volume, mask):
        self.volume = volume
        self.mask = mask


def training_scans(manifest: dict) -> list:
    return [_ScanShim(v, m) for _, v, m in manifest_scans(manifest, "train")]


def run_training(config: RunConfig, manifest: dict) -> dict:
    """Train one regime per its RunConfig and write all artifacts."""
    run_dir = Path(config.run_dir)
    config.save(run_dir)
    scans = training_scans(manifest)
    disc = config.discriminator if config.train.gan_enabled else None
    summary = train_experiment(
        scans, config.regime, config.train, config.generator, disc, run_dir
    )
    (run_dir / "training_summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def evaluate_run(config: RunConfig, manifest: dict, epochs=None,
                 include_fusion: bool = True) -> dict:
    """Per-epoch curves plus a final-epoch report for one trained run."""
    run_dir = Path(config.run_dir)
    pairs = evaluation_pairs(manifest, "test")
    curve_rows, report = evaluate_checkpoints(
        run_dir, pairs, config.fusion, epochs=epochs, include_fusion=include_fusion
    )
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    write_curve_csv(curve_rows, eval_dir / "epoch_curve.csv")
    report.write_csv(eval_dir / "report.csv")
    report.write_json(eval_dir / "report.json")
    return {"curve": curve_rows, "report": report}


def run_desk_pipeline(
    out_dir,
    n_train: int = 8,
    n_test: int = 4,
    epochs: int = 10,
    seed: int = 0,
    grid_size: int = 64,
    lambda_gan: float = 10.0,
    progress=None,
) -> dict:
    """Cohort + three regimes + evaluation; returns the comparison summary.

    Writes under out_dir: data/ (cohort), runs/<name>/ (checkpoints and
    eval artifacts per regime), summary.json.

    lambda_gan defaults to 10 here rather than the full-scale default of
    100: at this cohort size the adversarial term at 100x dominates the
    dice gradient once the discriminator separates, and the off-axis
    views stall with empty argmax predictions.  At 10 all three views
    converge in a handful of epochs.
    """
    t0 = time.time()
    out_dir = Path(out_dir)
    say = progress if progress is not None else (lambda msg: None)

    say(f"generating cohort: {n_train} train / {n_test} test, grid {grid_size}")
    scans, manifest = sample_cohort(
        n_train, n_test, seed=seed, grid_size=grid_size
    )
    data_dir = out_dir / "data"
    write_cohort(scans, manifest, data_dir)
    manifest = load_manifest(data_dir / "manifest.json")

    summary = {
        "n_train": n_train,
        "n_test": n_test,
        "epochs": epochs,
        "seed": seed,
        "lambda_gan": lambda_gan,
        "runs": {},
    }
    final_means = {}
    for name, regime, gan_on in DESK_RUNS:
        say(f"training {name} ({regime}, gan={'on' if gan_on else 'off'})")
        config = RunConfig(
            regime=regime,
            data_dir=str(data_dir),
            run_dir=str(out_dir / "runs" / name),
            n_train=n_train,
            n_test=n_test,
            grid_size=grid_size,
            cohort_seed=seed,
            train=TrainConfig(
                epochs=epochs, seed=seed, gan_enabled=gan_on,
                lambda_gan=lambda_gan,
            ),
            generator=GeneratorSpec(input_size=grid_size),
        )
        run_training(config, manifest)
        say(f"evaluating {name}")
        result = evaluate_run(config, manifest)
        run_entry = {
            "regime": regime,
            "gan_enabled": gan_on,
            "run_dir": config.run_dir,
            "aggregates": result["report"].aggregates,
            "curve_first_last": _curve_endpoints(result["curve"]),
        }
        summary["runs"][name] = run_entry
        for method, agg in result["report"].aggregates.items():
            final_means[(name, method)] = agg["mean_dsc"]
        # keep per-scan scores for the cross-regime paired test
        run_entry["scores"] = {
            m: result["report"].scores(m) for m in result["report"].methods()
        }

    summary["comparisons"] = _cross_regime_tests(summary["runs"])
    summary["headline"] = {
        "baseline_axial_mean_dsc": final_means.get(("baseline-axial", "axial")),
        "adv_axial_mean_dsc": final_means.get(("adv-axial", "axial")),
        "adv_three_view_fused_mean_dsc": final_means.get(("adv-three-view", "fused")),
    }
    summary["runtime_seconds"] = round(time.time() - t0, 1)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    say(f"done in {summary['runtime_seconds']} s")
    return summary


def _curve_endpoints(curve_rows) -> dict:
    """First- and last-epoch mean DSC per method."""
    out = {}
    for row in curve_rows:
        entry = out.setdefault(
            row["method"], {"first_epoch_mean": None, "last_epoch_mean": None}
        )
        if entry["first_epoch_mean"] is None:
            entry["first_epoch_mean"] = row["mean_dsc"]
        entry["last_epoch_mean"] = row["mean_dsc"]
    return out


def _cross_regime_tests(runs: dict) -> list:
    """Paired Wilcoxon tests between the headline methods of each run."""
    labeled = []
    for name, entry in runs.items():
        scores = entry.get("scores", {})
        headline = "fused" if "fused" in scores else "axial"
        if headline in scores:
            labeled.append((f"{name}/{headline}", scores[headline]))
    comparisons = []
    for i, (la, xs) in enumerate(labeled):
        for lb, ys in labeled[i + 1 :]:
            entry = {"method_a": la, "method_b": lb, "n_pairs": len(xs)}
            try:
                w, p = wilcoxon_signed_rank(xs, ys)
                entry.update({"W": w, "p": p, "significant": bool(p < 0.01)})
            except TooFewPairsError as exc:
                entry.update({"W": None, "p": None, "note": str(exc)})
            comparisons.append(entry)
    return comparisons
