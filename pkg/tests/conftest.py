import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spleenseg.phantom import load_manifest, sample_cohort, write_cohort
from spleenseg.pipeline import RunConfig, run_training
from spleenseg.training import TrainConfig


@pytest.fixture(scope="session")
def tiny_cohort(tmp_path_factory):
    """2 train / 1 test desk cohort written to disk, with its manifest."""
    data_dir = tmp_path_factory.mktemp("cohort")
    scans, manifest = sample_cohort(2, 1, seed=3)
    path = write_cohort(scans, manifest, data_dir)
    return load_manifest(path)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_cohort):
    """One-epoch adversarial axial-only run trained on the tiny cohort."""
    run_dir = tmp_path_factory.mktemp("runs") / "tiny"
    config = RunConfig(
        regime="axial-only",
        data_dir=tiny_cohort["_dir"],
        run_dir=str(run_dir),
        n_train=2,
        n_test=1,
        cohort_seed=3,
        train=TrainConfig(epochs=1, seed=1),
    )
    run_training(config, tiny_cohort)
    return config
