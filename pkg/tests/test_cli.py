import hashlib
import json
import subprocess
from pathlib import Path

import pytest

from spleenseg.cli import main
from spleenseg.pipeline import RunConfig
from spleenseg.volio import Mask, read_mvol

MICRO_PHANTOM = ["--seed", "5"]  # desk defaults: grid 64, 4 mm


def sha_tree(root):
    root = Path(root)
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    rc = main(["phantom", "--n-train", "1", "--n-test", "1",
               *MICRO_PHANTOM, "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def trained_run(cohort_dir):
    out = cohort_dir.parent / "run"
    rc = main(["train", "--manifest", str(cohort_dir / "manifest.json"),
               "--regime", "axial", "--epochs", "1", "--seed", "7",
               "--lambda", "10", "--out", str(out)])
    assert rc == 0
    return out


class TestPhantomCommand:
    def test_writes_cohort(self, cohort_dir):
        manifest = json.loads((cohort_dir / "manifest.json").read_text())
        assert len(manifest["scans"]) == 2
        for entry in manifest["scans"]:
            assert (cohort_dir / entry["volume"]).is_file()
            assert (cohort_dir / entry["mask"]).is_file()

    def test_rerun_identical_bytes(self, cohort_dir, tmp_path):
        rc = main(["phantom", "--n-train", "1", "--n-test", "1",
                   *MICRO_PHANTOM, "--out", str(tmp_path / "again")])
        assert rc == 0
        assert sha_tree(tmp_path / "again") == sha_tree(cohort_dir)

    def test_zero_train_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            main(["phantom", "--n-train", "0", "--n-test", "1",
                  "--out", str(tmp_path / "x")])
        assert err.value.code == 2

    def test_infeasible_volume_exits_one(self, tmp_path, capsys):
        # 16^3 grid at 4 mm spacing cannot hold a plausible spleen
        rc = main(["phantom", "--n-train", "1", "--n-test", "1",
                   "--grid", "16", "--out", str(tmp_path / "x")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestTrainCommand:
    def test_run_artifacts(self, trained_run):
        config = RunConfig.load(trained_run / "run.json")
        assert config.regime == "axial-only"
        assert config.train.epochs == 1
        assert config.train.lambda_gan == 10.0
        epoch = trained_run / "view-axial" / "epoch-1"
        assert (epoch / "generator").exists()
        assert (epoch / "discriminator").exists()
        assert (epoch / "loss_history.json").is_file()

    def test_no_gan_leaves_no_discriminator(self, cohort_dir, tmp_path):
        out = tmp_path / "nogan"
        rc = main(["train", "--manifest", str(cohort_dir / "manifest.json"),
                   "--regime", "axial", "--epochs", "1", "--no-gan",
                   "--out", str(out)])
        assert rc == 0
        assert not list(out.rglob("discriminator*"))
        assert RunConfig.load(out / "run.json").train.gan_enabled is False

    def test_rerun_from_config_json(self, trained_run, capsys):
        rc = main(["train", "--config", str(trained_run / "run.json")])
        assert rc == 0
        assert "trained axial-only" in capsys.readouterr().out

    def test_missing_flags_exit_one(self, capsys):
        rc = main(["train", "--regime", "axial"])
        assert rc == 1
        err = capsys.readouterr().err
        assert "--manifest" in err and "--out" in err

    def test_missing_manifest_exits_one(self, tmp_path, capsys):
        rc = main(["train", "--manifest", str(tmp_path / "none.json"),
                   "--regime", "axial", "--out", str(tmp_path / "r")])
        assert rc == 1


class TestEvaluateCommand:
    def test_writes_reports(self, trained_run, capsys):
        rc = main(["evaluate", "--run", str(trained_run)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "axial: mean" in out
        eval_dir = trained_run / "eval"
        assert (eval_dir / "epoch_curve.csv").is_file()
        assert (eval_dir / "report.csv").is_file()
        payload = json.loads((eval_dir / "report.json").read_text())
        assert set(payload["aggregates"]) == {"axial"}

    def test_single_epoch_selection(self, trained_run):
        rc = main(["evaluate", "--run", str(trained_run), "--epochs", "1"])
        assert rc == 0

    def test_missing_run_exits_one(self, tmp_path, capsys):
        rc = main(["evaluate", "--run", str(tmp_path / "ghost")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestInferCommand:
    def scan_paths(self, cohort_dir):
        manifest = json.loads((cohort_dir / "manifest.json").read_text())
        entry = next(e for e in manifest["scans"] if e["split"] == "test")
        return cohort_dir / entry["volume"], cohort_dir / entry["mask"]

    def test_single_view_inference(self, trained_run, cohort_dir, tmp_path):
        vol_path, _ = self.scan_paths(cohort_dir)
        out = tmp_path / "pred.mvol"
        rc = main(["infer", "--run", str(trained_run), "--epoch", "1",
                   "--input", str(vol_path), "--output", str(out),
                   "--views", "axial"])
        assert rc == 0
        mask = read_mvol(out)
        assert isinstance(mask, Mask)
        assert mask.data.shape == (64, 64, 64)

    def test_rerun_deterministic(self, trained_run, cohort_dir, tmp_path):
        vol_path, _ = self.scan_paths(cohort_dir)
        digests = []
        for name in ("a.mvol", "b.mvol"):
            out = tmp_path / name
            rc = main(["infer", "--run", str(trained_run), "--epoch", "1",
                       "--input", str(vol_path), "--output", str(out),
                       "--views", "axial"])
            assert rc == 0
            digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_unknown_view_exits_one(self, trained_run, cohort_dir, tmp_path,
                                    capsys):
        vol_path, _ = self.scan_paths(cohort_dir)
        rc = main(["infer", "--run", str(trained_run), "--epoch", "1",
                   "--input", str(vol_path),
                   "--output", str(tmp_path / "x.mvol"), "--views", "oblique"])
        assert rc == 1

    def test_missing_epoch_exits_one(self, trained_run, cohort_dir, tmp_path,
                                     capsys):
        vol_path, _ = self.scan_paths(cohort_dir)
        rc = main(["infer", "--run", str(trained_run), "--epoch", "99",
                   "--input", str(vol_path),
                   "--output", str(tmp_path / "x.mvol"), "--views", "axial"])
        assert rc == 1
        assert "no checkpoint" in capsys.readouterr().err

    def test_mask_input_rejected(self, trained_run, cohort_dir, tmp_path,
                                 capsys):
        _, mask_path = self.scan_paths(cohort_dir)
        rc = main(["infer", "--run", str(trained_run), "--epoch", "1",
                   "--input", str(mask_path),
                   "--output", str(tmp_path / "x.mvol"), "--views", "axial"])
        assert rc == 1
        assert "mask" in capsys.readouterr().err


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run(["spleenseg", "--help"], capture_output=True,
                              text=True)
        assert proc.returncode == 0
        for command in ("phantom", "train", "evaluate", "infer"):
            assert command in proc.stdout
