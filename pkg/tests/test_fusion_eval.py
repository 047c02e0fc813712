import numpy as np
import pytest
import torch

from oracles import set_fuse
from spleenseg.fusion import (
    FusionConfig,
    evaluate,
    evaluate_checkpoints,
    fuse_views,
    load_curve_csv,
    multi_view_segment,
    segment_volume,
    union_masks,
    write_curve_csv,
)
from spleenseg.models.checkpoint import load_generator
from spleenseg.models.gcn import GcnGenerator, GeneratorSpec
from spleenseg.pipeline import manifest_scans
from spleenseg.volio import Mask, Volume

SPACING = (4.0, 4.0, 4.0)


def mask_of(data):
    return Mask(np.asarray(data, dtype=np.uint8), SPACING)


def random_masks(seed, n=3, shape=(9, 9, 9), density=0.3):
    rng = np.random.default_rng(seed)
    return [mask_of(rng.random(shape) < density) for _ in range(n)]


class TestFusionConfig:
    def test_defaults(self):
        cfg = FusionConfig()
        assert cfg.structuring_element == "cross-6"
        assert cfg.open_radius == 1 and cfg.close_radius == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            FusionConfig(open_radius=-1)
        with pytest.raises(ValueError):
            FusionConfig(structuring_element="ball")

    def test_dict_round_trip(self):
        cfg = FusionConfig(structuring_element="cube-26", close_radius=2)
        assert FusionConfig.from_dict(cfg.to_dict()) == cfg


class TestUnion:
    def test_or_semantics(self):
        a = np.zeros((3, 3, 3))
        b = np.zeros((3, 3, 3))
        a[0, 0, 0] = 1
        b[2, 2, 2] = 1
        u = union_masks([mask_of(a), mask_of(b)])
        assert u.data[0, 0, 0] == 1 and u.data[2, 2, 2] == 1
        assert int(u.data.sum()) == 2

    def test_dict_input(self):
        masks = {"axial": mask_of(np.ones((2, 2, 2))),
                 "coronal": mask_of(np.zeros((2, 2, 2)))}
        assert int(union_masks(masks).data.sum()) == 8

    def test_never_invents_voxels(self):
        masks = random_masks(0)
        u = union_masks(masks)
        stack = np.stack([m.data for m in masks]).any(axis=0)
        assert not np.any(u.data.astype(bool) & ~stack)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            union_masks([mask_of(np.zeros((2, 2, 2))),
                         mask_of(np.zeros((3, 3, 3)))])

    def test_empty_input(self):
        with pytest.raises(ValueError):
            union_masks([])


class TestFuseViews:
    def test_three_empty_masks_stay_empty(self):
        masks = [mask_of(np.zeros((5, 5, 5))) for _ in range(3)]
        assert int(fuse_views(masks).data.sum()) == 0

    def test_isolated_voxel_removed_by_opening(self):
        data = np.zeros((5, 5, 5))
        data[2, 2, 2] = 1
        masks = [mask_of(data), mask_of(np.zeros((5, 5, 5))),
                 mask_of(np.zeros((5, 5, 5)))]
        assert int(fuse_views(masks).data.sum()) == 0

    def test_closing_restores_cube_hole_when_opening_skipped(self):
        # union assembles a 5^3 cube missing one interior voxel; with
        # open_radius 0 (skip) the closing step restores the solid cube
        cube = np.zeros((9, 9, 9), dtype=np.uint8)
        cube[2:7, 2:7, 2:7] = 1
        holed = cube.copy()
        holed[4, 4, 4] = 0
        parts = [holed.copy() for _ in range(3)]
        parts[0][2:7, 2:7, 4:7] = 0
        parts[1][2:7, 2:7, 2:5] = 0
        fused = fuse_views([mask_of(p) for p in parts],
                           FusionConfig(open_radius=0))
        np.testing.assert_array_equal(fused.data, cube)

    @pytest.mark.parametrize("kind", ("cross-6", "cube-26"))
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_set_oracle(self, kind, seed):
        masks = random_masks(seed)
        cfg = FusionConfig(structuring_element=kind)
        fused = fuse_views(masks, cfg)
        want = set_fuse([m.data for m in masks], kind, 1, 1)
        np.testing.assert_array_equal(fused.data.astype(bool), want)

    @pytest.mark.parametrize("seed", range(4))
    def test_radius_variants_match_oracle(self, seed):
        masks = random_masks(seed + 50, density=0.45)
        cfg = FusionConfig(open_radius=2, close_radius=0)
        fused = fuse_views(masks, cfg)
        want = set_fuse([m.data for m in masks], "cross-6", 2, 0)
        np.testing.assert_array_equal(fused.data.astype(bool), want)


class TestSegmentVolume:
    MICRO = GeneratorSpec(input_size=16, encoder_channels=(4, 8, 16),
                          blocks_per_stage=(1, 1))

    def test_zero_model_predicts_empty(self):
        torch.manual_seed(0)
        model = GcnGenerator(self.MICRO)  # structured init: exact zero map
        vol = Volume(np.random.default_rng(0).random((16, 16, 16)).astype(np.float32),
                     SPACING)
        pred = segment_volume(vol, model, "axial")
        assert isinstance(pred, Mask)
        assert pred.data.shape == (16, 16, 16)
        assert int(pred.data.sum()) == 0

    def test_batch_size_does_not_change_result(self):
        torch.manual_seed(1)
        model = GcnGenerator(GeneratorSpec(input_size=16,
                                           encoder_channels=(4, 8, 16),
                                           blocks_per_stage=(1, 1),
                                           init_scheme="he"))
        vol = Volume(np.random.default_rng(1).random((16, 16, 16)).astype(np.float32),
                     SPACING)
        a = segment_volume(vol, model, "coronal", batch_size=16)
        b = segment_volume(vol, model, "coronal", batch_size=3)
        np.testing.assert_array_equal(a.data, b.data)

    def test_size_mismatch_rejected(self):
        torch.manual_seed(2)
        model = GcnGenerator(self.MICRO)
        vol = Volume(np.zeros((32, 32, 32), dtype=np.float32), SPACING)
        with pytest.raises(ValueError):
            segment_volume(vol, model, "axial")

    def test_multi_view_fused_none_for_single_view(self):
        torch.manual_seed(3)
        model = GcnGenerator(self.MICRO)
        vol = Volume(np.zeros((16, 16, 16), dtype=np.float32), SPACING)
        masks, fused = multi_view_segment(vol, {"axial": model})
        assert set(masks) == {"axial"} and fused is None
        masks, fused = multi_view_segment(vol, {"axial": model, "sagittal": model})
        assert fused is not None


class TestEvaluate:
    @staticmethod
    def truth_segmenter(truth_by_id, pairs):
        lookup = {id(v.data): m for _, v, m in pairs}

        def run(volume):
            return lookup[id(volume.data)]

        return run

    def make_pairs(self, n=3, seed=0):
        rng = np.random.default_rng(seed)
        pairs = []
        for i in range(n):
            vol = Volume(rng.random((8, 8, 8)).astype(np.float32), SPACING)
            data = np.zeros((8, 8, 8), dtype=np.uint8)
            data[2:6, 2:6, 2:6] = 1
            data[1, 1, 1] = rng.integers(0, 2)
            pairs.append((f"scan-{i}", vol, mask_of(data)))
        return pairs

    def test_ground_truth_scores_one_everywhere(self):
        pairs = self.make_pairs()
        seg = self.truth_segmenter(None, pairs)
        report = evaluate({v: seg for v in ("axial", "coronal", "sagittal")}, pairs,
                          include_fusion=False)
        for row in report.rows:
            assert row["dsc"] == 1.0
        for agg in report.aggregates.values():
            assert agg["mean_dsc"] == agg["median_dsc"] == 1.0

    def test_union_of_truths_is_truth(self):
        pairs = self.make_pairs()
        seg = self.truth_segmenter(None, pairs)
        report = evaluate({v: seg for v in ("axial", "coronal")}, pairs)
        union_scores = report.scores("union")
        assert union_scores and all(s == 1.0 for s in union_scores)

    def test_single_scan_aggregates_equal_row(self):
        pairs = self.make_pairs(n=1)
        seg = self.truth_segmenter(None, pairs)
        report = evaluate({"axial": seg}, pairs)
        agg = report.aggregates["axial"]
        assert agg["n"] == 1
        assert agg["mean_dsc"] == report.rows[0]["dsc"]
        assert agg["std_dsc"] == 0.0

    def test_method_order_and_fusion_methods(self):
        pairs = self.make_pairs()
        seg = self.truth_segmenter(None, pairs)
        report = evaluate({v: seg for v in ("sagittal", "axial", "coronal")}, pairs)
        assert report.methods() == ["axial", "coronal", "sagittal", "union", "fused"]

    def test_small_n_tests_carry_note(self):
        pairs = self.make_pairs(n=3)
        seg = self.truth_segmenter(None, pairs)
        report = evaluate({"axial": seg, "coronal": seg}, pairs)
        assert report.tests, "expected pairwise test entries"
        for entry in report.tests:
            assert entry["W"] is None and entry["p"] is None
            assert "note" in entry

    def test_no_segmenters(self):
        with pytest.raises(ValueError):
            evaluate({}, [])

    def test_fused_not_far_below_union(self):
        # degraded segmenters: truth plus per-view random speckle
        pairs = self.make_pairs(n=4, seed=6)

        def noisy(view_seed):
            def run(volume):
                base = np.zeros((8, 8, 8), dtype=np.uint8)
                base[2:6, 2:6, 2:6] = 1
                noise = np.random.default_rng([view_seed, volume.data.size]) \
                    .random((8, 8, 8)) < 0.05
                return mask_of(base ^ noise)

            return run

        report = evaluate({"axial": noisy(1), "coronal": noisy(2),
                           "sagittal": noisy(3)}, pairs)
        fused = report.aggregates["fused"]["mean_dsc"]
        union = report.aggregates["union"]["mean_dsc"]
        assert fused >= union - 0.02


class TestCurveCsv:
    def test_round_trip(self, tmp_path):
        rows = [
            {"epoch": 1, "method": "axial", "mean_dsc": 0.5,
             "median_dsc": 0.55, "n": 4},
            {"epoch": 2, "method": "axial", "mean_dsc": 0.625,
             "median_dsc": 0.6, "n": 4},
        ]
        path = tmp_path / "curve.csv"
        write_curve_csv(rows, path)
        assert load_curve_csv(path) == rows


class TestEvaluateCheckpoints:
    def test_tiny_run_curve_and_report(self, tiny_run, tiny_cohort):
        from spleenseg.pipeline import evaluation_pairs

        pairs = evaluation_pairs(tiny_cohort, "test")
        curve, report = evaluate_checkpoints(tiny_run.run_dir, pairs)
        assert {r["epoch"] for r in curve} == {1}
        assert {r["method"] for r in curve} == {"axial"}
        assert all(0.0 <= r["mean_dsc"] <= 1.0 for r in curve)
        assert report.methods() == ["axial"]
        assert report.rows[0]["epoch"] == 1

    def test_epoch_subset(self, tiny_run, tiny_cohort):
        from spleenseg.pipeline import evaluation_pairs

        pairs = evaluation_pairs(tiny_cohort, "test")
        curve, _ = evaluate_checkpoints(tiny_run.run_dir, pairs, epochs=[1])
        assert len(curve) == 1

    def test_missing_run_dir(self, tmp_path):
        with pytest.raises((ValueError, FileNotFoundError)):
            evaluate_checkpoints(tmp_path / "nope", [])
