import numpy as np
import pytest
import torch

from oracles import central_difference_grad, dense_gcn_branch, relative_error
from spleenseg.models.gcn import (
    BasicBlock,
    BoundaryRefine,
    GcnGenerator,
    GcnUnit,
    GeneratorSpec,
    kernel_for_level,
    layer_shape_trace,
)

MICRO = GeneratorSpec(input_size=16, encoder_channels=(8, 16, 32),
                      blocks_per_stage=(1, 1))


class TestSpec:
    def test_default_has_five_scales(self):
        assert GeneratorSpec().num_scales == 5

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            GeneratorSpec(input_size=48)

    def test_rejects_too_small_for_depth(self):
        with pytest.raises(ValueError):
            GeneratorSpec(input_size=32, encoder_channels=(8, 16, 32, 64, 128))

    def test_rejects_fixed_class_count_changes(self):
        with pytest.raises(ValueError):
            GeneratorSpec(num_classes=3)
        with pytest.raises(ValueError):
            GeneratorSpec(decoder_channels=4)

    def test_paper_scale_matches_paper_resolution(self):
        spec = GeneratorSpec.paper_scale()
        assert spec.input_size == 512
        assert spec.encoder_channels == (64, 256, 512, 1024, 2048)

    def test_dict_round_trip(self):
        spec = GeneratorSpec(gcn_kernel_rule="fixed", gcn_fixed_kernel=7)
        assert GeneratorSpec.from_dict(spec.to_dict()) == spec


class TestKernelRule:
    @pytest.mark.parametrize("feat,k", [(16, 15), (3, 3), (2, 1), (32, 31),
                                        (7, 7), (8, 7), (256, 255)])
    def test_largest_odd(self, feat, k):
        assert kernel_for_level(feat) == k

    def test_fixed_rule_caps(self):
        assert kernel_for_level(16, "fixed", 7) == 7
        assert kernel_for_level(4, "fixed", 7) == 3

    def test_desk_kernel_ladder(self):
        sizes = [64 // 2 ** (j + 1) for j in range(5)]
        assert [kernel_for_level(s) for s in sizes] == [31, 15, 7, 3, 1]

    def test_rejects_tiny_feature(self):
        with pytest.raises(ValueError):
            kernel_for_level(1)


class TestStem:
    def test_shape_and_params(self):
        model = GcnGenerator(GeneratorSpec())
        out = model.stem(torch.zeros(1, 1, 64, 64))
        assert tuple(out.shape) == (1, 16, 32, 32)
        n_params = sum(p.numel() for p in model.stem.parameters())
        assert n_params == 7 * 7 * 1 * 16 + 16

    def test_zero_weights_zero_output(self):
        model = GcnGenerator(GeneratorSpec())
        with torch.no_grad():
            model.stem.weight.zero_()
            model.stem.bias.zero_()
        assert model.stem(torch.randn(1, 1, 64, 64)).abs().max() == 0

    def test_literal_stem_is_inconsistent(self):
        # the verbatim parameters (kernel 1, padding 3) inflate the map,
        # so the full forward cannot close its skip connections
        model = GcnGenerator(GeneratorSpec(stem_literal=True))
        assert model.stem.kernel_size == (1, 1)
        assert model.stem.padding == (3, 3)
        out = model.stem(torch.zeros(1, 1, 64, 64))
        assert out.shape[-1] != 32
        with pytest.raises(RuntimeError):
            model(torch.zeros(1, 1, 64, 64))


class TestBasicBlock:
    def test_zero_residual_equals_projected_shortcut(self):
        torch.manual_seed(0)
        block = BasicBlock(4, 8, stride=2)
        with torch.no_grad():
            block.conv1.weight.zero_()
            block.conv1.bias.zero_()
            block.conv2.weight.zero_()
            block.conv2.bias.zero_()
        x = torch.randn(2, 4, 8, 8)
        expect = torch.relu(block.shortcut(x))
        torch.testing.assert_close(block(x), expect)

    def test_shape_halves(self):
        block = BasicBlock(4, 8, stride=2)
        assert tuple(block(torch.randn(1, 4, 16, 16)).shape) == (1, 8, 8, 8)

    def test_finite_under_random_init(self):
        torch.manual_seed(1)
        block = BasicBlock(3, 6, stride=2)
        out = block(torch.randn(2, 3, 12, 12))
        assert torch.isfinite(out).all()


class TestGcnUnit:
    def test_rejects_even_kernel(self):
        with pytest.raises(ValueError):
            GcnUnit(4, 6)

    def test_shape_preserved(self):
        torch.manual_seed(2)
        for k in (1, 3, 7):
            unit = GcnUnit(5, k)
            assert tuple(unit(torch.randn(1, 5, 12, 12)).shape) == (1, 2, 12, 12)

    def test_branch_equals_dense_outer_product(self):
        # single channel, branch B zeroed: unit == dense correlation with
        # the outer-product kernel of branch A's two 1D convolutions
        torch.manual_seed(3)
        for k in (3, 5, 7):
            unit = GcnUnit(1, k).double()
            with torch.no_grad():
                for conv in (unit.a1, unit.a2, unit.b1, unit.b2):
                    conv.bias.zero_()
                unit.b1.weight.zero_()
            x = torch.randn(1, 1, 15, 15, dtype=torch.float64)
            with torch.no_grad():
                got = unit(x)[0].numpy()
            want = dense_gcn_branch(
                x[0, 0].numpy(),
                unit.a1.weight.detach().numpy(),
                unit.a2.weight.detach().numpy(),
            )
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_branch_receptive_field_is_k_by_k(self):
        torch.manual_seed(4)
        k = 5
        unit = GcnUnit(1, k).double()
        x = torch.zeros(1, 1, 17, 17, dtype=torch.float64, requires_grad=True)
        out = unit(x)
        out[0, 0, 8, 8].backward()
        support = (x.grad[0, 0].abs() > 0).numpy()
        rows = np.nonzero(support.any(axis=1))[0]
        cols = np.nonzero(support.any(axis=0))[0]
        assert rows[-1] - rows[0] + 1 == k
        assert cols[-1] - cols[0] + 1 == k

    def test_parameter_economy_formula_matches_module(self):
        unit = GcnUnit(16, 7)
        separable, _ = GcnUnit.parameter_economy(16, 7)
        n_weights = sum(c.weight.numel() for c in (unit.a1, unit.a2, unit.b1, unit.b2))
        assert n_weights == separable

    def test_separable_cheaper_over_spec_matrix(self):
        # every (channels, kernel >= 3) pair in the desk and paper_scale presets
        for spec in (GeneratorSpec(), GeneratorSpec.paper_scale()):
            for j, c in enumerate(spec.encoder_channels):
                k = kernel_for_level(spec.input_size // 2 ** (j + 1))
                if k < 3:
                    continue
                separable, dense = GcnUnit.parameter_economy(c, k)
                assert separable < dense


class TestBoundaryRefine:
    def test_zero_weights_is_identity(self):
        torch.manual_seed(5)
        br = BoundaryRefine()
        with torch.no_grad():
            br.conv2.weight.zero_()
            br.conv2.bias.zero_()
        x = torch.randn(1, 2, 6, 6)
        torch.testing.assert_close(br(x), x)

    def test_jacobian_is_identity_at_zero_weights(self):
        br = BoundaryRefine().double()
        with torch.no_grad():
            br.conv2.weight.zero_()
            br.conv2.bias.zero_()
        x = torch.randn(2, 4, 4, dtype=torch.float64)

        def scalar(v):
            return br(v.unsqueeze(0)).sum()

        fd = central_difference_grad(scalar, x.clone())
        torch.testing.assert_close(fd, torch.ones_like(x), atol=1e-6, rtol=1e-6)

    def test_shape_preserved(self):
        br = BoundaryRefine()
        assert tuple(br(torch.randn(3, 2, 9, 9)).shape) == (3, 2, 9, 9)


class TestGenerator:
    def test_shape_contract(self):
        model = GcnGenerator(GeneratorSpec())
        out = model(torch.randn(3, 1, 64, 64))
        assert tuple(out.shape) == (3, 2, 64, 64)

    def test_unbatched_input(self):
        model = GcnGenerator(GeneratorSpec())
        assert tuple(model(torch.randn(1, 64, 64)).shape) == (2, 64, 64)

    def test_micro_spec_shape(self):
        model = GcnGenerator(MICRO)
        assert tuple(model(torch.randn(2, 1, 16, 16)).shape) == (2, 2, 16, 16)

    def test_structured_init_is_exact_zero_map(self):
        torch.manual_seed(6)
        model = GcnGenerator(GeneratorSpec())
        with torch.no_grad():
            out = model(torch.randn(2, 1, 64, 64))
        assert float(out.abs().max()) == 0.0

    def test_he_init_is_not_zero_map(self):
        torch.manual_seed(7)
        model = GcnGenerator(GeneratorSpec(init_scheme="he"))
        with torch.no_grad():
            out = model(torch.randn(1, 1, 64, 64))
        assert float(out.abs().max()) > 0.0

    def test_batch_matches_single(self):
        torch.manual_seed(8)
        model = GcnGenerator(GeneratorSpec(init_scheme="he"))
        x = torch.randn(4, 1, 64, 64)
        with torch.no_grad():
            batched = model(x)
            singles = torch.stack([model(x[i : i + 1])[0] for i in range(4)])
        # f32 accumulation order differs between batch sizes
        torch.testing.assert_close(batched, singles, atol=1e-3, rtol=1e-5)

    def test_seeded_build_is_deterministic(self):
        torch.manual_seed(9)
        a = GcnGenerator(GeneratorSpec(init_scheme="he"))
        torch.manual_seed(9)
        b = GcnGenerator(GeneratorSpec(init_scheme="he"))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_rejects_wrong_size(self):
        model = GcnGenerator(GeneratorSpec())
        with pytest.raises(ValueError):
            model(torch.randn(1, 1, 32, 32))
        with pytest.raises(ValueError):
            model(torch.randn(1, 2, 64, 64))

    def test_gradient_reaches_every_parameter(self):
        torch.manual_seed(10)
        model = GcnGenerator(GeneratorSpec(init_scheme="he"))
        out = model(torch.randn(1, 1, 64, 64))
        out.square().mean().backward()
        dead = [n for n, p in model.named_parameters()
                if p.grad is None or not p.grad.abs().sum() > 0]
        assert dead == []

    def test_structured_init_has_escape_gradient(self):
        # the zero map is not a trap: the zero-started projections still
        # receive signal through their live mixers
        torch.manual_seed(10)
        model = GcnGenerator(GeneratorSpec())
        out = model(torch.randn(1, 1, 64, 64))
        out.sum().backward()
        for unit in model.gcn_units:
            assert float(unit.a1.weight.grad.abs().sum()) > 0
            assert float(unit.b1.weight.grad.abs().sum()) > 0


class TestShapeTrace:
    def test_trace_covers_all_scales(self):
        trace = layer_shape_trace(GeneratorSpec())
        names = [t[0] for t in trace]
        assert sum(1 for n in names if n.startswith("gcn_units.") and n.endswith(".a2")) == 5
        final_shape = trace[-1][1]
        assert final_shape == (1, 2, 64, 64)

    def test_trace_shapes_consistent(self):
        trace = layer_shape_trace(MICRO)
        by_name = {t[0]: t for t in trace}
        assert by_name["stem"][1] == (1, 8, 8, 8)
        assert by_name["upsamplers.2"][1] == (1, 2, 16, 16)
        total = sum(t[2] for t in trace)
        n_params = sum(p.numel() for p in GcnGenerator(MICRO).parameters())
        assert total == n_params
