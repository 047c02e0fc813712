"""Encoder-decoder generator with large separable kernels and boundary refinement.

One 2D slice in, a 2-channel score map at the same resolution out. The
encoder is a strided residual stack; at every scale a GCN unit (two 1D
orthogonal convolution branches, summed) projects features to the
2-channel class stream, which the decoder upsamples with transpose
convolutions, merging skips by addition and refining boundaries with
residual 3x3 blocks.

Initialization keeps the network an exact zero map at the start while
every branch still receives gradient: the class-projection convolutions
and all refinement second convolutions start at zero, the transpose
convolutions start as channel-diagonal bilinear interpolation, and the
1D mixer convolutions get an enlarged He scale. The gains are sized so
the thin 2-channel decoder stream moves usefully within a few hundred
steps at small learning rates (the regime this model trains in); plain
He-normal init is available via ``init_scheme="he"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

# Init gains for the structured scheme. The mixer gain compensates for the
# two-channel bottleneck of the class stream; the upsampler gain keeps skip
# evidence from attenuating across decoder depth.
MIXER_INIT_GAIN = 6.0
UPSAMPLER_INIT_GAIN = 1.5


@dataclass
class GeneratorSpec:
    """Architecture hyperparameters for the generator."""

    input_size: int = 64
    in_channels: int = 1
    num_classes: int = 2
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    gcn_kernel_rule: str = "feature-resolution"
    gcn_fixed_kernel: int | None = None
    decoder_channels: int = 2
    stem_literal: bool = False
    init_scheme: str = "structured"

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        if self.num_classes != 2:
            raise ValueError("num_classes is fixed at 2")
        if self.decoder_channels != 2:
            raise ValueError("decoder_channels is fixed at 2")
        if self.input_size < 4 or self.input_size & (self.input_size - 1):
            raise ValueError(f"input_size must be a power of 2 >= 4, got {self.input_size}")
        n = len(self.encoder_channels)
        if n < 2:
            raise ValueError("need at least 2 encoder scales")
        if len(self.blocks_per_stage) != n - 1:
            raise ValueError(
                f"blocks_per_stage must have {n - 1} entries for "
                f"{n} encoder channels, got {len(self.blocks_per_stage)}"
            )
        if any(b < 1 for b in self.blocks_per_stage):
            raise ValueError("blocks_per_stage entries must be >= 1")
        if self.input_size // (2 ** n) < 2:
            raise ValueError(
                f"input_size {self.input_size} too small for {n} scales "
                f"(deepest feature map must be >= 2)"
            )
        if self.gcn_kernel_rule not in ("feature-resolution", "fixed"):
            raise ValueError(f"unknown gcn_kernel_rule {self.gcn_kernel_rule!r}")
        if self.gcn_kernel_rule == "fixed":
            if not self.gcn_fixed_kernel or self.gcn_fixed_kernel % 2 == 0:
                raise ValueError("fixed rule needs an odd gcn_fixed_kernel")
        if self.init_scheme not in ("structured", "he"):
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}")

    @property
    def num_scales(self) -> int:
        return len(self.encoder_channels)

    @classmethod
    def paper_scale(cls) -> "GeneratorSpec":
        return cls(input_size=512, encoder_channels=(64, 256, 512, 1024, 2048))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(**d)


def kernel_for_level(feature_size: int, rule: str = "feature-resolution",
                     fixed_kernel: int | None = None) -> int:
    """Odd GCN kernel for a feature-map resolution.

    The feature-resolution rule takes the largest odd integer not
    exceeding the resolution; the fixed rule caps it at a constant.
    """
    if feature_size < 2:
        raise ValueError(f"feature_size must be >= 2, got {feature_size}")
    largest_odd = feature_size if feature_size % 2 == 1 else feature_size - 1
    if rule == "feature-resolution":
        return largest_odd
    if rule == "fixed":
        if not fixed_kernel or fixed_kernel % 2 == 0:
            raise ValueError("fixed rule needs an odd kernel")
        return min(fixed_kernel, largest_odd)
    raise ValueError(f"unknown rule {rule!r}")


def _norm(channels: int) -> nn.Module:
    # Per-sample normalization so batched and single-slice forwards agree.
    return nn.GroupNorm(min(8, channels), channels)


class BasicBlock(nn.Module):
    """Residual basic block: conv-norm-relu-conv-norm, add, relu."""

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1)
        self.norm1 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1)
        self.norm2 = _norm(cout)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride), _norm(cout))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = torch.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return torch.relu(h + self.shortcut(x))


class GcnUnit(nn.Module):
    """Two 1D orthogonal convolution branches approximating a k x k kernel.

    Branch A applies (k,1) then (1,k); branch B the transpose order. The
    first conv of each branch maps C to 2 channels, the second mixes 2 to 2.
    No nonlinearity inside the unit.
    """

    def __init__(self, in_channels: int, kernel: int):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError(f"GCN kernel must be odd, got {kernel}")
        p = kernel // 2
        self.kernel = kernel
        self.a1 = nn.Conv2d(in_channels, 2, (kernel, 1), padding=(p, 0))
        self.a2 = nn.Conv2d(2, 2, (1, kernel), padding=(0, p))
        self.b1 = nn.Conv2d(in_channels, 2, (1, kernel), padding=(0, p))
        self.b2 = nn.Conv2d(2, 2, (kernel, 1), padding=(p, 0))

    def forward(self, x):
        return self.a2(self.a1(x)) + self.b2(self.b1(x))

    @staticmethod
    def parameter_economy(in_channels: int, kernel: int) -> tuple[int, int]:
        """(separable, dense) weight counts for a C -> 2 map at kernel k."""
        separable = 2 * (kernel * in_channels * 2 + kernel * 2 * 2)
        dense = kernel * kernel * in_channels * 2
        return separable, dense


class BoundaryRefine(nn.Module):
    """Residual refinement: x + conv3x3(relu(conv3x3(x)))."""

    def __init__(self, channels: int = 2):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))


def _bilinear_kernel_2x() -> torch.Tensor:
    taps = torch.tensor([0.25, 0.75, 0.75, 0.25])
    return torch.outer(taps, taps)


class GcnGenerator(nn.Module):
    def __init__(self, spec: GeneratorSpec | None = None):
        super().__init__()
        self.spec = spec or GeneratorSpec()
        s = self.spec
        ch = s.encoder_channels
        n = s.num_scales

        if s.stem_literal:
            # The literal stem parameters (kernel 1, padding 3) inflate the
            # feature map; kept only for inspecting the stem in isolation.
            self.stem = nn.Conv2d(s.in_channels, ch[0], 1, 2, 3)
        else:
            self.stem = nn.Conv2d(s.in_channels, ch[0], 7, 2, 3)

        self.stages = nn.ModuleList()
        for i in range(n - 1):
            blocks = [BasicBlock(ch[i], ch[i + 1], 2)]
            blocks += [BasicBlock(ch[i + 1], ch[i + 1], 1) for _ in range(s.blocks_per_stage[i] - 1)]
            self.stages.append(nn.Sequential(*blocks))

        self.gcn_units = nn.ModuleList()
        self.skip_refines = nn.ModuleList()
        for j in range(n):
            feat = s.input_size // (2 ** (j + 1))
            k = kernel_for_level(feat, s.gcn_kernel_rule, s.gcn_fixed_kernel)
            self.gcn_units.append(GcnUnit(ch[j], k))
            self.skip_refines.append(BoundaryRefine())

        self.upsamplers = nn.ModuleList(
            [nn.ConvTranspose2d(2, 2, 4, 2, 1) for _ in range(n)]
        )
        self.decoder_refines = nn.ModuleList([BoundaryRefine() for _ in range(n)])
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        if self.spec.init_scheme != "structured":
            return
        with torch.no_grad():
            for unit in self.gcn_units:
                unit.a1.weight.zero_()
                unit.b1.weight.zero_()
                unit.a2.weight.mul_(MIXER_INIT_GAIN)
                unit.b2.weight.mul_(MIXER_INIT_GAIN)
            for br in list(self.skip_refines) + list(self.decoder_refines):
                br.conv2.weight.zero_()
            kernel = _bilinear_kernel_2x() * UPSAMPLER_INIT_GAIN
            for up in self.upsamplers:
                up.weight.zero_()
                for c in range(up.weight.shape[0]):
                    up.weight[c, c] = kernel

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [torch.relu(self.stem(x))]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected [B,{self.spec.in_channels},S,S] input, got {tuple(x.shape)}")
        if x.shape[2] != self.spec.input_size or x.shape[3] != self.spec.input_size:
            raise ValueError(
                f"expected {self.spec.input_size}x{self.spec.input_size} slices, "
                f"got {tuple(x.shape[2:])}"
            )
        feats = self.encode(x)
        skips = [
            refine(unit(f))
            for f, unit, refine in zip(feats, self.gcn_units, self.skip_refines)
        ]
        d = skips[-1]
        n = self.spec.num_scales
        for i, j in enumerate(range(n - 2, -1, -1)):
            d = self.decoder_refines[i](self.upsamplers[i](d) + skips[j])
        logits = self.decoder_refines[n - 1](self.upsamplers[n - 1](d))
        return logits.squeeze(0) if squeeze else logits


def layer_shape_trace(spec: GeneratorSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """(layer name, output shape, parameter count) for every leaf module."""
    model = GcnGenerator(spec)
    trace: list[tuple[str, tuple[int, ...], int]] = []
    hooks = []

    def register(name, module):
        def hook(mod, args, out):
            if isinstance(out, torch.Tensor):
                n_params = sum(p.numel() for p in mod.parameters(recurse=False))
                trace.append((name, tuple(out.shape), n_params))
        hooks.append(module.register_forward_hook(hook))

    for name, module in model.named_modules():
        if len(list(module.children())) == 0 and name:
            register(name, module)
    with torch.no_grad():
        model(torch.zeros(1, spec.in_channels, spec.input_size, spec.input_size))
    for h in hooks:
        h.remove()
    return trace
