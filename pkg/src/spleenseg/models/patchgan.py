"""Conditional Markovian discriminator scoring (image, segmentation) pairs.

A stack of 4x4 convolutions produces a grid of patch logits: n_layers
stride-2 convolutions with doubling channels, one stride-1 convolution,
and a final stride-1 scoring convolution to one channel. Instance
normalization everywhere except the first and scoring layers, leaky
ReLU slope 0.2.

The scoring convolution starts at zero under the structured init scheme,
so the adversarial gradient reaching the generator ramps up smoothly as
the discriminator learns instead of injecting noise from a random head.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn


@dataclass
class DiscriminatorSpec:
    in_channels: int = 3
    base_channels: int = 64
    n_layers: int = 3
    kernel: int = 4
    init_scheme: str = "structured"

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.kernel < 1:
            raise ValueError("kernel must be >= 1")
        if self.init_scheme not in ("structured", "he"):
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}")

    @classmethod
    def desk(cls) -> "DiscriminatorSpec":
        return cls(base_channels=16, n_layers=2)

    @classmethod
    def paper_scale(cls) -> "DiscriminatorSpec":
        return cls(base_channels=64, n_layers=3)

    def layer_params(self) -> list[tuple[int, int]]:
        """(kernel, stride) per convolution, in forward order."""
        layers = [(self.kernel, 2) for _ in range(self.n_layers)]
        layers.append((self.kernel, 1))  # penultimate feature conv
        layers.append((self.kernel, 1))  # scoring conv
        return layers

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorSpec":
        return cls(**d)


def condition_pair(image: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
    """Concatenate image and segmentation channels, image first."""
    if image.dim() != seg.dim():
        raise ValueError(f"rank mismatch: image {image.dim()}D vs seg {seg.dim()}D")
    if image.shape[-2:] != seg.shape[-2:]:
        raise ValueError(f"spatial mismatch: {tuple(image.shape)} vs {tuple(seg.shape)}")
    return torch.cat([image, seg], dim=-3)


def receptive_field_from_layers(layers: list[tuple[int, int]]) -> int:
    """Receptive field of one output unit for a (kernel, stride) stack."""
    rf, jump = 1, 1
    for k, s in layers:
        rf += (k - 1) * jump
        jump *= s
    return rf


def receptive_field(spec: DiscriminatorSpec) -> int:
    """Input extent seen by one patch score."""
    return receptive_field_from_layers(spec.layer_params())


def score_grid_shape(spec: DiscriminatorSpec, input_size: int) -> int:
    """Spatial size of the score grid by the conv output-size formula."""
    n = input_size
    for k, s in spec.layer_params():
        n = (n + 2 * 1 - k) // s + 1
        if n < 1:
            raise ValueError(
                f"input size {input_size} too small for this discriminator "
                f"(score grid would collapse)"
            )
    return n


class PatchDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec | None = None):
        super().__init__()
        self.spec = spec or DiscriminatorSpec()
        s = self.spec
        layers: list[nn.Module] = []
        cin = s.in_channels
        cout = s.base_channels
        for i in range(s.n_layers):
            layers.append(nn.Conv2d(cin, cout, s.kernel, 2, 1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(cout))
            layers.append(nn.LeakyReLU(0.2))
            cin = cout
            cout = s.base_channels * min(2 ** (i + 1), 8)
        layers.append(nn.Conv2d(cin, cout, s.kernel, 1, 1))
        layers.append(nn.InstanceNorm2d(cout))
        layers.append(nn.LeakyReLU(0.2))
        self.scoring = nn.Conv2d(cout, 1, s.kernel, 1, 1)
        self.features = nn.Sequential(*layers)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        if self.spec.init_scheme == "structured":
            with torch.no_grad():
                self.scoring.weight.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected [B,{self.spec.in_channels},S,S] input, got {tuple(x.shape)}")
        score_grid_shape(self.spec, int(x.shape[-1]))
        out = self.scoring(self.features(x))
        return out.squeeze(0) if squeeze else out
