"""Reference-guided deformable encoder.

Pipeline: strided conv backbone -> channel alignment -> reference-prior
modulation -> shared patch tokenization on a common grid -> top-down
cross-scale attention -> per-scale deformable encoding.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .attention import DeformableAttention, TopDownAttention


class ConvBNReLU(nn.Module):
    """1x1 or 3x3 conv -> batch norm -> ReLU."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))


class BackboneStandin(nn.Module):
    """Four-stage strided conv pyramid producing features at strides 4/8/16/32."""

    def __init__(self, in_ch: int = 3, channels: tuple[int, ...] = (16, 32, 48, 64)):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("backbone needs exactly 4 channel counts")
        self.channels = tuple(channels)
        self.stem = nn.Sequential(
            nn.Conv2d(in_ch, channels[0], 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels[0], channels[0], 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.stages = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(channels[i], channels[i + 1], 3, stride=2, padding=1),
                nn.ReLU(inplace=True),
                nn.Conv2d(channels[i + 1], channels[i + 1], 3, padding=1),
                nn.ReLU(inplace=True),
            )
            for i in range(3)
        )

    def forward(self, image: Tensor) -> list[Tensor]:
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input size {h}x{w} must be divisible by 32")
        feats = [self.stem(image)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats


class ReferencePriorHead(nn.Module):
    """Normalized global prior: sigmoid(CBR_1x1(descriptor)), values in [0, 1]."""

    def __init__(self, ref_dim: int, out_dim: int):
        super().__init__()
        self.cbr = ConvBNReLU(ref_dim, out_dim, kernel=1)

    def forward(self, descriptor: Tensor) -> Tensor:
        return torch.sigmoid(self.cbr(descriptor))


def scale_modulation_weight(
    f_hat: Tensor, r_prime: Tensor, tau_min: float, eps: float = 1e-8
) -> Tensor:
    """Per-channel modulation weight in [tau_min, 1].

    sigmoid(GAP(f_hat) * channelwise-cosine(GAP(f_hat), r_prime)), clipped
    from below so no channel is fully suppressed. The cosine denominator is
    epsilon-stabilized for zero-norm channels.
    """
    if f_hat.shape[1] != r_prime.shape[1]:
        raise ValueError("channel mismatch between features and reference prior")
    gap = f_hat.mean(dim=(2, 3), keepdim=True)
    cos = (gap * r_prime) / (gap.abs() * r_prime.abs() + eps)
    return torch.clamp(torch.sigmoid(gap * cos), tau_min, 1.0)


def modulate(f_hat: Tensor, weight: Tensor, r_prime: Tensor) -> Tensor:
    """Elementwise feature modulation f_hat * weight * r_prime (channel broadcast)."""
    return f_hat * weight * r_prime


class PatchEmbed(nn.Module):
    """Non-overlapping patch tokenizer: (B, C, G, G) -> (B, N, D), N = (G/patch)^2."""

    def __init__(self, in_ch: int, dim: int, patch: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Conv2d(in_ch, dim, kernel_size=patch, stride=patch)

    def forward(self, x: Tensor) -> Tensor:
        g = x.shape[-1]
        if g % self.patch:
            raise ValueError(f"grid {g} not divisible by patch {self.patch}")
        return self.proj(x).flatten(2).transpose(1, 2)


class ReferenceGuidedEncoder(nn.Module):
    """Produces four same-shaped token sequences from a query and a descriptor.

    With `reference_guided=False` the prior modulation, top-down attention,
    offset prediction and semantic masking are all dropped, leaving a plain
    per-scale self-attention encoder over the same tokenization.
    """

    def __init__(
        self,
        backbone_channels: tuple[int, ...] = (16, 32, 48, 64),
        ref_dim: int = 16,
        c_align: int = 32,
        grid: int = 16,
        patch: int = 4,
        dim: int = 64,
        heads: int = 4,
        gamma: float = 0.1,
        tau_min: float = 0.1,
        offset_mode: str = "spatial",
        semantic_mask: bool = True,
        reference_guided: bool = True,
    ):
        super().__init__()
        if grid % patch:
            raise ValueError(f"grid {grid} not divisible by patch {patch}")
        self.grid = grid
        self.tau_min = tau_min
        self.semantic_mask = semantic_mask and reference_guided
        self.reference_guided = reference_guided
        self.backbone = BackboneStandin(channels=backbone_channels)
        self.align = nn.ModuleList(
            ConvBNReLU(c, c_align, kernel=1) for c in backbone_channels
        )
        self.patch_embed = PatchEmbed(c_align, dim, patch)
        if reference_guided:
            self.prior = ReferencePriorHead(ref_dim, c_align)
            self.topdown = nn.ModuleList(TopDownAttention(dim, heads) for _ in range(3))
        else:
            self.prior = None
            self.topdown = None
            gamma = 0.0
        self.encoders = nn.ModuleList(
            DeformableAttention(dim, heads, gamma=gamma, offset_mode=offset_mode)
            for _ in range(4)
        )

    def forward(self, image: Tensor, descriptor: Tensor) -> list[Tensor]:
        feats = self.backbone(image)
        aligned = [align(f) for align, f in zip(self.align, feats)]
        if self.reference_guided:
            r_prime = self.prior(descriptor)
            aligned = [
                modulate(f, scale_modulation_weight(f, r_prime, self.tau_min), r_prime)
                for f in aligned
            ]
        common = [
            f
            if f.shape[-1] == self.grid
            else F.interpolate(f, size=(self.grid, self.grid), mode="bilinear", align_corners=False)
            for f in aligned
        ]
        tokens = [self.patch_embed(f) for f in common]

        mask = None
        if self.semantic_mask:
            mask = torch.sigmoid(tokens[3].mean(dim=-1))

        encoded = []
        for i in range(3):
            x = tokens[i]
            if self.topdown is not None:
                x = self.topdown[i](x, tokens[i + 1])
            encoded.append(self.encoders[i](x, key_scale=mask if i < 2 else None))
        encoded.append(self.encoders[3](tokens[3]))
        return encoded
