"""Boundary-aware refinement: edge prior, dual branches, selective gated correction.

The refiner consumes pre-sigmoid logit maps and applies the sigmoid once,
after the gated correction, so the output stays a valid probability map and
a closed gate reproduces sigmoid(logits) exactly.
"""

from __future__ import annotations

import torch
import torch.nn as nn
from torch import Tensor

from .filters import sobel_gradients


class EdgePrior(nn.Module):
    """Fixed Sobel responses of the grayscale image, mixed by one learned conv."""

    def __init__(self):
        super().__init__()
        self.mix = nn.Conv2d(3, 1, 3, padding=1)
        nn.init.zeros_(self.mix.bias)

    def forward(self, image: Tensor) -> Tensor:
        g = sobel_gradients(image)
        mag = torch.sqrt((g * g).sum(dim=1, keepdim=True))
        return self.mix(torch.cat([g, mag], dim=1))


def _branch(hidden: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(2, hidden, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(hidden, hidden, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(hidden, 1, 3, padding=1),
    )


def selective_refine(logits: Tensor, gate: Tensor, delta: Tensor) -> Tensor:
    """sigmoid(logits + gate * delta); identical to sigmoid(logits) where gate is 0."""
    return torch.sigmoid(logits + gate * delta)


class BoundaryRefiner(nn.Module):
    """Gated residual boundary correction, weights shared across scales."""

    def __init__(self, hidden: int = 16):
        super().__init__()
        self.edge_prior = EdgePrior()
        self.attn_branch = _branch(hidden)
        self.refine_branch = _branch(hidden)

    def dual_branch(self, logits: Tensor, edge: Tensor) -> tuple[Tensor, Tensor]:
        """Boundary gate in [0, 1] and an unbounded signed correction map."""
        x = torch.cat([logits, edge], dim=1)
        return torch.sigmoid(self.attn_branch(x)), self.refine_branch(x)

    def forward(self, image: Tensor, logit_maps: list[Tensor]) -> list[Tensor]:
        edge = self.edge_prior(image)
        refined = []
        for logits in logit_maps:
            gate, delta = self.dual_branch(logits, edge)
            refined.append(selective_refine(logits, gate, delta))
        return refined
