"""Fixed Sobel filtering shared by the evidence head, edge prior and losses."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor

# Horizontal-gradient kernel; the vertical one is its transpose.
SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))


def sobel_kernels(dtype: torch.dtype, device: torch.device) -> Tensor:
    """The (2, 1, 3, 3) stacked gx/gy kernel pair."""
    gx = torch.tensor(SOBEL_X, dtype=dtype, device=device)
    return torch.stack([gx, gx.t()]).unsqueeze(1)


def sobel_gradients(x: Tensor) -> Tensor:
    """Per-channel-mean Sobel responses of a (B, C, H, W) map.

    Returns (B, 2, H, W) with the gx and gy responses of the channel mean,
    zero-padded so shape is preserved.
    """
    gray = x.mean(dim=1, keepdim=True)
    kernels = sobel_kernels(x.dtype, x.device)
    return F.conv2d(gray, kernels, padding=1)


def sobel_magnitude(x: Tensor) -> Tensor:
    """sqrt(gx^2 + gy^2) of the channel mean, shape (B, 1, H, W)."""
    g = sobel_gradients(x)
    return torch.sqrt((g * g).sum(dim=1, keepdim=True))
