"""Hybrid training objective: boundary-weighted evidential loss with focal
regularization plus structural (weighted BCE + weighted IoU) supervision on
the decoder and refined prediction maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .decoder import DecodeState
from .dirichlet import DirichletField, dirichlet_probability, evidential_nll
from .filters import sobel_magnitude


@dataclass(frozen=True)
class LossWeights:
    omega: tuple[float, float] = (1.0, 0.5)
    eta: tuple[float, float] = (1.0, 0.5)
    kappa: float = 0.5
    lambda_focal: float = 0.1
    beta_bnd: float = 4.0
    gamma_focal: float = 2.0
    structural_mu: float = 5.0
    structural_kernel: int = 31

    def __post_init__(self) -> None:
        values = (*self.omega, *self.eta, self.kappa, self.lambda_focal, self.beta_bnd)
        if any(v < 0 for v in values):
            raise ValueError("loss weights must be non-negative")
        if not any(v > 0 for v in (*self.omega, *self.eta)):
            raise ValueError("at least one structural weight must be positive")


@dataclass
class LossReport:
    """Decomposed objective. `total` keeps the graph for backward."""

    total: Tensor
    structural_per_scale: list[float]
    structural_refined: list[float]
    evidential: float
    focal: float


def boundary_weight_map(gt: Tensor, beta: float) -> Tensor:
    """1 + beta * (Sobel magnitude of the mask, max-normalized per image).

    Interior and background pixels keep weight 1; the strongest boundary
    response gets 1 + beta. An all-constant mask yields all ones.
    """
    mag = sobel_magnitude(gt)
    peak = mag.amax(dim=(1, 2, 3), keepdim=True)
    return 1.0 + beta * mag / torch.where(peak > 0, peak, torch.ones_like(peak))


def downsample_mask(gt: Tensor, size: tuple[int, int]) -> Tensor:
    """Area-pool a binary mask to `size` and re-threshold at 0.5."""
    pooled = F.adaptive_avg_pool2d(gt, size)
    return (pooled >= 0.5).to(gt.dtype)


def focal_term(prob: Tensor, gt: Tensor, gamma: float) -> Tensor:
    """Per-pixel focal penalty -(1 - p_t)^gamma * log(p_t) on the Dirichlet mean."""
    eps = torch.finfo(prob.dtype).eps
    p_t = torch.where(gt > 0.5, prob, 1.0 - prob).clamp(eps, 1.0)
    return -((1.0 - p_t) ** gamma) * torch.log(p_t)


def evidential_loss(
    dirichlet: DirichletField,
    gt: Tensor,
    w_bnd: Tensor,
    lambda_focal: float,
    gamma_focal: float,
) -> Tensor:
    """mean(w_bnd * (psi(S) - psi(alpha_y))) + lambda * mean(focal).

    `gt` and `w_bnd` must already live on the Dirichlet field's grid.
    """
    if gt.dim() == dirichlet.alpha.dim() - 1:
        gt = gt.unsqueeze(1)
    nll = evidential_nll(dirichlet, gt)
    prob = dirichlet_probability(dirichlet)
    return (w_bnd * nll).mean() + lambda_focal * focal_term(prob, gt, gamma_focal).mean()


def structural_loss(pred: Tensor, gt: Tensor, mu: float = 5.0, kernel: int = 31) -> Tensor:
    """Weighted BCE + weighted IoU over a probability map.

    Pixel weights 1 + mu * |avgpool_k(gt) - gt| emphasize locations that
    disagree with their neighborhood; `kernel=1` disables the weighting.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    weight = 1.0 + mu * (F.avg_pool2d(gt, kernel, stride=1, padding=kernel // 2) - gt).abs()
    eps = torch.finfo(pred.dtype).eps
    p = pred.clamp(eps, 1.0 - eps)
    bce = -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p))
    wbce = (weight * bce).sum(dim=(2, 3)) / weight.sum(dim=(2, 3))
    inter = (pred * gt * weight).sum(dim=(2, 3))
    union = ((pred + gt) * weight).sum(dim=(2, 3))
    wiou = 1.0 - (inter + 1.0) / (union - inter + 1.0)
    return (wbce + wiou).mean()


def total_loss(
    state: DecodeState,
    refined: list[Tensor],
    gt: Tensor,
    weights: LossWeights,
) -> LossReport:
    """Weighted sum over the two supervised decoder scales, their refined
    counterparts, and the evidential term."""
    if len(state.predictions) < len(weights.omega):
        raise ValueError("decode state carries fewer predictions than supervised scales")
    if len(refined) < len(weights.eta):
        raise ValueError("fewer refined maps than supervised scales")
    if gt.dim() == 3:
        gt = gt.unsqueeze(1)

    mu, k = weights.structural_mu, weights.structural_kernel
    str_scales = [structural_loss(state.predictions[i], gt, mu, k) for i in range(len(weights.omega))]
    str_refined = [structural_loss(refined[j], gt, mu, k) for j in range(len(weights.eta))]

    if state.dirichlet is not None and weights.kappa > 0:
        grid = state.dirichlet.alpha.shape[-2:]
        gt_small = downsample_mask(gt, grid)
        w_bnd = boundary_weight_map(gt_small, weights.beta_bnd)
        evid = evidential_loss(
            state.dirichlet, gt_small, w_bnd, weights.lambda_focal, weights.gamma_focal
        )
        focal = focal_term(
            dirichlet_probability(state.dirichlet), gt_small, weights.gamma_focal
        ).mean()
    else:
        evid = gt.new_zeros(())
        focal = gt.new_zeros(())

    total = (
        sum(w * l for w, l in zip(weights.omega, str_scales))
        + sum(w * l for w, l in zip(weights.eta, str_refined))
        + weights.kappa * evid
    )
    return LossReport(
        total=total,
        structural_per_scale=[float(l) for l in str_scales],
        structural_refined=[float(l) for l in str_refined],
        evidential=float(evid),
        focal=float(focal),
    )
