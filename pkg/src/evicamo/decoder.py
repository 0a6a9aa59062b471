"""Uncertainty-aware evidential decoder.

Decoding starts at the coarsest token sequence: an evidence head yields a
two-class Dirichlet field whose confidence map steers attention during the
coarse-to-fine refinement cascade. Every scale emits a full-resolution
prediction map; the Dirichlet field is kept for the loss and calibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .dirichlet import (
    DirichletField,
    UncertaintyWeights,
    confidence_map,
    dirichlet_uncertainty,
    evidence_to_dirichlet,
)
from .filters import sobel_gradients


def tokens_to_map(x: Tensor) -> Tensor:
    """(B, N, D) -> (B, D, g, g) with g = sqrt(N)."""
    b, n, d = x.shape
    g = math.isqrt(n)
    if g * g != n:
        raise ValueError(f"token count {n} is not a square grid")
    return x.transpose(1, 2).reshape(b, d, g, g)


def map_to_tokens(x: Tensor) -> Tensor:
    """(B, C, g, g) -> (B, g*g, C)."""
    return x.flatten(2).transpose(1, 2)


class EvidenceHead(nn.Module):
    """Two parallel conv branches (semantic + Sobel response) -> softplus evidence."""

    def __init__(self, dim: int, hidden: int = 16):
        super().__init__()
        self.semantic = nn.Sequential(
            nn.Conv2d(dim, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 2, 3, padding=1),
        )
        self.boundary = nn.Sequential(
            nn.Conv2d(2, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 2, 3, padding=1),
        )

    def forward(self, feat: Tensor) -> Tensor:
        return F.softplus(self.semantic(feat) + self.boundary(sobel_gradients(feat)))


class UncertaintyEmbedding(nn.Module):
    """Pointwise two-layer MLP lifting a scalar uncertainty field to D-dim tokens."""

    def __init__(self, dim: int, hidden: int = 32):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(1, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, u_tokens: Tensor) -> Tensor:
        return self.mlp(u_tokens)


class EvidenceGuidedAttention(nn.Module):
    """Single-head cross attention with confidence-rescaled logits.

    A = softmax((Q K^T / sqrt(D)) * (1 + w_u * C)), M = A V, where C is a
    per-key confidence in [0, 1]. `w_u` starts at 0 so training begins at
    standard attention. With `confidence=None` the rescaling is skipped
    entirely, which is the standard-attention reference path.
    """

    def __init__(self, dim: int, kv_dim: int | None = None):
        super().__init__()
        kv_dim = dim if kv_dim is None else kv_dim
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kv_dim, dim)
        self.v_proj = nn.Linear(kv_dim, dim)
        self.w_u = nn.Parameter(torch.zeros(()))

    def forward(self, query: Tensor, features: Tensor, confidence: Tensor | None = None) -> Tensor:
        q = self.q_proj(query)
        k = self.k_proj(features)
        v = self.v_proj(features)
        logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        if confidence is not None:
            if confidence.shape[-1] != logits.shape[-1]:
                raise ValueError("confidence length does not match key count")
            logits = logits * (1.0 + self.w_u * confidence[:, None, :])
        return F.softmax(logits, dim=-1) @ v


class GatedResidual(nn.Module):
    """s + act(G(concat(s, m))) * m with a sigmoid (default) or softmax gate."""

    def __init__(self, dim: int, mode: str = "sigmoid"):
        super().__init__()
        if mode not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown gate mode {mode!r}")
        self.mode = mode
        self.gate = nn.Linear(2 * dim, dim)

    def forward(self, s: Tensor, m: Tensor) -> Tensor:
        z = self.gate(torch.cat([s, m], dim=-1))
        a = torch.sigmoid(z) if self.mode == "sigmoid" else F.softmax(z, dim=-1)
        return s + a * m


class PredictionHead(nn.Module):
    """Tokens -> single-channel logit map on the pre-patch grid."""

    def __init__(self, dim: int, patch: int):
        super().__init__()
        self.expand = nn.ConvTranspose2d(dim, 1, kernel_size=patch, stride=patch)

    def forward(self, tokens: Tensor) -> Tensor:
        return self.expand(tokens_to_map(tokens))


@dataclass
class DecodeState:
    """Everything the decoder produces, finest scale first in each list."""

    refined: list[Tensor]
    logits: list[Tensor]
    predictions: list[Tensor]
    dirichlet: DirichletField | None = None
    uncertainty: Tensor | None = None
    confidence: Tensor | None = None
    uncertainty_embedding: Tensor | None = None
    evidence: Tensor | None = None


class EvidentialDecoder(nn.Module):
    """Coarse-to-fine decoder over four same-grid token sequences.

    With `evidential=False` the evidence pathway is dropped: attention
    queries come from the token features themselves and no Dirichlet field
    is produced (plain-attention baseline decoder).
    """

    def __init__(
        self,
        dim: int,
        patch: int,
        evidence_hidden: int = 16,
        weights: UncertaintyWeights | None = None,
        gate_mode: str = "sigmoid",
        evidential: bool = True,
    ):
        super().__init__()
        self.evidential = evidential
        self.weights = weights or UncertaintyWeights()
        if evidential:
            self.evidence_head = EvidenceHead(dim, evidence_hidden)
            self.u_embed = UncertaintyEmbedding(dim)
        else:
            self.evidence_head = None
            self.u_embed = None
        self.ega_coarse = EvidenceGuidedAttention(dim)
        self.gate_coarse = GatedResidual(dim, gate_mode)
        # One shared refinement block for the three finer scales.
        self.ega_refine = EvidenceGuidedAttention(dim, kv_dim=2 * dim)
        self.gate_refine = GatedResidual(dim, gate_mode)
        self.heads = nn.ModuleList(PredictionHead(dim, patch) for _ in range(4))

    def refine_scale(
        self,
        s_i: Tensor,
        s_next_refined: Tensor,
        query: Tensor,
        confidence: Tensor | None,
    ) -> Tensor:
        fused = torch.cat([s_i, s_next_refined], dim=-1)
        m = self.ega_refine(query, fused, confidence)
        return self.gate_refine(s_i, m)

    def forward(self, encoded: list[Tensor], out_size: tuple[int, int]) -> DecodeState:
        s4 = encoded[3]
        if self.evidential:
            evidence = self.evidence_head(tokens_to_map(s4))
            dirichlet = evidence_to_dirichlet(evidence)
            u = dirichlet_uncertainty(dirichlet, self.weights)
            conf = confidence_map(u)
            conf_tokens = conf.flatten(2).squeeze(1)
            u_emb = self.u_embed(map_to_tokens(u))
            query = u_emb
        else:
            evidence = dirichlet = u = conf = conf_tokens = u_emb = None
            query = s4

        refined: list[Tensor | None] = [None, None, None, None]
        m4 = self.ega_coarse(query, s4, conf_tokens)
        refined[3] = self.gate_coarse(s4, m4)
        for i in (2, 1, 0):
            q_i = u_emb if self.evidential else encoded[i]
            refined[i] = self.refine_scale(encoded[i], refined[i + 1], q_i, conf_tokens)

        logits = [
            F.interpolate(self.heads[i](refined[i]), size=out_size, mode="bilinear", align_corners=False)
            for i in range(4)
        ]
        return DecodeState(
            refined=refined,
            logits=logits,
            predictions=[torch.sigmoid(l) for l in logits],
            dirichlet=dirichlet,
            uncertainty=u,
            confidence=conf,
            uncertainty_embedding=u_emb,
            evidence=evidence,
        )
