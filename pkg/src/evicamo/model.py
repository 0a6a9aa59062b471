"""Full referring-segmentation model: descriptor net + encoder + decoder + refiner."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

from .boundary import BoundaryRefiner
from .data import masked_descriptor
from .decoder import DecodeState, EvidentialDecoder
from .dirichlet import UncertaintyWeights
from .encoder import ReferenceGuidedEncoder


@dataclass(frozen=True)
class ModelConfig:
    backbone_channels: tuple[int, int, int, int] = (16, 32, 48, 64)
    ref_dim: int = 16
    c_align: int = 32
    grid: int = 16
    patch: int = 4
    dim: int = 64
    heads: int = 4
    gamma: float = 0.1
    tau_min: float = 0.1
    offset_mode: str = "spatial"
    semantic_mask: bool = True
    evidence_hidden: int = 16
    barm_hidden: int = 16
    lambda1: float = 0.9
    lambda2: float = 1.2
    gate_mode: str = "sigmoid"
    reference_guided: bool = True
    evidential: bool = True
    boundary_refine: bool = True


class ReferenceFeatureNet(nn.Module):
    """Small trainable feature extractor behind the reference descriptor."""

    def __init__(self, ref_dim: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, ref_dim, 3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, image: Tensor) -> Tensor:
        return self.net(image)


@dataclass
class ModelOutput:
    state: DecodeState
    refined: list[Tensor]  # supervised scales, finest first
    final: Tensor  # the model's final prediction map in [0, 1]


class RefCamoModel(nn.Module):
    """End-to-end network mapping (query image, reference descriptor) to masks."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        cfg = self.cfg
        self.ref_features = ReferenceFeatureNet(cfg.ref_dim)
        self.encoder = ReferenceGuidedEncoder(
            backbone_channels=cfg.backbone_channels,
            ref_dim=cfg.ref_dim,
            c_align=cfg.c_align,
            grid=cfg.grid,
            patch=cfg.patch,
            dim=cfg.dim,
            heads=cfg.heads,
            gamma=cfg.gamma,
            tau_min=cfg.tau_min,
            offset_mode=cfg.offset_mode,
            semantic_mask=cfg.semantic_mask,
            reference_guided=cfg.reference_guided,
        )
        self.decoder = EvidentialDecoder(
            dim=cfg.dim,
            patch=cfg.patch,
            evidence_hidden=cfg.evidence_hidden,
            weights=UncertaintyWeights(cfg.lambda1, cfg.lambda2),
            gate_mode=cfg.gate_mode,
            evidential=cfg.evidential,
        )
        self.refiner = BoundaryRefiner(cfg.barm_hidden) if cfg.boundary_refine else None

    def describe(self, references) -> Tensor:
        """(C_r, 1, 1) descriptor for one sample's reference list."""
        return masked_descriptor(references, self.ref_features)

    def describe_batch(self, reference_lists) -> Tensor:
        return torch.stack([self.describe(refs) for refs in reference_lists])

    def forward(self, query: Tensor, descriptor: Tensor) -> ModelOutput:
        encoded = self.encoder(query, descriptor)
        state = self.decoder(encoded, query.shape[-2:])
        if self.refiner is not None:
            refined = self.refiner(query, state.logits[:2])
        else:
            refined = [state.predictions[0], state.predictions[1]]
        return ModelOutput(state=state, refined=refined, final=refined[0])

    def backbone_parameters(self):
        return list(self.encoder.backbone.parameters())

    def head_parameters(self):
        backbone_ids = {id(p) for p in self.encoder.backbone.parameters()}
        return [p for p in self.parameters() if id(p) not in backbone_ids]
