"""Synthetic camouflage scenes, reference pooling, and folder loading.

A scene carries blobs of two texture classes camouflaged into a third
background class; the references decide which class is the target, so the
referring pathway is required to resolve the ground truth. Generation is
fully deterministic given the seed. Folder layout (PNG only for masks):

    <root>/<split>/<category>/camo/images/*.png|jpg
    <root>/<split>/<category>/camo/masks/*.png
    <root>/<split>/<category>/ref/images/*.png|jpg
    <root>/<split>/<category>/ref/masks/*.png
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
import torch
import torch.nn.functional as F
from PIL import Image
from torch import Tensor

log = logging.getLogger(__name__)

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class Sample:
    query: np.ndarray  # (3, H, W) float32 in [0, 1]
    references: list[tuple[np.ndarray, np.ndarray]]  # [(image, binary mask)]
    gt_mask: np.ndarray  # (H, W) float32 in {0, 1}
    id: str
    category: str = ""


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    n_classes: int = 6
    objects: int = 1
    similarity: float = 0.5
    n_references: int = 2
    paired: bool = True
    radius: tuple[float, float] = (9.0, 14.0)

    def __post_init__(self) -> None:
        if self.objects < 1:
            raise ValueError("objects must be >= 1")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError("similarity must lie in [0, 1]")
        if self.n_classes < 3:
            raise ValueError("need at least 3 texture classes")
        # Worst-case blob diameter incl. wobble must fit inside the image.
        if 2.6 * self.radius[1] >= self.image_size:
            raise ValueError("object radius too large for the image size")


def _class_params(k: int, n_classes: int) -> tuple[np.ndarray, float, float]:
    rng = np.random.default_rng(7919 + k)
    color = rng.uniform(0.3, 0.7, size=3)
    angle = math.pi * (k + rng.uniform(0.0, 0.4)) / n_classes
    freq = rng.uniform(3.5, 7.5)
    return color, angle, freq


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int = 8) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(cells, cells))
    return ndi.zoom(coarse, (h / cells, w / cells), order=1, mode="nearest")


def class_texture(k: int, rng: np.random.Generator, h: int, w: int, n_classes: int) -> np.ndarray:
    """A (3, h, w) procedural texture from class k's grating family."""
    color, angle, freq = _class_params(k, n_classes)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    proj = (xx * math.cos(angle) + yy * math.sin(angle)) / max(h, w)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    noise = 0.06 * _smooth_noise(rng, h, w)
    tex = np.empty((3, h, w), dtype=np.float64)
    for c in range(3):
        grating = np.sin(2.0 * math.pi * freq * proj + phase + c * 2.1)
        tex[c] = color[c] + 0.22 * grating + noise
    return np.clip(tex, 0.02, 0.98)


def _blob_mask(
    rng: np.random.Generator,
    h: int,
    w: int,
    radius: tuple[float, float],
    forbidden: np.ndarray | None,
) -> np.ndarray:
    """Exact binary star-convex blob avoiding `forbidden`; shrinks on failure."""
    lo, hi = radius
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for attempt in range(200):
        shrink = 0.9 ** (attempt // 40)
        r0 = rng.uniform(lo, hi) * shrink
        margin = 1.3 * r0 + 2.0
        cy = rng.uniform(margin, h - margin)
        cx = rng.uniform(margin, w - margin)
        amps = rng.uniform(0.0, 0.1, size=3)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
        phi = np.arctan2(yy - cy, xx - cx)
        rad = r0 * (1.0 + sum(a * np.cos((j + 2) * phi + p) for j, (a, p) in enumerate(zip(amps, phases))))
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) <= rad**2
        if forbidden is not None and (mask & forbidden).any():
            continue
        if mask.any():
            return mask
    raise ValueError("could not place a blob; lower the object count or radius")


def _place_blobs(
    rng: np.random.Generator,
    cfg: SynthConfig,
    count: int,
    forbidden: np.ndarray,
) -> np.ndarray:
    acc = np.zeros((cfg.image_size, cfg.image_size), dtype=bool)
    for _ in range(count):
        blob = _blob_mask(rng, cfg.image_size, cfg.image_size, cfg.radius, forbidden | acc)
        acc |= blob
    return acc


def _reference_view(
    k: int, rng: np.random.Generator, cfg: SynthConfig
) -> tuple[np.ndarray, np.ndarray]:
    h = w = cfg.image_size
    bg = 0.5 + 0.05 * _smooth_noise(rng, h, w)
    img = np.repeat(bg[None, :, :], 3, axis=0)
    blob = _blob_mask(rng, h, w, cfg.radius, None)
    img = np.where(blob[None], class_texture(k, rng, h, w, cfg.n_classes), img)
    return np.clip(img, 0.0, 1.0).astype(np.float32), blob.astype(np.float32)


def synth_generate(cfg: SynthConfig, seed: int, count: int) -> list[Sample]:
    """Deterministic referring-camouflage samples.

    Each scene holds blobs of two non-background classes; the two paired
    views share the query pixel-for-pixel and differ only in which class the
    references (and hence the ground truth) select. With `paired=False` only
    the first view of each scene is emitted and the second class acts as a
    pure distractor.
    """
    rng = np.random.default_rng(seed)
    h = w = cfg.image_size
    mix = 0.85 * cfg.similarity
    samples: list[Sample] = []
    scene = 0
    while len(samples) < count:
        cls_bg, cls_a, cls_b = rng.choice(cfg.n_classes, size=3, replace=False)
        bg = class_texture(cls_bg, rng, h, w, cfg.n_classes)
        mask_a = _place_blobs(rng, cfg, cfg.objects, np.zeros((h, w), dtype=bool))
        mask_b = _place_blobs(rng, cfg, cfg.objects, mask_a)
        img = bg.copy()
        for cls, mask in ((cls_a, mask_a), (cls_b, mask_b)):
            tex = (1.0 - mix) * class_texture(cls, rng, h, w, cfg.n_classes) + mix * bg
            img = np.where(mask[None], tex, img)
        img = img.astype(np.float32)
        refs_a = [_reference_view(cls_a, rng, cfg) for _ in range(cfg.n_references)]
        refs_b = [_reference_view(cls_b, rng, cfg) for _ in range(cfg.n_references)]
        for tag, cls, mask, refs in (("a", cls_a, mask_a, refs_a), ("b", cls_b, mask_b, refs_b)):
            if len(samples) >= count:
                break
            samples.append(
                Sample(
                    query=img,
                    references=refs,
                    gt_mask=mask.astype(np.float32),
                    id=f"synth{seed}-{scene:04d}{tag}",
                    category=f"class{cls}",
                )
            )
            if not cfg.paired:
                break
        scene += 1
    return samples


def masked_descriptor(refs, feature_fn) -> Tensor:
    """Mean over references of foreground-masked average pooling of a feature map.

    References with empty masks are skipped; raises if every mask is empty.
    Returns a (C, 1, 1) tensor; invariant to reference order and duplication.
    """
    pooled = []
    for image, mask in refs:
        if not torch.is_tensor(image):
            image = torch.from_numpy(np.asarray(image))
        if not torch.is_tensor(mask):
            mask = torch.from_numpy(np.asarray(mask))
        if float(mask.sum()) == 0.0:
            log.warning("skipping reference with an empty mask")
            continue
        fm = feature_fn(image.unsqueeze(0))
        weights = F.adaptive_avg_pool2d(
            mask.reshape(1, 1, *mask.shape[-2:]).to(fm.dtype), fm.shape[-2:]
        )
        total = weights.sum()
        if float(total) == 0.0:
            continue
        pooled.append((fm * weights).sum(dim=(2, 3)).squeeze(0) / total)
    if not pooled:
        raise ValueError("no reference with a non-empty mask")
    return torch.stack(pooled).mean(dim=0).reshape(-1, 1, 1)


# ---------------------------------------------------------------------------
# PNG folder round trip
# ---------------------------------------------------------------------------


def _save_image(path: Path, array: np.ndarray) -> None:
    chw = np.clip(array, 0.0, 1.0)
    u8 = (chw.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(u8).save(path)


def _save_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255).save(path)


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return rgb.transpose(2, 0, 1)


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"))
    return (gray >= 128).astype(np.float32)


def save_dataset(samples: list[Sample], root, split: str) -> Path:
    """Write samples into the category folder layout; references are pooled
    per category."""
    base = Path(root) / split
    seen_refs: dict[str, int] = {}
    for s in samples:
        cat = base / (s.category or "uncategorized")
        for sub in ("camo/images", "camo/masks", "ref/images", "ref/masks"):
            (cat / sub).mkdir(parents=True, exist_ok=True)
        _save_image(cat / "camo" / "images" / f"{s.id}.png", s.query)
        _save_mask(cat / "camo" / "masks" / f"{s.id}.png", s.gt_mask)
        start = seen_refs.get(s.category, 0)
        for j, (img, mask) in enumerate(s.references):
            name = f"ref{start + j:04d}.png"
            _save_image(cat / "ref" / "images" / name, img)
            _save_mask(cat / "ref" / "masks" / name, mask)
        seen_refs[s.category] = start + len(s.references)
    return base


def load_folder(path) -> list[Sample]:
    """Enumerate a split directory into samples with category-matched references.

    Query images missing a mask are skipped with a warning; unreadable files
    are reported per item and never abort the run.
    """
    base = Path(path)
    samples: list[Sample] = []
    if not base.exists():
        return samples
    for cat_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        refs: list[tuple[np.ndarray, np.ndarray]] = []
        ref_images = cat_dir / "ref" / "images"
        if ref_images.is_dir():
            for img_path in sorted(ref_images.iterdir()):
                if img_path.suffix.lower() not in _IMAGE_SUFFIXES:
                    continue
                mask_path = cat_dir / "ref" / "masks" / f"{img_path.stem}.png"
                if not mask_path.exists():
                    log.warning("reference %s has no mask; skipped", img_path)
                    continue
                try:
                    refs.append((_load_image(img_path), _load_mask(mask_path)))
                except OSError as exc:
                    log.warning("unreadable reference %s: %s", img_path, exc)
        camo_images = cat_dir / "camo" / "images"
        if not camo_images.is_dir():
            continue
        for img_path in sorted(camo_images.iterdir()):
            if img_path.suffix.lower() not in _IMAGE_SUFFIXES:
                continue
            mask_path = cat_dir / "camo" / "masks" / f"{img_path.stem}.png"
            if not mask_path.exists():
                log.warning("image %s has no mask; skipped", img_path)
                continue
            try:
                query = _load_image(img_path)
                gt = _load_mask(mask_path)
            except OSError as exc:
                log.warning("unreadable item %s: %s", img_path, exc)
                continue
            samples.append(
                Sample(
                    query=query,
                    references=refs,
                    gt_mask=gt,
                    id=img_path.stem,
                    category=cat_dir.name,
                )
            )
    return samples
