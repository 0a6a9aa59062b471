"""Run configuration: flat INI text format, fingerprinting, named profiles."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import typing
from dataclasses import dataclass

from .data import SynthConfig
from .losses import LossWeights
from .model import ModelConfig


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # "synthetic" | "folder"
    folder: str = ""
    count: int = 20
    image_size: int = 64
    n_classes: int = 6
    objects: int = 1
    similarity: float = 0.5
    n_references: int = 2
    paired: bool = True

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "folder"):
            raise ValueError(f"unknown data source {self.source!r}")

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            image_size=self.image_size,
            n_classes=self.n_classes,
            objects=self.objects,
            similarity=self.similarity,
            n_references=self.n_references,
            paired=self.paired,
        )


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    loss: LossWeights = LossWeights()
    data: DataConfig = DataConfig()
    base_lr: float = 2e-3
    backbone_lr_scale: float = 0.1
    lr_floor: float = 0.0
    epochs: int = 100
    batch_size: int = 4
    t_max: int = 0  # 0 -> use epochs
    checkpoint_every: int = 50  # epochs
    seed: int = 0
    n_bins: int = 10
    out_dir: str = "runs/toy"

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def schedule_t_max(self) -> int:
        return self.t_max if self.t_max > 0 else self.epochs


_SECTIONS: dict[str, type | None] = {
    "model": ModelConfig,
    "loss": LossWeights,
    "data": DataConfig,
    "run": None,  # flat RunConfig fields
}

_RUN_FIELDS = (
    "base_lr",
    "backbone_lr_scale",
    "lr_floor",
    "epochs",
    "batch_size",
    "t_max",
    "checkpoint_every",
    "seed",
    "n_bins",
    "out_dir",
)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, hint):
    origin = typing.get_origin(hint)
    if origin in (tuple, list):
        args = typing.get_args(hint)
        elem = args[0] if args else str
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_parse_value(p, elem) for p in parts)
    if hint is bool:
        lowered = text.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def config_to_text(cfg: RunConfig) -> str:
    """Canonical INI rendering: fixed section order, sorted keys."""
    out = io.StringIO()
    for section, cls in _SECTIONS.items():
        out.write(f"[{section}]\n")
        if cls is None:
            for name in sorted(_RUN_FIELDS):
                out.write(f"{name} = {_format_value(getattr(cfg, name))}\n")
        else:
            sub = getattr(cfg, section)
            for f in sorted(dataclasses.fields(cls), key=lambda f: f.name):
                out.write(f"{f.name} = {_format_value(getattr(sub, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def config_from_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if cls is None:
            continue
        hints = typing.get_type_hints(cls)
        sub_kwargs = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in hints:
                    raise ValueError(f"unknown key {key!r} in section [{section}]")
                sub_kwargs[key] = _parse_value(raw, hints[key])
        kwargs[section] = cls(**sub_kwargs)
    run_hints = typing.get_type_hints(RunConfig)
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in _RUN_FIELDS:
                raise ValueError(f"unknown key {key!r} in section [run]")
            kwargs[key] = _parse_value(raw, run_hints[key])
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


def fingerprint(cfg: RunConfig) -> str:
    """Stable hash of the canonical config text (out_dir excluded)."""
    text = "\n".join(
        line
        for line in config_to_text(cfg).splitlines()
        if not line.startswith("out_dir")
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply "section.key=value" strings on top of a config."""
    updates: dict[str, dict[str, str]] = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        updates.setdefault(section, {})[key.strip()] = value.strip()
    for section, pairs in updates.items():
        if section == "run":
            hints = typing.get_type_hints(RunConfig)
            parsed = {k: _parse_value(v, hints[k]) for k, v in pairs.items()}
            cfg = dataclasses.replace(cfg, **parsed)
        elif section in _SECTIONS and _SECTIONS[section] is not None:
            cls = _SECTIONS[section]
            hints = typing.get_type_hints(cls)
            for key in pairs:
                if key not in hints:
                    raise ValueError(f"unknown key {key!r} in section [{section}]")
            parsed = {k: _parse_value(v, hints[k]) for k, v in pairs.items()}
            cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **parsed)})
        else:
            raise ValueError(f"unknown config section {section!r}")
    return cfg


def toy_config() -> RunConfig:
    """Desk-scale defaults: 64x64 images, 500 optimizer steps, seconds-fast model."""
    return RunConfig()


def paper_scale_config() -> RunConfig:
    """Named profile mirroring the full-scale training recipe; not a desk default."""
    return RunConfig(
        model=ModelConfig(
            backbone_channels=(64, 128, 320, 512),
            ref_dim=64,
            c_align=64,
            grid=88,
            patch=4,
            dim=1024,
            heads=8,
        ),
        data=DataConfig(image_size=352, count=64),
        base_lr=1e-4,
        epochs=150,
        batch_size=16,
        checkpoint_every=10,
        out_dir="runs/paper-scale",
    )


PROFILES = {"toy": toy_config, "paper-scale": paper_scale_config}
