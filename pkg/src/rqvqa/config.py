"""Run configuration: a flat key=value text file plus per-command overrides.

Example:

    # lines starting with # are comments
    seed = 7
    registry = toy
    train.learning_rate = 1e-4
    train.hidden = 512
    gms.grid_count = 4
    gms.patch_size = 8
    split.grouping = by-scene
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .features import ExtractionConfig, SourceRegistry, backbone_registry, toy_registry
from .fusion import TrainConfig


@dataclass(frozen=True)
class PreprocConfig:
    keyframe_min_side: int = 384
    keyframe_crop: int = 384
    crop_mode: str = "center"
    crop_seed: int = 0
    chunk_size: int = 224


@dataclass(frozen=True)
class SplitConfig:
    ratio: float = 0.8
    grouping: str = "by-scene"


@dataclass(frozen=True)
class RegistryConfig:
    kind: str = "toy"            # toy | backbone
    spatial_dim: int = 1024
    temporal_dim: int = 256
    lmm_dim: int = 4096
    spatiotemporal_dim: int = 768
    spatial_tokens: int = 0      # > 0 enables learnable attention pooling


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    preproc: PreprocConfig = field(default_factory=PreprocConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    registry: RegistryConfig = field(default_factory=RegistryConfig)
    ensemble_combiner: str = "mean"

    def build_registry(self) -> SourceRegistry:
        if self.registry.kind == "toy":
            return toy_registry()
        if self.registry.kind == "backbone":
            return backbone_registry(
                spatial_dim=self.registry.spatial_dim,
                temporal_dim=self.registry.temporal_dim,
                lmm_dim=self.registry.lmm_dim,
                spatiotemporal_dim=self.registry.spatiotemporal_dim,
                spatial_tokens=self.registry.spatial_tokens)
        raise ConfigError(f"unknown registry kind {self.registry.kind!r}")


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# key -> (section attr or None for top level, field name, parser)
_KEYS = {
    "seed": (None, "seed", int),
    "ensemble.combiner": (None, "ensemble_combiner", str),
    "registry": ("registry", "kind", str),
    "registry.spatial_dim": ("registry", "spatial_dim", int),
    "registry.temporal_dim": ("registry", "temporal_dim", int),
    "registry.lmm_dim": ("registry", "lmm_dim", int),
    "registry.spatiotemporal_dim": ("registry", "spatiotemporal_dim", int),
    "registry.spatial_tokens": ("registry", "spatial_tokens", int),
    "train.learning_rate": ("train", "learning_rate", float),
    "train.batch_size": ("train", "batch_size", int),
    "train.epochs": ("train", "epochs", int),
    "train.lr_decay_factor": ("train", "lr_decay_factor", float),
    "train.lr_decay_epoch": ("train", "lr_decay_epoch", int),
    "train.beta1": ("train", "beta1", float),
    "train.beta2": ("train", "beta2", float),
    "train.eps": ("train", "eps", float),
    "train.seed": ("train", "seed", int),
    "train.loss": ("train", "loss", str),
    "train.hidden": ("train", "hidden", int),
    "train.activation": ("train", "activation", str),
    "train.mhsa_heads": ("train", "mhsa_heads", int),
    "gms.grid_count": ("extraction", "gms_grid_count", int),
    "gms.patch_size": ("extraction", "gms_patch_size", int),
    "gms.seed": ("extraction", "gms_seed", int),
    "gms.all_frames": ("extraction", "gms_all_frames", _parse_bool),
    "preproc.keyframe_min_side": ("preproc", "keyframe_min_side", int),
    "preproc.keyframe_crop": ("preproc", "keyframe_crop", int),
    "preproc.crop_mode": ("preproc", "crop_mode", str),
    "preproc.crop_seed": ("preproc", "crop_seed", int),
    "preproc.chunk_size": ("preproc", "chunk_size", int),
    "split.ratio": ("split", "ratio", float),
    "split.grouping": ("split", "grouping", str),
}


def _parse_setting(key: str, value: str):
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    section, attr, parse = _KEYS[key]
    try:
        return section, attr, parse(value)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def load_config(path: str | Path | None = None,
                overrides: list[str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file and key=value overrides.

    All settings are collected before any dataclass is constructed, so
    validation sees the final values regardless of key order.
    """
    settings: dict[str | None, dict[str, object]] = {}

    def collect(key: str, value: str):
        section, attr, parsed = _parse_setting(key.strip(), value.strip())
        settings.setdefault(section, {})[attr] = parsed

    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            collect(key, value)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r}: expected key=value")
        collect(key, value)

    cfg = RunConfig(
        train=TrainConfig(**settings.get("train", {})),
        extraction=ExtractionConfig(**settings.get("extraction", {})),
        preproc=PreprocConfig(**settings.get("preproc", {})),
        split=SplitConfig(**settings.get("split", {})),
        registry=RegistryConfig(**settings.get("registry", {})),
        **settings.get(None, {}),
    )
    return cfg
