"""Run configuration and presets.

``PAPER`` records the full-scale hyperparameters for reference; it is not
runnable on a desk machine. ``DESK`` is the default for everything here.
Config files are JSON or TOML with top-level tables ``train``,
``backbone``, ``lora``, ``codec`` and ``augment``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .backbone.lora import LoRAConfig
from .backbone.model import BackboneConfig
from .codec import CodecConfig
from .errors import ConfigError
from .skeleton.augment import AugmentConfig


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 2
    lr: float = 5e-5
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.95)
    clip_len_range: tuple[int, int] = (49, 121)
    warmup_seconds: float = 1.0
    fps: float = 8.0
    height: int = 32
    width: int = 32
    seed: int = 0
    masked_loss: bool = True
    layout: str = "spatial"  # "temporal" is the temporal-concatenation ablation
    prediction: str = "eps"
    text_guidance: bool = True
    log_every: int = 100
    # desk stand-in for the pretrained foundation model (0 = use the base as is)
    base_steps: int = 0
    base_lr: float = 5e-4
    base_corpus: int = 200

    def __post_init__(self) -> None:
        if self.base_steps < 0 or self.base_corpus < 1:
            raise ConfigError("base_steps must be >= 0 and base_corpus >= 1")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be > 0 and weight_decay >= 0")
        lo, hi = self.clip_len_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad clip_len_range {self.clip_len_range}")
        if self.warmup_seconds != 1.0:
            raise ConfigError("warm-up segment is fixed to one second")
        if self.layout not in ("spatial", "temporal"):
            raise ConfigError(f"unknown layout {self.layout!r}")
        if self.prediction not in ("eps", "flow"):
            raise ConfigError(f"unknown prediction {self.prediction!r}")
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "clip_len_range", tuple(self.clip_len_range))


@dataclass(frozen=True)
class RunPreset:
    train: TrainConfig
    backbone: BackboneConfig
    lora: LoRAConfig
    codec: CodecConfig
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    runnable: bool = True

    def to_dict(self) -> dict:
        return {
            "train": asdict(self.train),
            "backbone": self.backbone.to_dict(),
            "lora": asdict(self.lora),
            "codec": asdict(self.codec),
            "augment": asdict(self.augment),
        }


PAPER = RunPreset(
    train=TrainConfig(steps=50_000, batch_size=2, lr=5e-5, weight_decay=0.01,
                      clip_len_range=(49, 121), height=480, width=480, fps=24.0),
    backbone=BackboneConfig(depth=4, model_dim=128, heads=4),
    lora=LoRAConfig(rank=256),
    codec=CodecConfig(spatial_stride=8, temporal_stride=4, latent_channels=4),
    runnable=False,
)

DESK = RunPreset(
    train=TrainConfig(steps=2000, batch_size=2, lr=2e-3, weight_decay=0.01,
                      clip_len_range=(13, 25), height=32, width=32, fps=8.0,
                      prediction="flow", base_steps=5000),
    backbone=BackboneConfig(depth=4, model_dim=128, heads=4, latent_channels=16),
    lora=LoRAConfig(rank=4),
    codec=CodecConfig(spatial_stride=4, temporal_stride=4, latent_channels=16, hidden=128),
)

PRESETS = {"desk": DESK, "paper": PAPER}

_SECTIONS = {
    "train": TrainConfig,
    "backbone": BackboneConfig,
    "lora": LoRAConfig,
    "codec": CodecConfig,
    "augment": AugmentConfig,
}


def _coerce(value: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def _replace(obj, updates: dict, section: str):
    names = {f.name for f in fields(obj)}
    unknown = set(updates) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    conv = {}
    for k, v in updates.items():
        conv[k] = tuple(v) if isinstance(v, list) else v
    try:
        return replace(obj, **conv)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from e


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    preset: str = "desk",
) -> RunPreset:
    """Preset, then config file, then ``section.key=value`` overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    base = PRESETS[preset]
    data: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
            data = tomllib.loads(text) if p.suffix == ".toml" else json.loads(text)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot parse config {p}: {e}") from e
    for item in overrides or []:
        key, sep, val = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        data.setdefault(section, {})[name] = _coerce(val)
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    parts = {name: getattr(base, name) for name in _SECTIONS}
    for name, updates in data.items():
        parts[name] = _replace(parts[name], updates, name)
    return RunPreset(**parts, runnable=base.runnable)
