"""Checkpoint directories.

A checkpoint is a directory holding three tensor files (see
``icanim.blobio`` for the byte layout):

* ``base.bin``     frozen backbone weights, header ``{"kind": "base", "config"}``
* ``adapters.bin`` adapter matrices, header ``{"kind": "adapters", "stage",
  "step", "lora", "settings", "base_digest"}``
* ``codec.bin``    the video codec

Adapters live apart from the frozen base, so warm-starting a new stage
is a copy of ``base.bin``/``codec.bin`` plus a fresh ``adapters.bin``.
"""

from __future__ import annotations

import hashlib
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..blobio import read_blob, write_blob
from ..codec import VideoCodec
from ..errors import CheckpointError
from .lora import LoRAConfig, apply_lora, base_state_dict, lora_state_dict
from .model import BackboneConfig, VideoDiT

STAGES = ("pose", "e2e")


@dataclass
class ModelBundle:
    """Everything needed to run or continue training one stage."""

    model: VideoDiT
    codec: VideoCodec
    stage: str
    step: int = 0
    # fps, canvas size, prediction type, layout
    settings: dict = field(default_factory=dict)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def new_bundle(
    backbone: BackboneConfig,
    lora: LoRAConfig,
    codec: VideoCodec,
    stage: str = "pose",
    base: VideoDiT | None = None,
    **settings,
) -> ModelBundle:
    """Adapt ``base`` (a fresh seeded backbone if omitted) and wrap it with its codec."""
    if base is None:
        base = VideoDiT(backbone)
    elif base.cfg != backbone:
        raise CheckpointError("pretrained base does not match the backbone config")
    model = apply_lora(base, lora, seed=backbone.seed + 1)
    return ModelBundle(model, codec, stage, 0, dict(settings))


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> Path:
    if bundle.stage not in STAGES:
        raise CheckpointError(f"unknown stage {bundle.stage!r}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_blob(path / "base.bin", {"kind": "base", "config": bundle.model.cfg.to_dict()},
               base_state_dict(bundle.model))
    bundle.codec.save(path / "codec.bin")
    header = {
        "kind": "adapters",
        "stage": bundle.stage,
        "step": int(bundle.step),
        "lora": asdict(bundle.model.lora_config),
        "settings": bundle.settings,
        "base_digest": _digest(path / "base.bin"),
    }
    write_blob(path / "adapters.bin", header, lora_state_dict(bundle.model))
    return path


def read_stage(path: str | Path) -> str:
    head, _ = read_blob(Path(path) / "adapters.bin")
    return head["stage"]


def load_checkpoint(path: str | Path, expect_stage: str | None = None) -> ModelBundle:
    path = Path(path)
    for name in ("base.bin", "adapters.bin", "codec.bin"):
        if not (path / name).is_file():
            raise CheckpointError(f"{path}: missing {name}")
    bhead, base = read_blob(path / "base.bin")
    ahead, adapters = read_blob(path / "adapters.bin")
    if bhead.get("kind") != "base" or ahead.get("kind") != "adapters":
        raise CheckpointError(f"{path}: unexpected file kinds")
    if ahead.get("stage") not in STAGES:
        raise CheckpointError(f"{path}: unknown stage tag {ahead.get('stage')!r}")
    if expect_stage is not None and ahead["stage"] != expect_stage:
        raise CheckpointError(
            f"{path}: stage tag is {ahead['stage']!r}, expected {expect_stage!r}"
        )
    if ahead.get("base_digest") != _digest(path / "base.bin"):
        raise CheckpointError(f"{path}: adapters were trained against a different base")
    cfg = BackboneConfig.from_dict(bhead["config"])
    model = apply_lora(VideoDiT(cfg), LoRAConfig(**ahead["lora"]), seed=cfg.seed + 1)
    state = dict(base)
    state.update(adapters)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise CheckpointError(f"{path}: missing {missing[:3]} unexpected {unexpected[:3]}")
    model.eval()
    return ModelBundle(model, VideoCodec.load(path / "codec.bin"), ahead["stage"],
                       int(ahead["step"]), dict(ahead.get("settings", {})))


def warm_start(src: str | Path, dst: str | Path, stage: str = "e2e") -> ModelBundle:
    """Load a pose-stage checkpoint to seed a new stage; copies the frozen files."""
    bundle = load_checkpoint(src, expect_stage="pose")
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    for name in ("base.bin", "codec.bin"):
        shutil.copyfile(Path(src) / name, dst / name)
    bundle.stage = stage
    return bundle
