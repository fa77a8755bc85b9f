"""Low-rank adapters on the video-stream feed-forward layers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ParameterError, StateError
from .model import FeedForward

PAPER_RANK = 256


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 4
    alpha: float | None = None  # defaults to rank, i.e. unit scaling
    target: str = "ffn"

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ParameterError(f"LoRA rank must be >= 1, got {self.rank}")
        if self.target != "ffn":
            raise ParameterError("LoRA target is fixed to feed-forward layers")

    @property
    def scaling(self) -> float:
        return (self.alpha if self.alpha is not None else self.rank) / self.rank


class LoRALinear(nn.Module):
    """Frozen linear layer plus ``scaling * B @ A`` with B zero-initialized.

    Keeps the wrapped layer's ``weight``/``bias`` under the same names so
    base state dicts load with or without adapters.
    """

    def __init__(self, base: nn.Linear, rank: int, scaling: float):
        super().__init__()
        self.weight = base.weight
        self.bias = base.bias
        self.weight.requires_grad_(False)
        if self.bias is not None:
            self.bias.requires_grad_(False)
        self.scaling = scaling
        self.lora_A = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight, self.bias) + self.scaling * ((x @ self.lora_A.t()) @ self.lora_B.t())


def lora_parameter_count(in_features: int, hidden: int, rank: int) -> int:
    """Adapter parameters added to one ``in -> hidden -> in`` feed-forward pair."""
    return (rank * in_features + hidden * rank) + (rank * hidden + in_features * rank)


def apply_lora(model: nn.Module, cfg: LoRAConfig, seed: int = 0) -> nn.Module:
    """Freeze ``model`` and wrap every video-stream FFN linear with an adapter.

    Text-stream FFNs are left untouched. Adapter A matrices are drawn
    from ``seed`` so repeated calls give identical models.
    """
    if getattr(model, "lora_config", None) is not None:
        raise StateError("adapters already applied")
    for p in model.parameters():
        p.requires_grad_(False)
    targets = [m for m in model.modules() if isinstance(m, FeedForward) and m.stream == "video"]
    if not targets:
        raise StateError("model has no video-stream feed-forward layers to adapt")
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    for ffn in targets:
        ffn.fc1 = LoRALinear(ffn.fc1, cfg.rank, cfg.scaling)
        ffn.fc2 = LoRALinear(ffn.fc2, cfg.rank, cfg.scaling)
    torch.random.set_rng_state(gen_state)
    model.lora_config = cfg
    return model


def lora_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v for k, v in model.state_dict().items() if ".lora_" in k}


def base_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v for k, v in model.state_dict().items() if ".lora_" not in k}


def trainable_parameters(model: nn.Module) -> list[nn.Parameter]:
    """The adapter matrices; everything else stays frozen."""
    if getattr(model, "lora_config", None) is None:
        raise StateError("apply_lora must be called before collecting trainable parameters")
    params = [p for n, p in model.named_parameters() if ".lora_" in n]
    if not params:
        raise StateError("no adapter parameters found")
    return params
