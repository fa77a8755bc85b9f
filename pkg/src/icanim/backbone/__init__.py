"""Toy video diffusion transformer with feed-forward LoRA adapters."""

from .checkpoint import ModelBundle, load_checkpoint, new_bundle, save_checkpoint, warm_start
from .diffusion import add_noise, alpha_sigma, diffusion_loss, sample_latents
from .lora import LoRAConfig, apply_lora, lora_parameter_count, trainable_parameters
from .model import BackboneConfig, VideoDiT
from .text import ByteTextEncoder, TextTokens

__all__ = [
    "ModelBundle", "load_checkpoint", "new_bundle", "save_checkpoint", "warm_start",
    "add_noise", "alpha_sigma", "diffusion_loss", "sample_latents",
    "LoRAConfig", "apply_lora", "lora_parameter_count", "trainable_parameters",
    "BackboneConfig", "VideoDiT", "ByteTextEncoder", "TextTokens",
]
