"""In-context input construction.

The reference image and driving frames are laid side by side along the
width axis: frame 0 carries ``ref | D[0]``, every later frame carries
``0 | D[t]``. A binary mask marks the reference slot (first frame only)
and the motion region (everywhere). Latents, noise latents and the
latent-resolution mask are stacked on the channel axis in the fixed
order ``[context | noise | mask]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ParameterError, ShapeError, WarmupError


@dataclass
class CompositeClip:
    frames: np.ndarray  # (T, H, 2W, 3) float in [0, 1]
    ref_width: int
    fps: float

    @property
    def driving(self) -> np.ndarray:
        return self.frames[:, :, self.ref_width:]


@dataclass
class MaskPair:
    mask: np.ndarray  # (T, H, 2W, 1) with values in {0, 1}

    @property
    def reference(self) -> np.ndarray:
        return self.mask[:, :, : self.mask.shape[2] // 2]

    @property
    def motion(self) -> np.ndarray:
        return self.mask[:, :, self.mask.shape[2] // 2 :]


@dataclass
class ModelInput:
    latents: torch.Tensor  # (B, C_ctx + C_noise + 1, T', H', W')
    context_channels: int
    noise_channels: int
    timestep: torch.Tensor | None = None
    text: object | None = None

    @property
    def context(self) -> torch.Tensor:
        return self.latents[:, : self.context_channels]

    @property
    def noise(self) -> torch.Tensor:
        c = self.context_channels
        return self.latents[:, c : c + self.noise_channels]

    @property
    def mask(self) -> torch.Tensor:
        return self.latents[:, -1:]


def warmup_frames(fps: float) -> int:
    """Frames in the one-second warm-up segment."""
    if fps <= 0:
        raise ParameterError(f"fps must be positive, got {fps}")
    return int(math.ceil(fps))


def compose_context(ref_image: np.ndarray, driving: np.ndarray, fps: float = 8.0) -> CompositeClip:
    ref = np.asarray(ref_image)
    drv = np.asarray(driving)
    if drv.ndim != 4 or drv.shape[0] < 1:
        raise ShapeError(f"driving must be (T>=1, H, W, C), got {drv.shape}")
    if ref.shape != drv.shape[1:]:
        raise ShapeError(f"reference {ref.shape} does not match driving frame {drv.shape[1:]}")
    T, H, W, C = drv.shape
    out = np.zeros((T, H, 2 * W, C), dtype=np.result_type(ref.dtype, drv.dtype))
    out[0, :, :W] = ref
    out[:, :, W:] = drv
    return CompositeClip(out, W, fps)


def build_masks(T: int, H: int, W: int) -> MaskPair:
    """Reference mask (ones at t=0 only) beside an all-ones motion mask."""
    if min(T, H, W) < 1:
        raise ParameterError(f"mask dims must be >= 1, got T={T} H={H} W={W}")
    m = np.zeros((T, H, 2 * W, 1), dtype=np.float32)
    m[0, :, :W] = 1.0
    m[:, :, W:] = 1.0
    return MaskPair(m)


def mask_warmup_training(driving: np.ndarray, fps: float) -> np.ndarray:
    """Zero the first second of driving frames (training-time warm-up)."""
    n = warmup_frames(fps)
    if driving.shape[0] <= n:
        raise WarmupError(
            f"clip of {driving.shape[0]} frames needs more than {n} frames at fps={fps}"
        )
    out = driving.copy()
    out[:n] = 0
    return out


def prepend_warmup_inference(driving: np.ndarray, fps: float) -> np.ndarray:
    """Prefix one second of zero frames (inference-time warm-up)."""
    if driving.ndim != 4 or driving.shape[0] < 1:
        raise ShapeError(f"driving must be (T>=1, H, W, C), got {driving.shape}")
    n = warmup_frames(fps)
    pad = np.zeros((n, *driving.shape[1:]), dtype=driving.dtype)
    return np.concatenate([pad, driving], axis=0)


def assemble_model_input(
    context: torch.Tensor, noise: torch.Tensor, latent_mask: torch.Tensor
) -> ModelInput:
    """Channel-concatenate ``[context | noise | mask]``.

    All three are channel-first ``(B, C, T', H', W')`` (unbatched
    ``(C, T', H', W')`` is accepted); the mask has one channel.
    """
    parts = [context, noise, latent_mask]
    if any(p.ndim == 4 for p in parts):
        parts = [p.unsqueeze(0) if p.ndim == 4 else p for p in parts]
    ctx, nz, m = parts
    if any(p.ndim != 5 for p in parts):
        raise ShapeError("latents must be (B, C, T', H', W')")
    if m.shape[1] != 1:
        raise ShapeError(f"latent mask must have one channel, got {m.shape[1]}")
    if m.shape[0] == 1 and ctx.shape[0] > 1:
        m = m.expand(ctx.shape[0], *m.shape[1:])
    ext = {tuple(p.shape[2:]) for p in (ctx, nz, m)}
    if len(ext) != 1 or len({p.shape[0] for p in (ctx, nz, m)}) != 1:
        raise ShapeError(
            f"extent mismatch: context {tuple(ctx.shape)}, noise {tuple(nz.shape)}, "
            f"mask {tuple(m.shape)}"
        )
    return ModelInput(torch.cat([ctx, nz, m.to(ctx.dtype)], dim=1), ctx.shape[1], nz.shape[1])
