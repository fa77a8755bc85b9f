"""Noise schedule, training loss and sampler.

Default parameterization is epsilon prediction on a cosine schedule over
continuous ``t`` in [0, 1]: ``z_t = a(t) x0 + s(t) eps`` with
``a = cos(pi/2 * 0.95 t)``, ``s = sin(pi/2 * 0.95 t)``. The 0.95 leaves a
terminal signal fraction of about 0.08, so the x0 estimate at t = 1 does
not amplify small noise-prediction errors by orders of magnitude. ``prediction="flow"`` switches to rectified flow
(``z_t = (1-t) x0 + t eps``, target ``eps - x0``).
"""

from __future__ import annotations

import math
from typing import Callable

import torch

from ..composer import assemble_model_input
from ..errors import NumericalError, ParameterError
from .text import TextTokens

Predictor = Callable[[torch.Tensor, TextTokens, torch.Tensor], torch.Tensor]

_T_SCALE = 0.95
X0_CLIP = 5.0


def alpha_sigma(t: torch.Tensor, prediction: str = "eps") -> tuple[torch.Tensor, torch.Tensor]:
    if prediction == "eps":
        ang = 0.5 * math.pi * _T_SCALE * t
        return torch.cos(ang), torch.sin(ang)
    if prediction == "flow":
        return 1 - t, t
    raise ParameterError(f"unknown prediction type {prediction!r}")


def _bcast(v: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return v.reshape(-1, *([1] * (like.ndim - 1)))


def add_noise(x0: torch.Tensor, eps: torch.Tensor, t: torch.Tensor, prediction: str = "eps") -> torch.Tensor:
    a, s = alpha_sigma(t, prediction)
    return _bcast(a, x0) * x0 + _bcast(s, x0) * eps


def regression_target(x0: torch.Tensor, eps: torch.Tensor, prediction: str = "eps") -> torch.Tensor:
    return eps if prediction == "eps" else eps - x0


def generated_region(shape: torch.Size | tuple, layout: str = "spatial") -> torch.Tensor:
    """Boolean (1, 1, T', H', W') selector of supervised latent cells.

    ``spatial``: the right (driving/target) half of the width axis.
    ``temporal``: the trailing target span of a ``[reference | driving |
    target]`` sequence of ``1 + 2n`` latent frames, i.e. the last ``n``.
    """
    _, _, T, H, W = shape
    sel = torch.zeros(1, 1, T, H, W, dtype=torch.bool)
    if layout == "spatial":
        sel[..., W // 2 :] = True
    elif layout == "temporal":
        if T < 3 or (T - 1) % 2:
            raise ParameterError(f"temporal layout needs 1 + 2n latent frames, got {T}")
        sel[:, :, 1 + (T - 1) // 2 :] = True
    else:
        raise ParameterError(f"unknown layout {layout!r}")
    return sel


def diffusion_loss(
    model: Predictor,
    context: torch.Tensor,
    target: torch.Tensor,
    eps: torch.Tensor,
    latent_mask: torch.Tensor,
    text: TextTokens,
    t: torch.Tensor,
    masked: bool = True,
    prediction: str = "eps",
    layout: str = "spatial",
) -> torch.Tensor:
    """Mean squared error between the regression target and the model output.

    With ``masked`` only the generated region contributes; predictions on
    the reference region never reach the loss.
    """
    z_t = add_noise(target, eps, t, prediction)
    inp = assemble_model_input(context, z_t, latent_mask)
    pred = model(inp.latents, text, t)
    err = (pred - regression_target(target, eps, prediction)) ** 2
    if masked:
        sel = generated_region(err.shape, layout).expand_as(err)
        loss = err[sel].mean()
    else:
        loss = err.mean()
    if not torch.isfinite(loss):
        raise NumericalError("non-finite diffusion loss")
    return loss


@torch.no_grad()
def sample_latents(
    model: Predictor,
    context: torch.Tensor,
    latent_mask: torch.Tensor,
    text: TextTokens,
    steps: int,
    seed: int,
    prediction: str = "eps",
    layout: str = "spatial",
) -> torch.Tensor:
    """Deterministic DDIM (eps) or Euler (flow) integration from t=1 to t=0.

    ``context`` is (B, C, T', H', W'); returns the denoised latent of the
    same shape. Cells outside the generated region are known (their clean
    value is the context itself), so after every step they are reset to
    the context noised to the current level with one fixed noise draw.
    The masked loss never trains the model to denoise them.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(context.shape, generator=gen, dtype=context.dtype)
    known_eps = z.clone()
    keep = ~generated_region(context.shape, layout).expand_as(context)
    ts = torch.linspace(1.0, 0.0, steps + 1, dtype=context.dtype)
    B = context.shape[0]

    def pin(z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return torch.where(keep, add_noise(context, known_eps, t.expand(B), prediction), z)

    z = pin(z, ts[0])
    for i in range(steps):
        t, t_next = ts[i], ts[i + 1]
        inp = assemble_model_input(context, z, latent_mask)
        out = model(inp.latents, text, t.expand(B))
        if prediction == "flow":
            z = z + (t_next - t) * out
        else:
            a, s = alpha_sigma(t)
            a_n, s_n = alpha_sigma(t_next)
            x0 = ((z - s * out) / a).clamp(-X0_CLIP, X0_CLIP)
            z = a_n * x0 + s_n * out
        z = pin(z, t_next)
        if not torch.isfinite(z).all():
            raise NumericalError(f"non-finite latents at sampling step {i}")
    return z
