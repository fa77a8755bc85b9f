"""Toy two-stream video diffusion transformer.

Video and text tokens keep separate projection and feed-forward weights
but attend jointly over the concatenated sequence. Timestep (plus pooled
text) conditions both streams through per-block shift/scale modulation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from ..errors import NumericalError, ShapeError
from .text import ByteTextEncoder, TextTokens


@dataclass(frozen=True)
class BackboneConfig:
    depth: int = 4
    model_dim: int = 128
    heads: int = 4
    ffn_mult: int = 4
    patch: tuple[int, int, int] = (1, 2, 2)
    text_dim: int = 32
    max_text_len: int = 96
    latent_channels: int = 4  # noise latent channels; context has the same count
    seed: int = 0

    def __post_init__(self) -> None:
        ints = (self.depth, self.model_dim, self.heads, self.ffn_mult, self.text_dim, *self.patch)
        if any(int(v) != v or v < 1 for v in ints):
            raise ValueError("backbone sizes must be positive integers")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        object.__setattr__(self, "patch", tuple(int(p) for p in self.patch))

    @property
    def in_channels(self) -> int:
        return 2 * self.latent_channels + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch"] = list(self.patch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["patch"] = tuple(d["patch"])
        return cls(**d)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = (t[:, None] * 1000.0) * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def sincos_3d(grid: tuple[int, int, int], dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed (N, dim) sinusoidal code of (t, h, w) token positions."""
    per = (dim // 6) * 2
    axes = [torch.arange(n, dtype=dtype) for n in grid]
    tt, hh, ww = torch.meshgrid(*axes, indexing="ij")
    parts = []
    for pos in (tt, hh, ww):
        half = per // 2
        freqs = torch.exp(-math.log(100.0) * torch.arange(half, dtype=dtype) / max(half, 1))
        ang = pos.reshape(-1, 1) * freqs[None]
        parts += [torch.sin(ang), torch.cos(ang)]
    pe = torch.cat(parts, dim=-1)
    if pe.shape[1] < dim:
        pe = F.pad(pe, (0, dim - pe.shape[1]))
    return pe


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int, stream: str):
        super().__init__()
        self.stream = stream
        self.fc1 = nn.Linear(dim, dim * mult)
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale[:, None]) + shift[:, None]


class StreamParams(nn.Module):
    """Per-stream weights of one joint block."""

    def __init__(self, dim: int, mult: int, stream: str):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.modulation = nn.Linear(dim, 4 * dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.ffn = FeedForward(dim, mult, stream)


class JointBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mult: int):
        super().__init__()
        self.heads = heads
        self.video = StreamParams(dim, mult, "video")
        self.text = StreamParams(dim, mult, "text")

    def forward(
        self, x: torch.Tensor, ctx: torch.Tensor, cond: torch.Tensor, key_mask: torch.Tensor | None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        n = x.shape[1]
        sv1, cv1, sv2, cv2 = self.video.modulation(F.silu(cond)).chunk(4, dim=-1)
        st1, ct1, st2, ct2 = self.text.modulation(F.silu(cond)).chunk(4, dim=-1)
        qkv = torch.cat(
            [
                self.video.qkv(_modulate(self.video.norm1(x), sv1, cv1)),
                self.text.qkv(_modulate(self.text.norm1(ctx), st1, ct1)),
            ],
            dim=1,
        )
        q, k, v = rearrange(qkv, "b n (three h d) -> three b h n d", three=3, h=self.heads)
        attn = F.scaled_dot_product_attention(q, k, v, attn_mask=key_mask)
        attn = rearrange(attn, "b h n d -> b n (h d)")
        x = x + self.video.proj(attn[:, :n])
        ctx = ctx + self.text.proj(attn[:, n:])
        x = x + self.video.ffn(_modulate(self.video.norm2(x), sv2, cv2))
        ctx = ctx + self.text.ffn(_modulate(self.text.norm2(ctx), st2, ct2))
        return x, ctx


class VideoDiT(nn.Module):
    """Noise predictor over channel-stacked ``[context | noise | mask]`` latents."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(cfg.seed)
        pt, ph, pw = cfg.patch
        d = cfg.model_dim
        self.text_encoder = ByteTextEncoder(cfg.text_dim, cfg.max_text_len)
        self.patch_embed = nn.Linear(cfg.in_channels * pt * ph * pw, d)
        self.text_in = nn.Linear(cfg.text_dim, d)
        self.time_mlp = nn.Sequential(nn.Linear(256, d), nn.SiLU(), nn.Linear(d, d))
        self.text_pool = nn.Linear(cfg.text_dim, d)
        self.blocks = nn.ModuleList(JointBlock(d, cfg.heads, cfg.ffn_mult) for _ in range(cfg.depth))
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.final_mod = nn.Linear(d, 2 * d)
        self.head = nn.Linear(d, cfg.latent_channels * pt * ph * pw)
        self._init_weights()
        torch.random.set_rng_state(gen_state)
        self.check_finite = True

    def _init_weights(self) -> None:
        for name, m in self.named_modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)
                if name.endswith("modulation") or name == "final_mod":
                    # keep frozen random modulation near identity
                    m.weight.data.mul_(0.1)

    # tokenization -------------------------------------------------------
    def patchify(self, latents: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int, int]]:
        """(B, C, T', H', W') -> (B, N, C*pt*ph*pw) tokens and the token grid."""
        pt, ph, pw = self.cfg.patch
        _, _, T, H, W = latents.shape
        if T % pt or H % ph or W % pw:
            raise ShapeError(f"latent extents {(T, H, W)} not divisible by patch {self.cfg.patch}")
        tokens = rearrange(
            latents, "b c (t pt) (h ph) (w pw) -> b (t h w) (c pt ph pw)", pt=pt, ph=ph, pw=pw
        )
        return tokens, (T // pt, H // ph, W // pw)

    def unpatchify(self, tokens: torch.Tensor, grid: tuple[int, int, int]) -> torch.Tensor:
        pt, ph, pw = self.cfg.patch
        t, h, w = grid
        return rearrange(
            tokens, "b (t h w) (c pt ph pw) -> b c (t pt) (h ph) (w pw)",
            t=t, h=h, w=w, pt=pt, ph=ph, pw=pw,
        )

    def _check(self, x: torch.Tensor, where: str) -> None:
        if self.check_finite and not torch.isfinite(x).all():
            raise NumericalError(f"non-finite activations at {where}")

    def forward(
        self, latents: torch.Tensor, text: TextTokens, t: torch.Tensor
    ) -> torch.Tensor:
        """Predict the noise for the noise-latent channels.

        Args:
            latents: (B, 2*C + 1, T', H', W') stacked context, noisy latent, mask.
            text: batch of text token embeddings (B, L, text_dim) with padding mask.
            t: (B,) continuous timesteps in [0, 1].

        Returns:
            (B, C, T', H', W') noise prediction.
        """
        cfg = self.cfg
        if latents.ndim != 5 or latents.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"expected (B, {cfg.in_channels}, T', H', W') latents, got {tuple(latents.shape)}"
            )
        B = latents.shape[0]
        emb, pad = text.embeddings, text.padding
        if emb.shape[0] != B:
            if emb.shape[0] != 1:
                raise ShapeError(f"text batch {emb.shape[0]} != latent batch {B}")
            emb, pad = emb.expand(B, -1, -1), pad.expand(B, -1)
        emb = emb.to(latents.dtype)
        t = torch.as_tensor(t, dtype=latents.dtype).reshape(-1).expand(B)

        tokens, grid = self.patchify(latents)
        x = self.patch_embed(tokens) + sincos_3d(grid, cfg.model_dim, latents.dtype)
        ctx = self.text_in(emb)
        keep = (~pad).to(latents.dtype)
        pooled = (emb * keep[..., None]).sum(1) / keep.sum(1, keepdim=True).clamp_min(1)
        cond = self.time_mlp(timestep_embedding(t, 256)) + self.text_pool(pooled)

        key_mask = None
        if pad.any():
            full = torch.cat([torch.zeros(B, x.shape[1], dtype=torch.bool), pad], dim=1)
            key_mask = (~full)[:, None, None, :]
        for i, blk in enumerate(self.blocks):
            x, ctx = blk(x, ctx, cond, key_mask)
            self._check(x, f"block {i}")
        shift, scale = self.final_mod(F.silu(cond)).chunk(2, dim=-1)
        out = self.head(_modulate(self.final_norm(x), shift, scale))
        self._check(out, "head")
        return self.unpatchify(out, grid)

    def embed_text(self, texts: list[str]) -> TextTokens:
        return self.text_encoder(texts)
