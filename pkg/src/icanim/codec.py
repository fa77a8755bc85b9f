"""Spatiotemporal video autoencoder and mask downsampling.

Frames are grouped causally in time: latent frame 0 covers pixel frame 0
alone, latent frame k covers frames ``(k-1)*s+1 .. k*s``. This is done
by replicating frame 0 ``s-1`` times at the front and using
non-overlapping ``(s, p, p)`` blocks, so ``T' = 1 + (T-1)/s`` and
composites encode each width half independently whenever the half
width is a multiple of the spatial stride.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blobio import read_blob, write_blob
from .composer import MaskPair
from .errors import CheckpointError, ParameterError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CodecConfig:
    spatial_stride: int = 8
    temporal_stride: int = 4
    latent_channels: int = 4
    hidden: int = 64
    kind: str = "conv"  # "conv" (trained) or "patchify" (fixed, lossless)

    def __post_init__(self) -> None:
        if self.spatial_stride < 1 or self.temporal_stride < 1:
            raise ParameterError("strides must be >= 1")
        if self.kind not in ("conv", "patchify"):
            raise ParameterError(f"unknown codec kind {self.kind!r}")
        if self.kind == "patchify":
            need = 3 * self.temporal_stride * self.spatial_stride**2
            if self.latent_channels != need:
                object.__setattr__(self, "latent_channels", need)

    def latent_shape(self, T: int, H: int, W: int) -> tuple[int, int, int]:
        check_video_shape(T, H, W, self)
        return 1 + (T - 1) // self.temporal_stride, H // self.spatial_stride, W // self.spatial_stride

    def video_shape(self, Tl: int, Hl: int, Wl: int) -> tuple[int, int, int]:
        return 1 + (Tl - 1) * self.temporal_stride, Hl * self.spatial_stride, Wl * self.spatial_stride


def valid_length(T: int, temporal_stride: int) -> bool:
    return T >= 1 and (T - 1) % temporal_stride == 0


def _nearest(n: int, step: int, base: int = 0) -> list[int]:
    lo = base + ((n - base) // step) * step
    return sorted({v for v in (lo, lo + step) if v >= max(base, 1)})


def check_video_shape(T: int, H: int, W: int, cfg: CodecConfig) -> None:
    s, st = cfg.spatial_stride, cfg.temporal_stride
    problems = []
    if T < 1 or (T - 1) % st:
        problems.append(f"T={T} (valid nearby: {_nearest(T, st, 1)})")
    if H < 1 or H % s:
        problems.append(f"H={H} (valid nearby: {_nearest(H, s)})")
    if W < 1 or W % s:
        problems.append(f"W={W} (valid nearby: {_nearest(W, s)})")
    if problems:
        raise ShapeError(
            f"video extents incompatible with strides (t={st}, s={s}): " + "; ".join(problems)
        )


@dataclass
class LatentClip:
    """Latent video, stored channel-first as (C, T', H', W')."""

    data: torch.Tensor
    spatial_stride: int
    temporal_stride: int

    @property
    def shape(self) -> tuple[int, int, int, int]:
        """(T', H', W', C), the channel-last view of the extents."""
        c, t, h, w = self.data.shape
        return t, h, w, c

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def _causal_pad(x: torch.Tensor, s: int) -> torch.Tensor:
    """Replicate frame 0 ``s-1`` times in front; x is (B, C, T, H, W)."""
    if s == 1:
        return x
    return torch.cat([x[:, :, :1].expand(-1, -1, s - 1, -1, -1), x], dim=2)


class VideoCodec(nn.Module):
    """Block autoencoder over (temporal_stride, spatial_stride, spatial_stride) cells."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        st, s = cfg.temporal_stride, cfg.spatial_stride
        k = (st, s, s)
        if cfg.kind == "conv":
            self.encoder = nn.Sequential(
                nn.Conv3d(3, cfg.hidden, k, stride=k),
                nn.SiLU(),
                nn.Conv3d(cfg.hidden, cfg.hidden, 1),
                nn.SiLU(),
                nn.Conv3d(cfg.hidden, cfg.latent_channels, 1),
            )
            self.decoder = nn.Sequential(
                nn.Conv3d(cfg.latent_channels, cfg.hidden, 1),
                nn.SiLU(),
                nn.Conv3d(cfg.hidden, cfg.hidden, 1),
                nn.SiLU(),
                nn.ConvTranspose3d(cfg.hidden, 3, k, stride=k),
            )
        # latents are divided by this so diffusion sees roughly unit variance
        self.register_buffer("latent_scale", torch.ones(()))
        self.eval()

    # raw tensor paths; x is (B, 3, T, H, W) in [0, 1]
    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        st, s = self.cfg.temporal_stride, self.cfg.spatial_stride
        x = _causal_pad(x * 2 - 1, st)
        if self.cfg.kind == "patchify":
            B, C, T, H, W = x.shape
            z = x.reshape(B, C, T // st, st, H // s, s, W // s, s)
            z = z.permute(0, 1, 3, 5, 7, 2, 4, 6).reshape(B, C * st * s * s, T // st, H // s, W // s)
        else:
            z = self.encoder(x)
        return z / self.latent_scale

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        st, s = self.cfg.temporal_stride, self.cfg.spatial_stride
        z = z * self.latent_scale
        if self.cfg.kind == "patchify":
            B, _, Tl, Hl, Wl = z.shape
            x = z.reshape(B, 3, st, s, s, Tl, Hl, Wl)
            x = x.permute(0, 1, 5, 2, 6, 3, 7, 4).reshape(B, 3, Tl * st, Hl * s, Wl * s)
        else:
            x = self.decoder(z)
        return (x[:, :, st - 1 :] + 1) / 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode_tensor(self.encode_tensor(x))

    @torch.no_grad()
    def encode(self, video: np.ndarray | torch.Tensor) -> LatentClip:
        """Encode a (T, H, W, 3) video in [0, 1]."""
        v = torch.as_tensor(np.asarray(video), dtype=torch.float32)
        if v.ndim != 4 or v.shape[-1] != 3:
            raise ShapeError(f"video must be (T, H, W, 3), got {tuple(v.shape)}")
        check_video_shape(*v.shape[:3], self.cfg)
        z = self.encode_tensor(v.permute(3, 0, 1, 2).unsqueeze(0))
        return LatentClip(z[0], self.cfg.spatial_stride, self.cfg.temporal_stride)

    @torch.no_grad()
    def decode(self, latent: LatentClip | torch.Tensor) -> np.ndarray:
        """Decode to a (T, H, W, 3) float32 video clipped to [0, 1]."""
        z = latent.data if isinstance(latent, LatentClip) else latent
        if z.ndim != 4 or z.shape[0] != self.cfg.latent_channels:
            raise ShapeError(
                f"latent must be ({self.cfg.latent_channels}, T', H', W'), got {tuple(z.shape)}"
            )
        if min(z.shape[1:]) < 1:
            raise ShapeError(f"empty latent extents {tuple(z.shape)}")
        x = self.decode_tensor(z.unsqueeze(0).float())[0]
        return x.clamp(0, 1).permute(1, 2, 3, 0).numpy()

    def save(self, path: str | Path) -> None:
        header = {"kind": "codec", "config": asdict(self.cfg)}
        write_blob(path, header, self.state_dict())

    @classmethod
    def load(cls, path: str | Path) -> "VideoCodec":
        head, tensors = read_blob(path)
        if head.get("kind") != "codec":
            raise CheckpointError(f"{path}: not a codec checkpoint")
        codec = cls(CodecConfig(**head["config"]))
        codec.load_state_dict(tensors)
        codec.eval()
        return codec


def downsample_mask(mask: MaskPair | np.ndarray, cfg: CodecConfig) -> torch.Tensor:
    """Max-pool a (T, H, 2W, 1) mask to latent resolution, shape (1, T', H', W')."""
    m = mask.mask if isinstance(mask, MaskPair) else np.asarray(mask)
    if m.ndim != 4 or m.shape[-1] != 1:
        raise ShapeError(f"mask must be (T, H, W, 1), got {m.shape}")
    check_video_shape(*m.shape[:3], cfg)
    st, s = cfg.temporal_stride, cfg.spatial_stride
    x = torch.as_tensor(m, dtype=torch.float32).permute(3, 0, 1, 2).unsqueeze(0)
    x = _causal_pad(x, st)
    return F.max_pool3d(x, (st, s, s), stride=(st, s, s))[0]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


def train_codec(
    videos: list[np.ndarray],
    cfg: CodecConfig,
    epochs: int = 20,
    lr: float = 2e-3,
    batch_size: int = 4,
    seed: int = 0,
) -> tuple[VideoCodec, list[float]]:
    """Fit the autoencoder by pixel MSE; returns the codec and mean loss per epoch.

    Videos must all share one valid shape. The latent scale is set to
    the latent standard deviation over the corpus after training.
    """
    torch.manual_seed(seed)
    codec = VideoCodec(cfg)
    data = torch.stack([torch.as_tensor(v, dtype=torch.float32).permute(3, 0, 1, 2) for v in videos])
    check_video_shape(*data.shape[2:], cfg)
    history: list[float] = []
    if cfg.kind == "conv":
        opt = torch.optim.Adam(codec.parameters(), lr=lr)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(epochs, 1))
        gen = torch.Generator().manual_seed(seed)
        codec.train()
        for ep in range(epochs):
            perm = torch.randperm(len(data), generator=gen)
            total = 0.0
            for i in range(0, len(data), batch_size):
                x = data[perm[i : i + batch_size]]
                loss = F.mse_loss(codec(x), x)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(x)
            sched.step()
            history.append(total / len(data))
            logger.debug("codec epoch %d loss %.5f", ep, history[-1])
        codec.eval()
    with torch.no_grad():
        codec.latent_scale.fill_(1.0)
        z = torch.cat([codec.encode_tensor(data[i : i + 8]) for i in range(0, len(data), 8)])
        codec.latent_scale.fill_(float(z.std()) or 1.0)
    return codec, history
