"""Pose-driven and end-to-end adapter training, plus inference.

Each training step samples a clip window, builds the width-wise
composite (reference frame beside the driving signal, first second of
driving zeroed), encodes it, noises the target latent and regresses the
noise with only the adapter matrices receiving updates.
"""

from __future__ import annotations

import csv
import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .backbone import (
    ModelBundle,
    VideoDiT,
    diffusion_loss,
    load_checkpoint,
    new_bundle,
    sample_latents,
    save_checkpoint,
    trainable_parameters,
    warm_start,
)
from .blobio import atomic_write_bytes
from .codec import VideoCodec, downsample_mask, valid_length
from .composer import (
    build_masks,
    compose_context,
    mask_warmup_training,
    prepend_warmup_inference,
    warmup_frames,
)
from .config import DESK, RunPreset, TrainConfig
from .data import Clip
from .errors import CheckpointError, ConfigError, IcanimError, UsageError
from .skeleton import PoseSequence, augment_pose, rasterize
from .skeleton.augment import normalize_group
from .textguide import PromptCache

logger = logging.getLogger(__name__)


@dataclass
class Triplet:
    """End-to-end supervision: driving ``v_o`` and target ``v_src`` (reference is v_src[0])."""

    triplet_id: str
    v_o: np.ndarray
    v_src: np.ndarray
    fps: float = 8.0
    motion_hint: str | None = None
    appearance_hint: str | None = None


@dataclass
class Example:
    context: np.ndarray  # spatial: (T, H, 2W, 3); temporal: driving (T, H, W, 3)
    target: np.ndarray  # (T, H, W, 3) video to reconstruct
    reference: np.ndarray  # (H, W, 3)
    prompt: str


@dataclass
class TrainResult:
    bundle: ModelBundle
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)


def admissible_lengths(cfg: TrainConfig, temporal_stride: int, max_len: int | None = None) -> list[int]:
    lo, hi = cfg.clip_len_range
    if max_len is not None:
        hi = min(hi, max_len)
    return [n for n in range(lo, hi + 1) if valid_length(n, temporal_stride)]


def sample_clip_length(
    cfg: TrainConfig, rng: np.random.Generator, temporal_stride: int = 4, max_len: int | None = None
) -> int:
    """Uniform draw from lengths in range whose ``T-1`` divides by the stride."""
    options = admissible_lengths(cfg, temporal_stride, max_len)
    if not options:
        raise ConfigError(
            f"no clip length in {cfg.clip_len_range} (max {max_len}) fits temporal stride {temporal_stride}"
        )
    return int(options[rng.integers(len(options))])


def smoothed(losses: Sequence[float], step: int, window: int = 100) -> float:
    """Mean loss over a window of ``window`` steps centred on ``step`` (clipped at the ends)."""
    n = len(losses)
    if not 0 <= step < n:
        raise IndexError(step)
    lo = max(0, step - window // 2)
    hi = min(n, step + window // 2 + 1)
    return float(np.mean(losses[lo:hi]))


def write_loss_csv(result: TrainResult, path: str | Path) -> None:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "lr"])
    for i, (loss, lr) in enumerate(zip(result.losses, result.lrs)):
        w.writerow([i, f"{loss:.8g}", f"{lr:.8g}"])
    atomic_write_bytes(path, buf.getvalue().encode())


# example construction --------------------------------------------------

def _window(n_frames: int, cfg: TrainConfig, stride: int, rng: np.random.Generator) -> slice:
    T = sample_clip_length(cfg, rng, stride, n_frames)
    start = int(rng.integers(n_frames - T + 1))
    return slice(start, start + T)


def pose_example(
    clip: Clip, win: slice, preset: RunPreset, rng: np.random.Generator, prompts: PromptCache | None
) -> Example:
    cfg = preset.train
    video = clip.video[win]
    ref = video[0]
    subjects = [PoseSequence(p.frames[win], p.fps, p.topology) for p in clip.poses]
    if len(subjects) == 1:
        poses = [augment_pose(subjects[0], preset.augment, rng)[0]]
    else:
        poses = normalize_group(subjects)
    driving = rasterize(poses, cfg.height, cfg.width)
    driving = mask_warmup_training(driving, clip.fps)
    prompt = ""
    if prompts is not None:
        prompt = prompts.get(video, ref, clip.family, clip.character.tag).fused_text
    return Example(driving, video, ref, prompt)


def e2e_example(
    trip: Triplet, win: slice, preset: RunPreset, prompts: PromptCache | None
) -> Example:
    target = trip.v_src[win]
    ref = target[0]
    driving = mask_warmup_training(trip.v_o[win], trip.fps)
    prompt = ""
    if prompts is not None:
        prompt = prompts.get(trip.v_o, ref, trip.motion_hint, trip.appearance_hint).fused_text
    return Example(driving, target, ref, prompt)


def _to_cf(video: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(video, dtype=torch.float32).permute(3, 0, 1, 2)


@torch.no_grad()
def encode_batch(
    codec: VideoCodec, examples: list[Example], layout: str = "spatial", fps: float = 8.0
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(context, target, latent_mask) latents, each (B, C|1, T', H', W')."""
    if layout == "spatial":
        comp = np.stack([compose_context(e.reference, e.context, fps).frames for e in examples])
        ctx = codec.encode_tensor(torch.as_tensor(comp).permute(0, 4, 1, 2, 3).float())
        tgt_right = codec.encode_tensor(torch.stack([_to_cf(e.target) for e in examples]))
        half = ctx.shape[-1] // 2
        target = torch.cat([ctx[..., :half], tgt_right], dim=-1)
        T, H, W = examples[0].context.shape[:3]
        m = downsample_mask(build_masks(T, H, W), codec.cfg)[None]
        return ctx, target, m.expand(len(examples), -1, -1, -1, -1)
    # temporal concatenation: [reference | driving | target] along latent time
    ref = codec.encode_tensor(torch.stack([_to_cf(e.reference[None]) for e in examples]))
    drv = codec.encode_tensor(torch.stack([_to_cf(e.context) for e in examples]))
    tgt = codec.encode_tensor(torch.stack([_to_cf(e.target) for e in examples]))
    ctx = torch.cat([ref, drv, torch.zeros_like(tgt)], dim=2)
    target = torch.cat([ref, drv, tgt], dim=2)
    m = torch.zeros(len(examples), 1, *ctx.shape[2:])
    m[:, :, : 1 + drv.shape[2]] = 1.0
    return ctx, target, m


# training ---------------------------------------------------------------

def _prefetch(make: Callable[[int], list[Example]], steps: int, depth: int = 2) -> Iterator[list[Example]]:
    """Build batches on a worker thread, delivered in step order through a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def work() -> None:
        try:
            for s in range(steps):
                if stop.is_set():
                    return
                q.put(make(s))
        except BaseException as e:  # surfaced on the consumer side
            q.put(e)

    th = threading.Thread(target=work, daemon=True)
    th.start()
    try:
        for _ in range(steps):
            item = q.get()
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while th.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                th.join(timeout=0.05)


def _optimize(
    bundle: ModelBundle,
    preset: RunPreset,
    make_batch: Callable[[int], list[Example]],
    steps: int,
    log_every: int,
) -> TrainResult:
    cfg = preset.train
    model, codec = bundle.model, bundle.codec
    params = trainable_parameters(model)
    opt = torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    result = TrainResult(bundle)
    model.train()
    for step, batch in enumerate(_prefetch(make_batch, steps)):
        try:
            ctx, target, m = encode_batch(codec, batch, cfg.layout, cfg.fps)
            text = model.embed_text([e.prompt for e in batch])
            eps = torch.randn(target.shape, generator=gen)
            t = torch.rand(len(batch), generator=gen)
            loss = diffusion_loss(model, ctx, target, eps, m, text, t, masked=cfg.masked_loss,
                                  prediction=cfg.prediction, layout=cfg.layout)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        except IcanimError as e:
            raise type(e)(f"step {step}: {e}") from e
        result.losses.append(loss.item())
        result.lrs.append(opt.param_groups[0]["lr"])
        bundle.step += 1
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.4f", step, result.losses[-1])
    model.eval()
    return result


def pretrain_base(
    model: VideoDiT,
    codec: VideoCodec,
    corpus: Sequence[Clip],
    preset: RunPreset = DESK,
    steps: int = 1500,
    lr: float = 5e-4,
) -> list[float]:
    """Stand-in for the pretrained video foundation model.

    Trains every backbone weight (call before adapters are attached) on
    generic image-conditioned video denoising: the canvas holds one clip,
    or two clips side by side, and the context carries only its first
    frame. No poses are involved. Returns the per-step loss.
    """
    if hasattr(model, "lora_config"):
        raise UsageError("pretrain the base before attaching adapters")
    if not corpus:
        raise UsageError("pretraining corpus is empty")
    cfg = preset.train
    stride = codec.cfg.temporal_stride
    prompts = PromptCache()
    params = [p for n, p in model.named_parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed + 104729)
    losses = []
    model.train()
    for step in range(steps):
        rng = np.random.default_rng([cfg.seed, step, 2])
        picks = [corpus[int(rng.integers(len(corpus)))] for _ in range(2 * cfg.batch_size)]
        win = _window(min(len(c.video) for c in picks), cfg, stride, rng)
        wide = bool(rng.random() < 0.5)
        vids, texts = [], []
        for b in range(cfg.batch_size):
            a, c = picks[2 * b], picks[2 * b + 1]
            v = np.concatenate([a.video[win], c.video[win]], axis=2) if wide else a.video[win]
            vids.append(v)
            texts.append(prompts.get(a.video, a.video[0], a.family, a.character.tag).fused_text)
        x = torch.as_tensor(np.stack(vids)).permute(0, 4, 1, 2, 3).float()
        with torch.no_grad():
            target = codec.encode_tensor(x)
            first = x.clone()
            first[:, :, 1:] = 0
            ctx = codec.encode_tensor(first)
        m = torch.zeros(len(vids), 1, *target.shape[2:])
        m[:, :, 0] = 1.0
        eps = torch.randn(target.shape, generator=gen)
        t = torch.rand(len(vids), generator=gen)
        loss = diffusion_loss(model, ctx, target, eps, m, model.embed_text(texts), t,
                              masked=False, prediction=cfg.prediction)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("base step %d loss %.4f", step, losses[-1])
    model.eval()
    return losses


def train_codec_stage(
    clips: Sequence[Clip], preset: RunPreset = DESK, epochs: int = 40, batch_size: int = 8
) -> tuple[VideoCodec, list[float]]:
    """Fit the codec on the corpus videos plus their skeleton renders.

    Clips are cut to a common length the temporal stride accepts.
    """
    from .codec import train_codec

    if not clips:
        raise UsageError("codec corpus is empty")
    c = preset.train
    T = min(len(x.video) for x in clips)
    while T > 1 and not valid_length(T, preset.codec.temporal_stride):
        T -= 1
    vids = [x.video[:T] for x in clips]
    vids += [rasterize(normalize_group(x.poses), c.height, c.width)[:T] for x in clips]
    return train_codec(vids, preset.codec, epochs=epochs, batch_size=batch_size, seed=c.seed)


def prepare_base(codec: VideoCodec, preset: RunPreset = DESK, num_frames: int = 25) -> VideoDiT | None:
    """Pretrained backbone per ``train.base_steps`` (None when the preset skips it).

    The pretraining corpus is ``train.base_corpus`` fresh clips drawn from
    seed ``train.seed + 5``, disjoint from the pose-stage corpus.
    """
    from .data import make_corpus

    c = preset.train
    if not c.base_steps:
        return None
    _check_compat(preset, codec)
    base = VideoDiT(preset.backbone)
    pool = make_corpus(c.base_corpus, seed=c.seed + 5, num_frames=num_frames,
                       height=c.height, width=c.width, fps=c.fps)
    pretrain_base(base, codec, pool, preset, steps=c.base_steps, lr=c.base_lr)
    return base


def _settings(preset: RunPreset) -> dict:
    c = preset.train
    return {"fps": c.fps, "height": c.height, "width": c.width,
            "prediction": c.prediction, "layout": c.layout}


def train_pose_stage(
    corpus: Sequence[Clip],
    preset: RunPreset = DESK,
    codec: VideoCodec | None = None,
    out_dir: str | Path | None = None,
    steps: int | None = None,
    bundle: ModelBundle | None = None,
    base: VideoDiT | None = None,
) -> TrainResult:
    """Self-supervised reconstruction from augmented skeletons; reference = first frame.

    ``base`` is a pretrained backbone to freeze and adapt (see
    :func:`pretrain_base`); without one a fresh seeded backbone is used.
    """
    if not corpus:
        raise UsageError("pose-stage corpus is empty")
    if bundle is None:
        if codec is None:
            raise UsageError("a trained codec is required before pose-stage training")
        _check_compat(preset, codec)
        bundle = new_bundle(preset.backbone, preset.lora, codec, "pose", base=base,
                            **_settings(preset))
    cfg = preset.train
    stride = bundle.codec.cfg.temporal_stride
    prompts = PromptCache() if cfg.text_guidance else None

    def make(step: int) -> list[Example]:
        rng = np.random.default_rng([cfg.seed, step])
        out = []
        for _ in range(cfg.batch_size):
            clip = corpus[int(rng.integers(len(corpus)))]
            out.append(clip)
        win = _window(min(len(c.video) for c in out), cfg, stride, rng)
        return [pose_example(c, win, preset, rng, prompts) for c in out]

    result = _optimize(bundle, preset, make, steps or cfg.steps, cfg.log_every)
    if out_dir is not None:
        save_checkpoint(bundle, out_dir)
        write_loss_csv(result, Path(out_dir) / "loss.csv")
    return result


def train_e2e_stage(
    triplets: Sequence[Triplet],
    warmstart: str | Path | ModelBundle,
    preset: RunPreset = DESK,
    out_dir: str | Path | None = None,
    steps: int | None = None,
) -> TrainResult:
    """Reconstruct ``v_src`` from raw RGB ``v_o`` and ``v_src[0]``, starting from the pose model."""
    if not triplets:
        raise UsageError("triplet dataset is empty")
    if isinstance(warmstart, ModelBundle):
        if warmstart.stage != "pose":
            raise CheckpointError(f"warm start needs a 'pose' checkpoint, got {warmstart.stage!r}")
        bundle = warmstart
        bundle.stage = "e2e"
    elif out_dir is not None:
        bundle = warm_start(warmstart, out_dir)
    else:
        bundle = load_checkpoint(warmstart, expect_stage="pose")
        bundle.stage = "e2e"
    cfg = preset.train
    stride = bundle.codec.cfg.temporal_stride
    prompts = PromptCache() if cfg.text_guidance else None

    def make(step: int) -> list[Example]:
        rng = np.random.default_rng([cfg.seed, step, 1])
        picks = [triplets[int(rng.integers(len(triplets)))] for _ in range(cfg.batch_size)]
        win = _window(min(len(p.v_src) for p in picks), cfg, stride, rng)
        return [e2e_example(p, win, preset, prompts) for p in picks]

    result = _optimize(bundle, preset, make, steps or cfg.steps, cfg.log_every)
    if out_dir is not None:
        save_checkpoint(bundle, out_dir)
        write_loss_csv(result, Path(out_dir) / "loss.csv")
    return result


def _check_compat(preset: RunPreset, codec: VideoCodec) -> None:
    if preset.backbone.latent_channels != codec.cfg.latent_channels:
        raise ConfigError(
            f"backbone expects {preset.backbone.latent_channels} latent channels, "
            f"codec produces {codec.cfg.latent_channels}"
        )


# inference --------------------------------------------------------------

def driving_frames(bundle: ModelBundle, driving, height: int, width: int) -> np.ndarray:
    """Turn a stage-appropriate driving signal into (T, H, W, 3) frames."""
    if bundle.stage == "pose":
        if isinstance(driving, PoseSequence):
            driving = [driving]
        if not (isinstance(driving, (list, tuple)) and driving
                and all(isinstance(d, PoseSequence) for d in driving)):
            raise UsageError("a pose-stage checkpoint is driven by pose sequences")
        return rasterize(normalize_group(list(driving)), height, width)
    if isinstance(driving, (PoseSequence, list, tuple)):
        raise UsageError("an end-to-end checkpoint is driven by raw RGB video, not poses")
    arr = np.asarray(driving, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[1:] != (height, width, 3):
        raise UsageError(f"driving video must be (T, {height}, {width}, 3), got {arr.shape}")
    return arr


@torch.no_grad()
def animate(
    bundle: ModelBundle | str | Path,
    ref_image: np.ndarray,
    driving,
    steps: int = 20,
    seed: int = 0,
    prompt: str | None = None,
    motion_hint: str | None = None,
    appearance_hint: str | None = None,
    fps: float | None = None,
) -> np.ndarray:
    """Animate ``ref_image`` with ``driving``; output has one warm-up second prepended.

    Returns (T + ceil(fps), H, W, 3) float32 frames in [0, 1].
    """
    if not isinstance(bundle, ModelBundle):
        bundle = load_checkpoint(bundle)
    ref = np.asarray(ref_image, dtype=np.float32)
    H, W = ref.shape[:2]
    fps = fps or (driving[0].fps if isinstance(driving, (list, tuple)) and driving
                  and isinstance(driving[0], PoseSequence)
                  else driving.fps if isinstance(driving, PoseSequence)
                  else bundle.settings.get("fps", 8.0))
    frames = driving_frames(bundle, driving, H, W)
    frames = prepend_warmup_inference(frames, fps)
    n_out = len(frames)
    st = bundle.codec.cfg.temporal_stride
    pad = (-(n_out - 1)) % st
    if pad:
        frames = np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)])
    if prompt is None:
        prompt = PromptCache().get(frames, ref, motion_hint, appearance_hint).fused_text
    text = bundle.model.embed_text([prompt])
    codec = bundle.codec
    layout = bundle.settings.get("layout", "spatial")
    ex = Example(frames, np.zeros_like(frames), ref, prompt)
    ctx, _, m = encode_batch(codec, [ex], layout, fps)
    z = sample_latents(bundle.model, ctx, m, text, steps, seed,
                       bundle.settings.get("prediction", "eps"), layout)
    if layout == "spatial":
        video = codec.decode(z[0])[:, :, W:]
    else:
        n_lat = (z.shape[2] - 1) // 2
        video = codec.decode(z[0][:, -n_lat:])
    return np.ascontiguousarray(video[:n_out])


def self_drive_psnr(bundle: ModelBundle, clip: Clip, steps: int = 20, seed: int = 0) -> float:
    """PSNR of reconstructing a clip from its own first frame and poses (warm-up excluded)."""
    from .codec import psnr

    out = animate(bundle, clip.video[0], clip.poses, steps=steps, seed=seed,
                  motion_hint=clip.family, appearance_hint=clip.character.tag)
    return psnr(out[warmup_frames(clip.fps):], clip.video)
