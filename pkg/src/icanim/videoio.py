"""Videos on disk: a directory of lossless PNG frames plus ``meta.json``.

``meta.json`` holds ``{"fps", "height", "width", "num_frames"}``. Frames
are named ``00000.png``, ``00001.png`` and so on. Float videos in [0, 1]
are quantized to 8 bits on write; loading returns float32 ``uint8 / 255``.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .blobio import atomic_write_bytes
from .errors import ValidationError


def to_uint8(frames: np.ndarray) -> np.ndarray:
    arr = np.asarray(frames)
    if arr.dtype == np.uint8:
        return arr
    if not np.all(np.isfinite(arr)):
        raise ValidationError("cannot quantize non-finite pixels")
    return (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def save_image(path: str | Path, image: np.ndarray) -> Path:
    arr = to_uint8(image)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValidationError(f"image must be (H, W, 3), got {arr.shape}")
    import io

    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
    return Path(path)


def load_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except OSError as e:
        raise ValidationError(f"cannot read image {path}: {e}") from e
    return arr.astype(np.float32) / 255.0


def save_video(path: str | Path, video: np.ndarray, fps: float) -> Path:
    """Write frames then meta into a temp dir and rename it into place."""
    arr = to_uint8(video)
    if arr.ndim != 4 or arr.shape[-1] != 3 or len(arr) == 0:
        raise ValidationError(f"video must be non-empty (T, H, W, 3), got {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        for i, frame in enumerate(arr):
            Image.fromarray(frame).save(tmp / f"{i:05d}.png")
        meta = {"fps": float(fps), "height": int(arr.shape[1]), "width": int(arr.shape[2]),
                "num_frames": int(arr.shape[0])}
        (tmp / "meta.json").write_text(json.dumps(meta, sort_keys=True))
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_meta(path: str | Path) -> dict:
    meta_path = Path(path) / "meta.json"
    try:
        return json.loads(meta_path.read_text())
    except (OSError, ValueError) as e:
        raise ValidationError(f"cannot read {meta_path}: {e}") from e


def load_video(path: str | Path) -> tuple[np.ndarray, float]:
    """(T, H, W, 3) float32 frames and fps."""
    path = Path(path)
    meta = read_meta(path)
    frames = [load_image(path / f"{i:05d}.png") for i in range(meta["num_frames"])]
    video = np.stack(frames)
    if video.shape[1:3] != (meta["height"], meta["width"]):
        raise ValidationError(f"{path}: frame size {video.shape[1:3]} disagrees with meta.json")
    return video, float(meta["fps"])


def is_complete(path: str | Path) -> bool:
    p = Path(path)
    if not (p / "meta.json").is_file():
        return False
    try:
        n = read_meta(p)["num_frames"]
    except (ValidationError, KeyError):
        return False
    return all((p / f"{i:05d}.png").is_file() for i in range(n))
