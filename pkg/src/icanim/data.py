"""Synthetic stick-figure corpus used as desk-scale training data."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blobio import atomic_write_bytes
from .errors import ValidationError
from .skeleton import (
    FAMILIES,
    Character,
    MotionSpec,
    PoseSequence,
    load_poses,
    random_character,
    render_character,
    save_pose,
    synth_motion,
)
from .videoio import load_video, save_video


@dataclass
class Clip:
    """A rendered character video with the poses that produced it."""

    clip_id: str
    poses: list[PoseSequence]
    character: Character
    video: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    family: str
    tags: dict = field(default_factory=dict)

    @property
    def fps(self) -> float:
        return self.poses[0].fps

    @property
    def pose(self) -> PoseSequence:
        return self.poses[0]


def make_clip(
    seed: int,
    num_frames: int = 17,
    height: int = 32,
    width: int = 32,
    fps: float = 8.0,
    family: str | None = None,
    character: Character | None = None,
    subjects: int = 1,
) -> Clip:
    """Deterministic synthetic clip: random family, appearance and motion per seed."""
    rng = np.random.default_rng(seed)
    family = family or str(rng.choice(FAMILIES))
    character = character or random_character(rng)
    freq = float(rng.uniform(0.6, 1.4))
    amp = float(rng.uniform(0.7, 1.2))
    if subjects == 1:
        centers = [None]
        fig_h = None
    else:
        centers = [((k + 0.5) / subjects, 0.5) for k in range(subjects)]
        fig_h = 0.55
    poses = []
    for k, c in enumerate(centers):
        spec = MotionSpec(family, amp, freq, num_frames, fps, height, width, center=c, figure_height=fig_h)
        poses.append(synth_motion(spec, int(rng.integers(2**31)) + k))
    video = render_character(poses, character, height, width)
    return Clip(f"clip{seed:05d}", poses, character, video, family)


def make_corpus(n: int, seed: int = 0, **kwargs) -> list[Clip]:
    return [make_clip(seed * 100_003 + i, **kwargs) for i in range(n)]


def save_corpus(clips: list[Clip], out_dir: str | Path) -> Path:
    """Pose files, frame directories and a ``corpus.jsonl`` index under ``out_dir``."""
    out = Path(out_dir)
    rows = []
    for c in clips:
        save_pose(c.poses, out / "poses" / f"{c.clip_id}.jsonl")
        save_video(out / "videos" / c.clip_id, c.video, c.fps)
        rows.append({
            "id": c.clip_id,
            "pose_path": f"poses/{c.clip_id}.jsonl",
            "video_path": f"videos/{c.clip_id}",
            "family": c.family,
            "character": asdict(c.character),
        })
    atomic_write_bytes(out / "corpus.jsonl",
                       "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows).encode())
    return out / "corpus.jsonl"


def load_corpus(path: str | Path) -> list[Clip]:
    """Read a corpus written by :func:`save_corpus` (directory or index file)."""
    p = Path(path)
    index = p / "corpus.jsonl" if p.is_dir() else p
    root = index.parent
    clips = []
    for n, raw in enumerate(index.read_text().splitlines(), 1):
        if not raw.strip():
            continue
        try:
            row = json.loads(raw)
            video, _ = load_video(root / row["video_path"])
            clips.append(Clip(row["id"], load_poses(root / row["pose_path"]),
                              Character(**row["character"]), video, row["family"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"{index}: line {n}: {e}") from e
    return clips
