"""Pose augmentation: per-segment bone length scaling and clip-level bbox normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import DegenerateExtentError, ParameterError
from .topology import PoseSequence, validate_sequence


@dataclass(frozen=True)
class AugmentConfig:
    apply_probability: float = 0.3
    scale_low: float = 0.8
    scale_high: float = 1.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ParameterError(f"apply_probability {self.apply_probability} not in [0, 1]")
        if not 0.0 < self.scale_low <= self.scale_high:
            raise ParameterError(
                f"need 0 < scale_low <= scale_high, got ({self.scale_low}, {self.scale_high})"
            )


def draw_segment_scales(
    segments: Mapping[str, object], cfg: AugmentConfig, rng: np.random.Generator
) -> dict[str, float]:
    """One uniform scale per segment, in sorted segment-name order."""
    return {
        name: float(rng.uniform(cfg.scale_low, cfg.scale_high)) for name in sorted(segments)
    }


def scale_bone_lengths(
    seq: PoseSequence,
    cfg: AugmentConfig | None = None,
    per_segment_scales: Mapping[str, float] | None = None,
    rng: np.random.Generator | None = None,
) -> PoseSequence:
    """Rescale every bone by its segment's factor, moving descendants rigidly.

    Bones are processed parent-first; each child is re-anchored at its
    (already moved) parent plus the scaled original offset. The same
    scales apply to every frame of the clip. Segments missing from
    ``per_segment_scales`` keep scale 1.
    """
    topo = seq.topology
    validate_sequence(seq)
    if per_segment_scales is None:
        cfg = cfg or AugmentConfig()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        per_segment_scales = draw_segment_scales(topo.segments, cfg, rng)
    unknown = set(per_segment_scales) - set(topo.segments)
    if unknown:
        raise ParameterError(f"unknown segments {sorted(unknown)}")
    for name, s in per_segment_scales.items():
        if not (np.isfinite(s) and s > 0):
            raise ParameterError(f"scale for segment {name!r} must be > 0, got {s}")

    old = seq.joints
    new = old.copy()
    for b in topo.bone_order:
        p, c = topo.bones[b]
        s = per_segment_scales.get(topo.bone_segment[b], 1.0)
        # written as a displacement so unit scales reproduce the input bit for bit
        new[:, c] = old[:, c] + (new[:, p] - old[:, p]) + (s - 1.0) * (old[:, c] - old[:, p])
    return seq.with_joints(new)


def clip_bbox(seq: PoseSequence) -> tuple[np.ndarray, np.ndarray]:
    """(min_xy, max_xy) over the visible joints of all frames."""
    joints, vis = seq.joints, seq.visibility
    if not vis.any():
        raise DegenerateExtentError("clip has no visible joints")
    pts = joints[vis]
    return pts.min(axis=0), pts.max(axis=0)


def normalize_to_bbox(seq: PoseSequence, eps: float = 1e-6, canvas: float = 1.0) -> PoseSequence:
    """Affinely map the clip's joint bounding box onto the unit square.

    ``eps`` is relative to ``canvas`` (the larger canvas side, in the
    input's units).
    """
    validate_sequence(seq)
    lo, hi = clip_bbox(seq)
    extent = hi - lo
    if np.any(extent < eps * canvas):
        raise DegenerateExtentError(
            f"bbox extent {extent.tolist()} below {eps * canvas:g}"
        )
    return seq.with_joints((seq.joints - lo) / extent)


def augment_pose(
    seq: PoseSequence, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[PoseSequence, bool]:
    """Training-time augmentation: maybe scale bones, then always normalize.

    Returns the augmented clip and whether bone scaling was applied.
    """
    applied = bool(rng.random() < cfg.apply_probability)
    if applied:
        seq = scale_bone_lengths(seq, cfg, rng=rng)
    return normalize_to_bbox(seq), applied


def normalize_group(seqs: list[PoseSequence], eps: float = 1e-6) -> list[PoseSequence]:
    """Normalize several subjects with their shared bounding box (keeps relative layout)."""
    if len(seqs) == 1:
        return [normalize_to_bbox(seqs[0], eps)]
    for s in seqs:
        validate_sequence(s)
    boxes = [clip_bbox(s) for s in seqs]
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    extent = hi - lo
    if np.any(extent < eps):
        raise DegenerateExtentError(f"group bbox extent {extent.tolist()} below {eps:g}")
    return [s.with_joints((s.joints - lo) / extent) for s in seqs]
