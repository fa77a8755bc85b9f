"""Deterministic skeleton rasterization into driving frames."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ParameterError
from .topology import PoseSequence

# one RGB color per BODY18 segment; other topologies cycle through these
SEGMENT_COLORS: dict[str, tuple[int, int, int]] = {
    "head": (255, 0, 170),
    "torso": (255, 170, 0),
    "r_arm": (255, 0, 0),
    "l_arm": (0, 255, 0),
    "r_leg": (0, 85, 255),
    "l_leg": (0, 255, 255),
}
_CYCLE = list(SEGMENT_COLORS.values())


@dataclass(frozen=True)
class RenderStyle:
    """How to draw a pose.

    ``normalized`` coordinates live in [0, 1]^2 and are mapped inside a
    ``margin`` (fraction of each canvas side); otherwise coordinates are
    pixels, where pixel column ``j`` spans ``[j, j + 1)``.
    """

    normalized: bool = True
    margin: float = 0.1
    line_width: float = 1.0
    joint_radius: float = 1.0
    joint_color: tuple[int, int, int] | None = (255, 255, 255)
    palette: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    body_color: tuple[int, int, int] | None = None
    background: tuple[int, int, int] = (0, 0, 0)
    joint_radii: dict[int, float] = field(default_factory=dict)

    def segment_color(self, name: str, k: int) -> tuple[int, int, int]:
        if self.body_color is not None:
            return self.body_color
        if name in self.palette:
            return self.palette[name]
        return SEGMENT_COLORS.get(name, _CYCLE[k % len(_CYCLE)])


SKELETON_STYLE = RenderStyle()


def _to_pixels(joints: np.ndarray, h: int, w: int, style: RenderStyle) -> np.ndarray:
    if not style.normalized:
        return joints
    mx, my = style.margin * w, style.margin * h
    out = np.empty_like(joints)
    out[..., 0] = mx + joints[..., 0] * (w - 2 * mx)
    out[..., 1] = my + joints[..., 1] * (h - 2 * my)
    return out


def _segment_distance(xs: np.ndarray, ys: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every pixel center to segment a-b; a, b are (N, 2)."""
    d = b - a
    len2 = (d**2).sum(-1)
    px = xs[None] - a[:, 0, None, None]
    py = ys[None] - a[:, 1, None, None]
    safe = np.where(len2 > 0, len2, 1.0)
    u = (px * d[:, 0, None, None] + py * d[:, 1, None, None]) / safe[:, None, None]
    u = np.clip(np.where(len2[:, None, None] > 0, u, 0.0), 0.0, 1.0)
    qx = px - u * d[:, 0, None, None]
    qy = py - u * d[:, 1, None, None]
    return np.sqrt(qx**2 + qy**2)


def rasterize(
    seq: PoseSequence | Sequence[PoseSequence],
    height: int,
    width: int,
    style: RenderStyle = SKELETON_STYLE,
) -> np.ndarray:
    """Render poses to a float32 video of shape (T, H, W, 3) in [0, 1].

    Several sequences (multi-subject clips) are drawn onto the same
    canvas in list order; they must share frame count. Bones are drawn
    in topological order with their segment color, then visible joints
    as discs. Pixels are hard-thresholded, so output is byte-stable.
    """
    if height <= 0 or width <= 0:
        raise ParameterError(f"canvas must be positive, got {height}x{width}")
    subjects = [seq] if isinstance(seq, PoseSequence) else list(seq)
    if not subjects:
        raise ParameterError("nothing to rasterize")
    T = len(subjects[0])
    if any(len(s) != T for s in subjects):
        raise ParameterError("multi-subject sequences must share frame count")

    canvas = np.empty((T, height, width, 3), dtype=np.uint8)
    canvas[:] = np.asarray(style.background, dtype=np.uint8)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    half = style.line_width / 2.0

    for s in subjects:
        topo = s.topology
        pix = _to_pixels(s.joints, height, width, style)
        vis = s.visibility
        seg_names = sorted(topo.segments)
        for b in topo.bone_order:
            p, c = topo.bones[b]
            name = topo.bone_segment[b]
            color = np.asarray(style.segment_color(name, seg_names.index(name)), np.uint8)
            on = vis[:, p] & vis[:, c]
            if not on.any() or half <= 0:
                continue
            frames = np.flatnonzero(on)
            dist = _segment_distance(xs, ys, pix[frames, p], pix[frames, c])
            hit = dist <= half
            for k, t in enumerate(frames):
                canvas[t][hit[k]] = color
        for j in range(topo.num_joints):
            r = style.joint_radii.get(j, style.joint_radius)
            if r <= 0 or not vis[:, j].any():
                continue
            color = style.joint_color
            if color is None:
                color = style.body_color or (255, 255, 255)
            col = np.asarray(color, np.uint8)
            for t in np.flatnonzero(vis[:, j]):
                x, y = pix[t, j]
                hit = (xs - x) ** 2 + (ys - y) ** 2 <= r * r
                canvas[t][hit] = col
    return canvas.astype(np.float32) / 255.0
