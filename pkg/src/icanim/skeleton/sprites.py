"""Synthetic character appearance: stick-figure sprites rendered from poses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import RenderStyle, rasterize
from .topology import PoseSequence

SPRITE_COLORS: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 90, 230),
    "yellow": (230, 210, 40),
    "magenta": (210, 50, 200),
    "cyan": (40, 210, 220),
    "orange": (240, 140, 30),
    "white": (235, 235, 235),
}
BACKGROUNDS: dict[str, tuple[int, int, int]] = {
    "charcoal": (40, 40, 48),
    "navy": (20, 24, 70),
    "forest": (20, 60, 30),
    "plum": (60, 25, 55),
}


@dataclass(frozen=True)
class Character:
    """Appearance of a synthetic subject; ``color`` names its tag."""

    color: str = "red"
    background: str = "charcoal"
    thickness: float = 2.0

    @property
    def tag(self) -> str:
        return self.color

    def style(self, height: int) -> RenderStyle:
        return RenderStyle(
            normalized=False,
            line_width=self.thickness,
            joint_radius=self.thickness / 2,
            joint_color=None,
            body_color=SPRITE_COLORS[self.color],
            background=BACKGROUNDS[self.background],
            # head disc
            joint_radii={0: max(self.thickness, 0.09 * height)},
        )


def random_character(rng: np.random.Generator) -> Character:
    return Character(
        color=str(rng.choice(sorted(SPRITE_COLORS))),
        background=str(rng.choice(sorted(BACKGROUNDS))),
        thickness=float(rng.choice([1.5, 2.0, 2.5])),
    )


def render_character(
    seq: PoseSequence | list[PoseSequence], character: Character, height: int, width: int
) -> np.ndarray:
    """Render the subject(s) of ``seq`` as a (T, H, W, 3) float video."""
    return rasterize(seq, height, width, character.style(height))


def dominant_color_name(image: np.ndarray) -> str | None:
    """Nearest named sprite color among pixels that differ from the border color."""
    img = np.asarray(image, dtype=np.float64)
    if img.max() <= 1.0:
        img = img * 255.0
    border = np.concatenate([img[0], img[-1], img[:, 0], img[:, -1]])
    bg = np.median(border, axis=0)
    fg = img[np.abs(img - bg).sum(-1) > 60]
    if len(fg) == 0:
        return None
    mean = fg.mean(axis=0)
    names = sorted(SPRITE_COLORS)
    d = [np.abs(np.asarray(SPRITE_COLORS[n]) - mean).sum() for n in names]
    return names[int(np.argmin(d))]
