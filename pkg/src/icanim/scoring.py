"""Four-dimension video quality scoring on a 1 to 5 scale.

The default ``heuristic`` scorer is a cheap, deterministic proxy and makes
no claim to agree with learned perceptual benchmarks:

* imaging quality: mean Laplacian energy of luma (sharpness), mapped
  ``1 + 4 * (1 - exp(-energy / SHARPNESS_REF))``, minus a noise penalty
  ``4 * min(1, noise / NOISE_REF)`` where ``noise`` is the median absolute
  Laplacian (near zero on clean flat-shaded frames);
* motion smoothness: mean absolute second temporal difference (jerk),
  mapped ``5 - 4 * min(1, jerk / JERK_REF)``;
* temporal consistency: mean absolute change of per-frame mean colour
  (global flicker), mapped ``5 - 4 * min(1, flicker / FLICKER_REF)``;
* appearance consistency: mean colour-histogram intersection between
  frame 0 and every frame, mapped ``1 + 4 * intersection``.

A static clip scores 5 on motion smoothness and temporal consistency.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import ScoringError

DIMENSIONS = (
    "imaging_quality",
    "motion_smoothness",
    "temporal_consistency",
    "appearance_consistency",
)
DIMENSION_TITLES = {
    "imaging_quality": "Imaging Quality",
    "motion_smoothness": "Motion Smoothness",
    "temporal_consistency": "Temporal Consistency",
    "appearance_consistency": "Appearance Consistency",
}

SHARPNESS_REF = 0.01
NOISE_REF = 0.1
JERK_REF = 0.2
FLICKER_REF = 0.05
HIST_BINS = 8


@dataclass(frozen=True)
class Scores:
    imaging_quality: float
    motion_smoothness: float
    temporal_consistency: float
    appearance_consistency: float

    def __post_init__(self) -> None:
        for k, v in asdict(self).items():
            if not 1.0 <= v <= 5.0:
                raise ScoringError(f"{k} score {v} outside [1, 5]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return tuple(getattr(self, d) for d in DIMENSIONS)

    @property
    def mean(self) -> float:
        return float(np.mean(self.as_tuple()))


class Scorer(Protocol):
    name: str

    def score(self, video: np.ndarray) -> Scores: ...


def _clamp(v: float) -> float:
    return float(min(5.0, max(1.0, v)))


def _check(video: np.ndarray) -> np.ndarray:
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4 or v.shape[-1] != 3 or len(v) == 0:
        raise ScoringError(f"video must be non-empty (T, H, W, 3), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ScoringError("video has non-finite pixels")
    return v


def _laplacian(video: np.ndarray) -> np.ndarray:
    luma = video @ np.array([0.299, 0.587, 0.114])
    return (
        -4 * luma[:, 1:-1, 1:-1]
        + luma[:, :-2, 1:-1] + luma[:, 2:, 1:-1]
        + luma[:, 1:-1, :-2] + luma[:, 1:-1, 2:]
    )


def sharpness(video: np.ndarray) -> float:
    lap = _laplacian(video)
    return float(np.mean(lap**2)) if lap.size else 0.0


def noise_level(video: np.ndarray) -> float:
    lap = _laplacian(video)
    return float(np.median(np.abs(lap))) if lap.size else 0.0


def jerk(video: np.ndarray) -> float:
    if len(video) < 3:
        return 0.0
    return float(np.mean(np.abs(video[2:] - 2 * video[1:-1] + video[:-2])))


def flicker(video: np.ndarray) -> float:
    if len(video) < 2:
        return 0.0
    means = video.mean(axis=(1, 2))
    return float(np.mean(np.abs(np.diff(means, axis=0))))


def color_histogram(frame: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    idx = np.minimum((frame * bins).astype(int), bins - 1)
    flat = (idx[..., 0] * bins + idx[..., 1]) * bins + idx[..., 2]
    hist = np.bincount(flat.ravel(), minlength=bins**3).astype(np.float64)
    return hist / hist.sum()


def histogram_consistency(video: np.ndarray) -> float:
    h0 = color_histogram(video[0])
    return float(np.mean([np.minimum(h0, color_histogram(f)).sum() for f in video]))


class HeuristicScorer:
    name = "heuristic"

    def score(self, video: np.ndarray) -> Scores:
        v = np.clip(_check(video), 0.0, 1.0)
        return Scores(
            imaging_quality=_clamp(
                1 + 4 * (1 - np.exp(-sharpness(v) / SHARPNESS_REF))
                - 4 * min(1.0, noise_level(v) / NOISE_REF)
            ),
            motion_smoothness=_clamp(5 - 4 * min(1.0, jerk(v) / JERK_REF)),
            temporal_consistency=_clamp(5 - 4 * min(1.0, flicker(v) / FLICKER_REF)),
            appearance_consistency=_clamp(1 + 4 * histogram_consistency(v)),
        )


_REGISTRY: dict[str, Callable[[], Scorer]] = {"heuristic": HeuristicScorer}


def register_scorer(name: str, factory: Callable[[], Scorer]) -> None:
    _REGISTRY[name] = factory


def get_scorer(name: str = "heuristic") -> Scorer:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ScoringError(f"no scorer registered as {name!r}; have {sorted(_REGISTRY)}") from None
