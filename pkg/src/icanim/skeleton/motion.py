"""Procedural stick-figure motion used in place of pose estimates on real video."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from .topology import BODY18, PoseSequence, SkeletonTopology

FAMILIES = ("wave", "walk", "bounce")

# rest pose in body units: x right, y down, figure spans y in [-0.5, 0.5]
_REST = np.array([
    [0.00, -0.38],  # nose
    [0.00, -0.27],  # neck
    [-0.12, -0.25], [-0.15, -0.08], [-0.17, 0.07],  # right arm (image left)
    [0.12, -0.25], [0.15, -0.08], [0.17, 0.07],     # left arm
    [-0.07, 0.05], [-0.08, 0.25], [-0.09, 0.45],    # right leg
    [0.07, 0.05], [0.08, 0.25], [0.09, 0.45],       # left leg
    [-0.03, -0.41], [0.03, -0.41], [-0.06, -0.39], [0.06, -0.39],
])

# joint index lookups for BODY18
_R_ELBOW, _R_WRIST, _L_ELBOW, _L_WRIST = 3, 4, 6, 7
_R_KNEE, _R_ANKLE, _L_KNEE, _L_ANKLE = 9, 10, 12, 13


@dataclass(frozen=True)
class MotionSpec:
    """Parametric motion family with amplitude, frequency (Hz) and length.

    ``center`` and ``figure_height`` are fractions of the canvas; when
    ``None`` they are drawn from the seed.
    """

    family: str = "wave"
    amplitude: float = 1.0
    frequency: float = 1.0
    num_frames: int = 17
    fps: float = 8.0
    height: int = 32
    width: int = 32
    center: tuple[float, float] | None = None
    figure_height: float | None = None

    @property
    def duration(self) -> float:
        return self.num_frames / self.fps


def _rotate(v: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rotate (2,) offset by per-frame angles -> (T, 2)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * v[0] - s * v[1], s * v[0] + c * v[1]], axis=-1)


def _angles(spec: MotionSpec, phase: float, T: int) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Per-joint bone rotation (relative to parent chain) and root offset."""
    t = np.arange(T) / spec.fps
    w = 2 * np.pi * spec.frequency * t + phase
    a = spec.amplitude
    rot: dict[int, np.ndarray] = {}
    root = np.zeros((T, 2))
    if spec.family == "wave":
        # right upper arm raised sideways, forearm swings
        rot[_R_ELBOW] = np.full(T, 1.9)
        rot[_R_WRIST] = 0.6 * a * np.sin(w)
    elif spec.family == "walk":
        swing = 0.45 * a * np.sin(w)
        rot[_R_KNEE] = swing
        rot[_L_KNEE] = -swing
        rot[_R_ANKLE] = -0.35 * a * np.clip(np.sin(w + 0.6), 0, None)
        rot[_L_ANKLE] = -0.35 * a * np.clip(-np.sin(w + 0.6), 0, None)
        rot[_R_ELBOW] = -0.8 * swing
        rot[_L_ELBOW] = 0.8 * swing
        root[:, 1] = -0.015 * a * np.cos(2 * w)
    elif spec.family == "bounce":
        lift = 0.5 * a * (1 - np.cos(w))
        root[:, 1] = -0.08 * lift
        rot[_R_ELBOW] = 0.9 * lift
        rot[_L_ELBOW] = -0.9 * lift
        rot[_R_KNEE] = -0.15 * a * np.cos(w)
        rot[_L_KNEE] = 0.15 * a * np.cos(w)
    else:
        raise ParameterError(f"unknown motion family {spec.family!r}; choose from {FAMILIES}")
    return rot, root


def synth_motion(
    spec: MotionSpec, seed: int, topology: SkeletonTopology = BODY18
) -> PoseSequence:
    """Generate a smooth periodic pose sequence in pixel coordinates.

    Bones are rotated by forward kinematics from a seeded rest pose;
    every time-varying term scales with ``amplitude``.
    """
    if spec.family not in FAMILIES:
        raise ParameterError(f"unknown motion family {spec.family!r}; choose from {FAMILIES}")
    if topology.num_joints != len(_REST):
        raise ParameterError("procedural motion is defined for the 18-joint body topology")
    if spec.num_frames < 1 or spec.fps <= 0:
        raise ParameterError("num_frames must be >= 1 and fps > 0")
    rng = np.random.default_rng(seed)
    fig_h = spec.figure_height if spec.figure_height is not None else rng.uniform(0.6, 0.75)
    if spec.center is not None:
        cx, cy = spec.center
    else:
        cx, cy = 0.5 + rng.uniform(-0.08, 0.08), 0.5 + rng.uniform(-0.04, 0.04)
    limb = rng.uniform(0.9, 1.1, size=len(topology.bones))
    jitter = rng.uniform(-0.08, 0.08, size=len(topology.bones))
    phase = float(rng.uniform(0, 2 * np.pi))

    T = spec.num_frames
    rot, root = _angles(spec, phase, T)
    # cumulative rotation follows the kinematic chain
    cum = np.zeros((T, topology.num_joints))
    pos = np.zeros((T, topology.num_joints, 2))
    for r in topology.roots:
        pos[:, r] = _REST[r] + root
    for b in topology.bone_order:
        p, c = topology.bones[b]
        cum[:, c] = cum[:, p] + rot.get(c, 0.0) + jitter[b]
        offset = (_REST[c] - _REST[p]) * limb[b]
        pos[:, c] = pos[:, p] + _rotate(offset, cum[:, c])
    scale = fig_h * spec.height
    pix = np.empty_like(pos)
    pix[..., 0] = cx * spec.width + pos[..., 0] * scale
    pix[..., 1] = cy * spec.height + pos[..., 1] * scale
    return PoseSequence.from_arrays(pix, spec.fps, topology)
