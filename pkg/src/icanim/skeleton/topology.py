"""Skeleton topology and pose containers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..errors import TopologyError, ValidationError


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint names, parent->child bones and their grouping into segments.

    ``segments`` maps a segment name to the indices of the bones it owns.
    """

    joint_names: tuple[str, ...]
    bones: tuple[tuple[int, int], ...]
    segments: dict[str, tuple[int, ...]]
    topology_id: str = "custom"

    def __post_init__(self) -> None:
        n = len(self.joint_names)
        for b, (p, c) in enumerate(self.bones):
            if not (0 <= p < n and 0 <= c < n):
                raise TopologyError(f"bone {b} ({p}, {c}) out of range for {n} joints")
            if p == c:
                raise TopologyError(f"bone {b} is a self-loop on joint {p}")
        owner: dict[int, str] = {}
        for name, idx in self.segments.items():
            for b in idx:
                if not 0 <= b < len(self.bones):
                    raise TopologyError(f"segment {name!r} references missing bone {b}")
                if b in owner:
                    raise TopologyError(f"bone {b} in both {owner[b]!r} and {name!r}")
                owner[b] = name
        missing = [b for b in range(len(self.bones)) if b not in owner]
        if missing:
            raise TopologyError(f"bones {missing} belong to no segment")
        parents: dict[int, int] = {}
        for p, c in self.bones:
            if c in parents:
                raise TopologyError(f"joint {c} has two parents ({parents[c]}, {p})")
            parents[c] = p
        # touching the order raises on cycles
        _ = self.bone_order

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @cached_property
    def parent(self) -> tuple[int, ...]:
        """Parent joint per joint, -1 for roots."""
        par = [-1] * self.num_joints
        for p, c in self.bones:
            par[c] = p
        return tuple(par)

    @property
    def roots(self) -> tuple[int, ...]:
        return tuple(j for j, p in enumerate(self.parent) if p < 0)

    @cached_property
    def bone_order(self) -> tuple[int, ...]:
        """Bone indices sorted so every parent bone precedes its children."""
        children: dict[int, list[int]] = {}
        for b, (p, _) in enumerate(self.bones):
            children.setdefault(p, []).append(b)
        order: list[int] = []
        seen: set[int] = set()
        stack = [j for j in range(self.num_joints) if self.parent[j] < 0]
        while stack:
            j = stack.pop()
            for b in children.get(j, ()):
                c = self.bones[b][1]
                if c in seen:
                    raise TopologyError(f"bone graph revisits joint {c}")
                seen.add(c)
                order.append(b)
                stack.append(c)
        if len(order) != len(self.bones):
            raise TopologyError("bone graph contains a cycle")
        return tuple(order)

    @cached_property
    def bone_segment(self) -> tuple[str, ...]:
        seg = [""] * len(self.bones)
        for name, idx in self.segments.items():
            for b in idx:
                seg[b] = name
        return tuple(seg)

    def to_dict(self) -> dict:
        return {
            "topology_id": self.topology_id,
            "joint_names": list(self.joint_names),
            "bones": [list(b) for b in self.bones],
            "segments": {k: list(v) for k, v in self.segments.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        try:
            return cls(
                joint_names=tuple(d["joint_names"]),
                bones=tuple((int(p), int(c)) for p, c in d["bones"]),
                segments={k: tuple(int(i) for i in v) for k, v in d["segments"].items()},
                topology_id=d.get("topology_id", "custom"),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, TopologyError):
                raise
            raise TopologyError(f"malformed topology record: {e}") from e


def load_topology(path: str | Path) -> SkeletonTopology:
    return SkeletonTopology.from_dict(json.loads(Path(path).read_text()))


def save_topology(topo: SkeletonTopology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(topo.to_dict(), indent=2) + "\n")


# OpenPose-style 18 joint body layout, rooted at the neck.
BODY18_JOINTS = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)
BODY18_BONES = (
    (1, 0),                    # 0  neck -> nose
    (1, 2), (2, 3), (3, 4),    # 1-3 right arm chain
    (1, 5), (5, 6), (6, 7),    # 4-6 left arm chain
    (1, 8), (8, 9), (9, 10),   # 7-9 right leg chain
    (1, 11), (11, 12), (12, 13),  # 10-12 left leg chain
    (0, 14), (14, 16),         # 13-14 right eye/ear
    (0, 15), (15, 17),         # 15-16 left eye/ear
)
BODY18_SEGMENTS = {
    "head": (0, 13, 14, 15, 16),
    "torso": (1, 4, 7, 10),
    "r_arm": (2, 3),
    "l_arm": (5, 6),
    "r_leg": (8, 9),
    "l_leg": (11, 12),
}

BODY18 = SkeletonTopology(
    joint_names=BODY18_JOINTS,
    bones=BODY18_BONES,
    segments=BODY18_SEGMENTS,
    topology_id="body18",
)

TOPOLOGIES: dict[str, SkeletonTopology] = {"body18": BODY18}


def get_topology(topology_id: str) -> SkeletonTopology:
    try:
        return TOPOLOGIES[topology_id]
    except KeyError:
        raise TopologyError(f"unknown topology id {topology_id!r}") from None


@dataclass
class PoseFrame:
    joints: np.ndarray  # (J, 2) pixel or normalized coordinates
    visibility: np.ndarray  # (J,) bool

    def __post_init__(self) -> None:
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=bool)


@dataclass
class PoseSequence:
    frames: list[PoseFrame]
    fps: float
    topology: SkeletonTopology = field(default=BODY18)

    @classmethod
    def from_arrays(
        cls,
        joints: np.ndarray,
        fps: float,
        topology: SkeletonTopology = BODY18,
        visibility: np.ndarray | None = None,
    ) -> "PoseSequence":
        joints = np.asarray(joints, dtype=np.float64)
        if visibility is None:
            visibility = np.ones(joints.shape[:2], dtype=bool)
        return cls(
            [PoseFrame(j, v) for j, v in zip(joints, visibility)], fps, topology
        )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def joints(self) -> np.ndarray:
        """Stacked coordinates, shape (T, J, 2)."""
        return np.stack([f.joints for f in self.frames])

    @property
    def visibility(self) -> np.ndarray:
        return np.stack([f.visibility for f in self.frames])

    def with_joints(self, joints: np.ndarray) -> "PoseSequence":
        return PoseSequence.from_arrays(joints, self.fps, self.topology, self.visibility)


def validate_sequence(seq: PoseSequence, topo: SkeletonTopology | None = None) -> PoseSequence:
    """Check a pose sequence against its topology and return it unchanged.

    Raises:
        ValidationError: naming the first offending frame (and joint, for
            non-finite coordinates).
    """
    topo = topo or seq.topology
    if not seq.frames:
        raise ValidationError("pose sequence is empty")
    if not (np.isfinite(seq.fps) and seq.fps > 0):
        raise ValidationError(f"fps must be positive, got {seq.fps}")
    if seq.topology is not topo and seq.topology != topo:
        raise ValidationError(
            f"sequence topology {seq.topology.topology_id!r} != {topo.topology_id!r}"
        )
    n = topo.num_joints
    for t, fr in enumerate(seq.frames):
        if fr.joints.ndim != 2 or fr.joints.shape[1] != 2:
            raise ValidationError(f"frame {t}: joints must be (J, 2), got {fr.joints.shape}")
        if fr.joints.shape[0] != n:
            raise ValidationError(
                f"frame {t}: has {fr.joints.shape[0]} joints, topology expects {n}"
            )
        if fr.visibility.shape != (n,):
            raise ValidationError(
                f"frame {t}: visibility shape {fr.visibility.shape} != ({n},)"
            )
        bad = np.argwhere(~np.isfinite(fr.joints))
        if len(bad):
            j = int(bad[0][0])
            raise ValidationError(f"non-finite coordinate at (frame {t}, joint {j})")
    return seq
