"""Pose clip files.

A clip file holds one JSON object on a single line::

    {"fps": 8.0, "topology_id": "body18",
     "frames": [[[x, y, vis], ...one per joint], ...one per frame]}

``vis`` is 0 or 1. Multi-subject clips store one such line per subject.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import ValidationError
from .topology import PoseFrame, PoseSequence, get_topology, validate_sequence


def pose_to_record(seq: PoseSequence) -> dict:
    return {
        "fps": float(seq.fps),
        "topology_id": seq.topology.topology_id,
        "frames": [
            [[float(x), float(y), int(v)] for (x, y), v in zip(f.joints, f.visibility)]
            for f in seq.frames
        ],
    }


def pose_from_record(rec: dict) -> PoseSequence:
    try:
        topo = get_topology(rec["topology_id"])
        frames = [
            PoseFrame([[j[0], j[1]] for j in fr], [bool(j[2]) for j in fr])
            for fr in rec["frames"]
        ]
        seq = PoseSequence(frames, float(rec["fps"]), topo)
    except (KeyError, TypeError, IndexError) as e:
        raise ValidationError(f"malformed pose record: {e!r}") from e
    return validate_sequence(seq)


def save_pose(seqs: PoseSequence | list[PoseSequence], path: str | Path) -> None:
    if isinstance(seqs, PoseSequence):
        seqs = [seqs]
    lines = [json.dumps(pose_to_record(s), separators=(",", ":")) for s in seqs]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def load_poses(path: str | Path) -> list[PoseSequence]:
    """All subjects stored in a clip file."""
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}:{n}: {e}") from e
        out.append(pose_from_record(rec))
    if not out:
        raise ValidationError(f"{path}: no pose records")
    return out


def load_pose(path: str | Path) -> PoseSequence:
    return load_poses(path)[0]
