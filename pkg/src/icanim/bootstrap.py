"""Self-bootstrapped pseudo-pair synthesis, quality filtering and triplet assembly.

A pose-stage model re-animates each source clip's motion onto a new
reference character. The synthesized clip becomes the driving video
``V_o`` for end-to-end training, with the untouched source clip as the
target ``V_src`` and its first frame as ``I_ref``. Clips are kept only if
their mean quality score clears the threshold and, optionally, a human
approved them in the flag file.

Manifest: one JSON object per line with keys ``id``, ``v_o_path``,
``v_src_path``, ``i_ref_path``, ``scores`` (four floats, or null) and
``manual_flag``. Paths are relative to the manifest's directory.

Flag file: one ``<id> approved|rejected|pending`` pair per line; blank
lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import ModelBundle
from .blobio import atomic_write_bytes
from .composer import warmup_frames
from .data import Clip
from .errors import CheckpointError, ManifestError, ParameterError, ScoringError
from .scoring import DIMENSIONS, Scorer, Scores, get_scorer
from .skeleton import PoseSequence, random_character, render_character, save_pose
from .trainer import Triplet, animate
from .videoio import is_complete, load_image, load_video, save_image, save_video

logger = logging.getLogger(__name__)

MANUAL_FLAGS = ("approved", "rejected", "pending")


@dataclass
class TripletRecord:
    record_id: str
    v_o_path: str
    v_src_path: str
    i_ref_path: str | None = None
    scores: tuple[float, float, float, float] | None = None
    manual_flag: str = "pending"

    def __post_init__(self) -> None:
        if self.manual_flag not in MANUAL_FLAGS:
            raise ParameterError(f"manual_flag must be one of {MANUAL_FLAGS}, got {self.manual_flag!r}")
        if self.scores is not None:
            self.scores = tuple(float(s) for s in self.scores)
            if len(self.scores) != 4 or not all(1.0 <= s <= 5.0 for s in self.scores):
                raise ParameterError(f"{self.record_id}: scores must be four values in [1, 5]")

    @property
    def mean_score(self) -> float | None:
        return None if self.scores is None else float(np.mean(self.scores))

    def to_row(self) -> dict:
        return {
            "id": self.record_id,
            "v_o_path": self.v_o_path,
            "v_src_path": self.v_src_path,
            "i_ref_path": self.i_ref_path,
            "scores": None if self.scores is None else list(self.scores),
            "manual_flag": self.manual_flag,
        }


@dataclass(frozen=True)
class FilterPolicy:
    auto_threshold: float = 4.5
    require_manual: bool = False
    strict: bool = True

    def __post_init__(self) -> None:
        if not 1.0 <= self.auto_threshold <= 5.0:
            raise ParameterError(f"auto_threshold {self.auto_threshold} not in [1, 5]")

    def passes(self, mean: float) -> bool:
        return mean > self.auto_threshold if self.strict else mean >= self.auto_threshold


@dataclass
class BootstrapSummary:
    records: list[TripletRecord]
    accepted: list[TripletRecord]
    report: list[str] = field(default_factory=list)
    manifest: Path | None = None


# synthesis and scoring ---------------------------------------------------

def synthesize_pair(
    bundle: ModelBundle,
    p_src: PoseSequence | list[PoseSequence],
    i_o: np.ndarray,
    seed: int = 0,
    steps: int = 20,
    appearance_hint: str | None = None,
    motion_hint: str | None = None,
) -> np.ndarray:
    """Animate ``i_o`` with the source poses; the warm-up second is stripped.

    The result has exactly as many frames as ``p_src``.
    """
    if bundle.stage != "pose":
        raise CheckpointError(f"synthesis needs a 'pose' checkpoint, got {bundle.stage!r}")
    poses = p_src if isinstance(p_src, list) else [p_src]
    out = animate(bundle, i_o, poses, steps=steps, seed=seed,
                  motion_hint=motion_hint, appearance_hint=appearance_hint)
    return out[warmup_frames(poses[0].fps):]


def score_record(video: np.ndarray, scorer: Scorer | None = None) -> Scores:
    scorer = scorer or get_scorer()
    try:
        return scorer.score(video)
    except ScoringError:
        raise
    except Exception as e:  # any scorer failure is a scoring error
        raise ScoringError(f"scorer {getattr(scorer, 'name', scorer)!r} failed: {e}") from e


def motion_energy(video: np.ndarray) -> np.ndarray:
    """Mean absolute frame difference per step, length T-1."""
    v = np.asarray(video, dtype=np.float64)
    return np.abs(np.diff(v, axis=0)).mean(axis=(1, 2, 3))


def pose_energy(poses: PoseSequence | list[PoseSequence]) -> np.ndarray:
    seqs = poses if isinstance(poses, list) else [poses]
    j = np.concatenate([s.joints for s in seqs], axis=1)
    return np.linalg.norm(np.diff(j, axis=0), axis=-1).mean(axis=1)


def trajectory_correlation(video: np.ndarray, poses: PoseSequence | list[PoseSequence]) -> float:
    """Pearson correlation between pixel motion energy and joint motion energy over time.

    A generated clip that follows its driving poses moves when, and as
    much as, the skeleton does. Returns 0 when either signal is constant.
    """
    a, b = motion_energy(video), pose_energy(poses)
    if len(a) != len(b):
        raise ParameterError(f"video has {len(a) + 1} frames, poses {len(b) + 1}")
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def restyled_reference(
    source: Clip, donor: Clip, rng: np.random.Generator, height: int, width: int
) -> tuple[np.ndarray, str]:
    """A new character in the donor's first pose, colour distinct from the source."""
    char = random_character(rng)
    while char.color == source.character.color:
        char = random_character(rng)
    first = [PoseSequence(p.frames[:1], p.fps, p.topology) for p in donor.poses]
    return render_character(first, char, height, width)[0], char.tag


# manual flags and filtering -----------------------------------------------

def read_manual_flags(path: str | Path) -> dict[str, str]:
    flags: dict[str, str] = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in MANUAL_FLAGS:
            raise ManifestError(f"expected '<id> approved|rejected|pending', got {raw!r}", n)
        flags[parts[0]] = parts[1]
    return flags


def write_flag_template(records: Sequence[TripletRecord], path: str | Path) -> None:
    lines = ["# edit the second column: approved | rejected | pending"]
    lines += [f"{r.record_id} {r.manual_flag}" for r in records]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def apply_manual_flags(records: Sequence[TripletRecord], flags: dict[str, str]) -> list[TripletRecord]:
    return [replace(r, manual_flag=flags.get(r.record_id, r.manual_flag)) for r in records]


def filter_records(
    records: Sequence[TripletRecord], policy: FilterPolicy, report: list[str] | None = None
) -> list[TripletRecord]:
    """Keep records whose mean score passes and, if required, a human approved."""
    kept = []
    for r in records:
        if r.scores is None:
            msg = f"{r.record_id}: pending (no scores)"
        elif not policy.passes(r.mean_score):
            msg = f"{r.record_id}: rejected, mean {r.mean_score:.3f} vs {policy.auto_threshold}"
        elif policy.require_manual and r.manual_flag != "approved":
            msg = f"{r.record_id}: excluded, manual flag {r.manual_flag}"
        else:
            kept.append(r)
            msg = f"{r.record_id}: kept, mean {r.mean_score:.3f}"
        if report is not None:
            report.append(msg)
        logger.debug(msg)
    return kept


# manifest -----------------------------------------------------------------

def build_triplets(accepted: Sequence[TripletRecord], manifest_path: str | Path) -> Path:
    """Write the triplet manifest, extracting ``I_ref`` as frame 0 of each ``V_src``."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    root.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    rows = []
    for r in accepted:
        if r.record_id in seen:
            raise ManifestError(f"duplicate id {r.record_id!r}")
        seen.add(r.record_id)
        for key in ("v_o_path", "v_src_path"):
            if not is_complete(root / getattr(r, key)):
                raise ManifestError(f"{r.record_id}: dangling {key} {getattr(r, key)!r}")
        v_src, _ = load_video(root / r.v_src_path)
        i_ref = f"refs/{r.record_id}.png"
        save_image(root / i_ref, v_src[0])
        rows.append(replace(r, i_ref_path=i_ref).to_row())
    text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    atomic_write_bytes(manifest_path, text.encode())
    return manifest_path


def read_manifest(path: str | Path) -> list[TripletRecord]:
    path = Path(path)
    out, seen = [], set()
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        if not raw.strip():
            continue
        try:
            row = json.loads(raw)
            rec = TripletRecord(row["id"], row["v_o_path"], row["v_src_path"], row.get("i_ref_path"),
                                row.get("scores"), row.get("manual_flag", "pending"))
        except (ValueError, KeyError, TypeError, ParameterError) as e:
            raise ManifestError(f"bad row: {e}", n) from e
        if rec.record_id in seen:
            raise ManifestError(f"duplicate id {rec.record_id!r}", n)
        seen.add(rec.record_id)
        out.append(rec)
    return out


def verify_manifest(path: str | Path) -> None:
    """Every reference resolves and ``I_ref`` equals frame 0 of ``V_src`` exactly."""
    root = Path(path).parent
    for rec in read_manifest(path):
        for key in ("v_o_path", "v_src_path"):
            if not is_complete(root / getattr(rec, key)):
                raise ManifestError(f"{rec.record_id}: dangling {key}")
        if rec.i_ref_path is None or not (root / rec.i_ref_path).is_file():
            raise ManifestError(f"{rec.record_id}: missing i_ref")
        v_src, _ = load_video(root / rec.v_src_path)
        if not np.array_equal(load_image(root / rec.i_ref_path), v_src[0]):
            raise ManifestError(f"{rec.record_id}: i_ref differs from v_src frame 0")


def load_triplets(path: str | Path) -> list[Triplet]:
    root = Path(path).parent
    out = []
    for rec in read_manifest(path):
        v_o, fps = load_video(root / rec.v_o_path)
        v_src, _ = load_video(root / rec.v_src_path)
        out.append(Triplet(rec.record_id, v_o, v_src, fps))
    return out


# pipeline -----------------------------------------------------------------

def run_bootstrap(
    bundle: ModelBundle,
    sources: Sequence[Clip],
    out_dir: str | Path,
    policy: FilterPolicy = FilterPolicy(),
    scorer: Scorer | None = None,
    seed: int = 0,
    steps: int = 20,
    flags_path: str | Path | None = None,
    workers: int = 1,
) -> BootstrapSummary:
    """Synthesize, score, filter and write the triplet manifest for ``sources``."""
    if bundle.stage != "pose":
        raise CheckpointError(f"bootstrap needs a 'pose' checkpoint, got {bundle.stage!r}")
    out = Path(out_dir)
    scorer = scorer or get_scorer()
    H, W = sources[0].video.shape[1:3] if sources else (0, 0)

    def job(k: int) -> TripletRecord:
        src = sources[k]
        rng = np.random.default_rng([seed, k])
        donor = sources[int(rng.integers(len(sources)))]
        i_o, tag = restyled_reference(src, donor, rng, H, W)
        v_o = synthesize_pair(bundle, src.poses, i_o, seed=seed + k, steps=steps,
                              appearance_hint=tag, motion_hint=src.family)
        rid = f"pair{k:04d}"
        save_video(out / "v_o" / rid, v_o, src.fps)
        save_video(out / "v_src" / rid, src.video, src.fps)
        save_pose(src.poses, out / "poses" / f"{rid}.jsonl")
        try:
            scores = score_record(v_o, scorer).as_tuple()
        except ScoringError as e:
            logger.warning("%s: %s", rid, e)
            scores = None
        return TripletRecord(rid, f"v_o/{rid}", f"v_src/{rid}", scores=scores)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(job, range(len(sources))))
    else:
        records = [job(k) for k in range(len(sources))]
    if flags_path is not None and Path(flags_path).is_file():
        records = apply_manual_flags(records, read_manual_flags(flags_path))
    if flags_path is None:
        write_flag_template(records, out / "flags.txt")
    report: list[str] = []
    accepted = filter_records(records, policy, report)
    scored = [r.to_row() for r in records]
    atomic_write_bytes(out / "scores.jsonl",
                       "".join(json.dumps(r, sort_keys=True) + "\n" for r in scored).encode())
    manifest = build_triplets(accepted, out / "triplets.jsonl")
    report.append(f"kept {len(accepted)} of {len(records)}")
    atomic_write_bytes(out / "filter_report.txt", ("\n".join(report) + "\n").encode())
    return BootstrapSummary(records, accepted, report, manifest)


__all__ = [
    "DIMENSIONS", "MANUAL_FLAGS", "TripletRecord", "FilterPolicy", "BootstrapSummary",
    "synthesize_pair", "score_record", "trajectory_correlation", "filter_records",
    "read_manual_flags", "apply_manual_flags", "build_triplets", "read_manifest",
    "verify_manifest", "load_triplets", "run_bootstrap",
]
