"""Benchmark harness: pairing manifest, batch generation, scoring, GSB and reports.

Manifest format (JSON lines, version 1). The first line is a header
``{"schema": "icanim-bench", "version": 1}``; every following line is one
entry::

    {"type": "driving", "id": "d0", "path": "poses/d0.jsonl",
     "video": "videos/d0", "category": "human-full", "camera": "static"}
    {"type": "reference", "id": "r0", "path": "refs/r0.png", "category": "cartoon"}
    {"type": "pairing", "driving": "d0", "reference": "r0", "pairing_type": "one2one"}

``path`` of a driving entry is a pose file (used by pose-stage models);
``video`` is an optional frame directory (required for end-to-end
models). Pairings may carry an explicit ``id``; otherwise it is
``"<driving>__<reference>"``. Relative paths resolve against the
manifest's directory.

GSB lead is defined here as ``(good - bad) / (good + same + bad) * 100``,
aggregated over judgment records and rounded to two decimals.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .backbone import ModelBundle
from .blobio import atomic_write_bytes
from .errors import IcanimError, ManifestError, ParameterError, ScoringError
from .scoring import DIMENSION_TITLES, DIMENSIONS, Scorer, Scores, get_scorer
from .skeleton import PoseSequence, load_poses, save_pose
from .trainer import animate
from .videoio import is_complete, load_image, load_video, save_image, save_video, to_uint8

logger = logging.getLogger(__name__)

SCHEMA = "icanim-bench"
VERSION = 1
DRIVING_CATEGORIES = ("human-face", "human-upper", "human-full", "animal", "cartoon", "multi-subject")
CAMERAS = ("tracked", "static")
PAIRING_TYPES = ("one2one", "one2multi", "multi2multi")
CSV_COLUMNS = ("pairing_id", *DIMENSIONS)


@dataclass(frozen=True)
class DrivingEntry:
    entry_id: str
    path: str
    category: str
    camera: str = "static"
    video: str | None = None


@dataclass(frozen=True)
class ReferenceEntry:
    entry_id: str
    path: str
    category: str


@dataclass(frozen=True)
class Pairing:
    pairing_id: str
    driving: str
    reference: str
    pairing_type: str


@dataclass
class BenchmarkManifest:
    driving: dict[str, DrivingEntry]
    references: dict[str, ReferenceEntry]
    pairings: list[Pairing]
    root: Path = Path(".")


@dataclass
class PairingScore:
    pairing_id: str
    scores: Scores


@dataclass(frozen=True)
class GSBRecord:
    baseline: str
    good: int
    same: int
    bad: int

    def __post_init__(self) -> None:
        if min(self.good, self.same, self.bad) < 0:
            raise ParameterError("GSB counts must be non-negative")


@dataclass
class EvaluationReport:
    method: str
    rows: list[PairingScore]
    missing: list[str] = field(default_factory=list)
    gsb: list[GSBRecord] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.missing)

    def means(self) -> dict[str, float]:
        if not self.rows:
            raise ScoringError("report has no scored pairings")
        arr = np.array([r.scores.as_tuple() for r in self.rows])
        return {d: float(m) for d, m in zip(DIMENSIONS, arr.mean(axis=0))}


# manifest -----------------------------------------------------------------

def _need(row: dict, key: str, line: int) -> str:
    v = row.get(key)
    if not isinstance(v, str) or not v:
        raise ManifestError(f"missing or empty field {key!r}", line)
    return v


def load_manifest(path: str | Path) -> BenchmarkManifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    man = BenchmarkManifest({}, {}, [], path.parent)
    header_seen = False
    pairing_lines: list[tuple[Pairing, int]] = []
    for n, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        try:
            row = json.loads(raw)
        except ValueError as e:
            raise ManifestError(f"invalid JSON: {e}", n) from e
        if not isinstance(row, dict):
            raise ManifestError("each line must be a JSON object", n)
        if not header_seen:
            if row.get("schema") != SCHEMA or row.get("version") != VERSION:
                raise ManifestError(f"header must be {{'schema': {SCHEMA!r}, 'version': {VERSION}}}", n)
            header_seen = True
            continue
        kind = row.get("type")
        if kind == "driving":
            e = DrivingEntry(_need(row, "id", n), _need(row, "path", n), _need(row, "category", n),
                             row.get("camera", "static"), row.get("video"))
            if e.category not in DRIVING_CATEGORIES:
                raise ManifestError(f"unknown driving category {e.category!r}", n)
            if e.camera not in CAMERAS:
                raise ManifestError(f"unknown camera {e.camera!r}", n)
            if e.entry_id in man.driving or e.entry_id in man.references:
                raise ManifestError(f"duplicate id {e.entry_id!r}", n)
            man.driving[e.entry_id] = e
        elif kind == "reference":
            e = ReferenceEntry(_need(row, "id", n), _need(row, "path", n), _need(row, "category", n))
            if e.category not in DRIVING_CATEGORIES:
                raise ManifestError(f"unknown reference category {e.category!r}", n)
            if e.entry_id in man.driving or e.entry_id in man.references:
                raise ManifestError(f"duplicate id {e.entry_id!r}", n)
            man.references[e.entry_id] = e
        elif kind == "pairing":
            d, r = _need(row, "driving", n), _need(row, "reference", n)
            ptype = _need(row, "pairing_type", n)
            if ptype not in PAIRING_TYPES:
                raise ManifestError(f"unknown pairing type {ptype!r}", n)
            pairing_lines.append((Pairing(row.get("id") or f"{d}__{r}", d, r, ptype), n))
        else:
            raise ManifestError(f"unknown entry type {kind!r}", n)
    if not header_seen:
        raise ManifestError("empty manifest")
    seen: set[str] = set()
    for p, n in pairing_lines:
        if p.driving not in man.driving:
            raise ManifestError(f"pairing references unknown driving id {p.driving!r}", n)
        if p.reference not in man.references:
            raise ManifestError(f"pairing references unknown reference id {p.reference!r}", n)
        if p.pairing_id in seen:
            raise ManifestError(f"duplicate pairing id {p.pairing_id!r}", n)
        seen.add(p.pairing_id)
        man.pairings.append(p)
    return man


def write_manifest(man: BenchmarkManifest, path: str | Path) -> Path:
    rows = [{"schema": SCHEMA, "version": VERSION}]
    for e in man.driving.values():
        row = {"type": "driving", "id": e.entry_id, "path": e.path, "category": e.category,
               "camera": e.camera}
        if e.video:
            row["video"] = e.video
        rows.append(row)
    for e in man.references.values():
        rows.append({"type": "reference", "id": e.entry_id, "path": e.path, "category": e.category})
    for p in man.pairings:
        rows.append({"type": "pairing", "id": p.pairing_id, "driving": p.driving,
                     "reference": p.reference, "pairing_type": p.pairing_type})
    atomic_write_bytes(path, "".join(json.dumps(r) + "\n" for r in rows).encode())
    return Path(path)


# generation ---------------------------------------------------------------

def video_digest(video: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(to_uint8(video)).tobytes()).hexdigest()


def _driving_signal(bundle: ModelBundle, man: BenchmarkManifest, entry: DrivingEntry):
    if bundle.stage == "pose":
        return load_poses(man.root / entry.path)
    if not entry.video:
        raise ManifestError(f"driving {entry.entry_id!r} has no video; end-to-end models need RGB")
    return load_video(man.root / entry.video)[0]


@dataclass
class BenchmarkRun:
    index_path: Path
    index: dict
    generated: list[str]
    failures: dict[str, str]

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def run_benchmark(
    bundle: ModelBundle,
    manifest: BenchmarkManifest | str | Path,
    out_dir: str | Path,
    seed: int = 0,
    steps: int = 20,
    workers: int = 1,
) -> BenchmarkRun:
    """Generate one video per pairing, skipping pairings whose output exists.

    ``index.json`` maps pairing id to its output directory and the SHA-256
    of its 8-bit frames. Per-pairing failures are logged and recorded.
    """
    man = manifest if isinstance(manifest, BenchmarkManifest) else load_manifest(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index_path = out / "index.json"
    index = json.loads(index_path.read_text()) if index_path.is_file() else {}
    entries = index.setdefault("pairings", {})
    todo = []
    for k, p in enumerate(man.pairings):
        rel = f"videos/{p.pairing_id}"
        if p.pairing_id in entries and is_complete(out / rel):
            continue
        todo.append((k, p, rel))

    def job(item):
        k, p, rel = item
        d, r = man.driving[p.driving], man.references[p.reference]
        ref = load_image(man.root / r.path)
        video = animate(bundle, ref, _driving_signal(bundle, man, d), steps=steps, seed=seed + k)
        save_video(out / rel, video, bundle.settings.get("fps", 8.0))
        # hash what is on disk so resumed and fresh runs agree
        return p.pairing_id, {"video": rel, "reference": str(man.root / r.path),
                              "sha256": video_digest(load_video(out / rel)[0])}

    failures: dict[str, str] = {}
    generated: list[str] = []

    def safe(item):
        try:
            return job(item), None
        except (IcanimError, OSError, ValueError) as e:
            logger.error("pairing %s failed: %s", item[1].pairing_id, e)
            return None, (item[1].pairing_id, str(e))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(safe, todo))
    else:
        results = [safe(item) for item in todo]
    for ok, err in results:
        if ok is not None:
            entries[ok[0]] = ok[1]
            generated.append(ok[0])
        else:
            failures[err[0]] = err[1]
    index["failures"] = failures
    index["seed"] = seed
    atomic_write_bytes(index_path, json.dumps(index, indent=1, sort_keys=True).encode())
    return BenchmarkRun(index_path, index, generated, failures)


# scoring and aggregation --------------------------------------------------

def score_benchmark(
    index: dict | str | Path, scorer: Scorer | None = None, method: str = "icanim"
) -> EvaluationReport:
    root = Path(".")
    if not isinstance(index, dict):
        root = Path(index).parent
        index = json.loads(Path(index).read_text())
    entries = index.get("pairings", {})
    if not entries and not index.get("failures"):
        raise ScoringError("benchmark index is empty")
    scorer = scorer or get_scorer()
    rows, missing = [], sorted(index.get("failures", {}))
    for pid in sorted(entries):
        vdir = root / entries[pid]["video"]
        if not is_complete(vdir):
            missing.append(pid)
            continue
        rows.append(PairingScore(pid, scorer.score(load_video(vdir)[0])))
    return EvaluationReport(method, rows, sorted(set(missing)))


def gsb_aggregate(records: Sequence[GSBRecord]) -> float:
    g = sum(r.good for r in records)
    s = sum(r.same for r in records)
    b = sum(r.bad for r in records)
    total = g + s + b
    if total == 0:
        raise ParameterError("GSB needs at least one judgment")
    return round((g - b) / total * 100.0, 2)


# reports ------------------------------------------------------------------

def report_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([r.pairing_id, *[repr(float(v)) for v in r.scores.as_tuple()]])
    return buf.getvalue()


def read_report_csv(path: str | Path, method: str = "icanim") -> EvaluationReport:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ManifestError(f"unexpected CSV header {header}", 1)
        rows = [PairingScore(rec[0], Scores(*map(float, rec[1:]))) for rec in reader]
    return EvaluationReport(method, rows)


def report_markdown(report: EvaluationReport) -> str:
    heads = ["Method", *[DIMENSION_TITLES[d] for d in DIMENSIONS]]
    lines = ["| " + " | ".join(heads) + " |", "|" + "---|" * len(heads)]
    if report.rows:
        m = report.means()
        lines.append("| " + " | ".join([report.method, *[f"{m[d]:.2f}" for d in DIMENSIONS]]) + " |")
    lines.append("")
    lines.append(f"Scored pairings: {len(report.rows)}")
    if report.missing:
        lines.append(f"Partial report, missing: {', '.join(report.missing)}")
    for g in report.gsb:
        lines.append(f"GSB vs {g.baseline}: {gsb_aggregate([g]):+.2f}% "
                     f"(good {g.good}, same {g.same}, bad {g.bad})")
    return "\n".join(lines) + "\n"


def contact_sheet(reference: np.ndarray | None, video: np.ndarray, columns: int = 8) -> np.ndarray:
    """One row: reference image, then ``columns`` evenly spaced output frames."""
    idx = np.unique(np.linspace(0, len(video) - 1, min(columns, len(video))).round().astype(int))
    tiles = ([to_uint8(reference)] if reference is not None else []) + [to_uint8(video[i]) for i in idx]
    H = max(t.shape[0] for t in tiles)
    pad = [np.pad(t, ((0, H - t.shape[0]), (0, 2), (0, 0))) for t in tiles]
    return np.concatenate(pad, axis=1)


def emit_report(
    report: EvaluationReport, out_dir: str | Path, index: dict | str | Path | None = None
) -> list[Path]:
    """Write ``scores.csv``, ``summary.md`` and one contact sheet PNG per pairing."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "scores.csv", out / "summary.md"]
    atomic_write_bytes(written[0], report_csv(report).encode())
    atomic_write_bytes(written[1], report_markdown(report).encode())
    if index is None:
        return written
    root = Path(".")
    if not isinstance(index, dict):
        root = Path(index).parent
        index = json.loads(Path(index).read_text())
    entries = index.get("pairings", {})
    for r in report.rows:
        e = entries.get(r.pairing_id)
        if e is None or not is_complete(root / e["video"]):
            continue
        ref = load_image(e["reference"]) if e.get("reference") and Path(e["reference"]).is_file() else None
        sheet = contact_sheet(ref, load_video(root / e["video"])[0])
        buf = io.BytesIO()
        Image.fromarray(sheet).save(buf, format="PNG")
        path = out / "sheets" / f"{r.pairing_id}.png"
        atomic_write_bytes(path, buf.getvalue())
        written.append(path)
    return written


# desk benchmark -----------------------------------------------------------

def replicate_subjects(seq: PoseSequence, n: int) -> list[PoseSequence]:
    """Copy one subject into ``n`` side-by-side slots (for one-to-many pairings)."""
    j = seq.joints
    lo, hi = j.reshape(-1, 2).min(0), j.reshape(-1, 2).max(0)
    unit = (j - lo) / np.maximum(hi - lo, 1e-9)
    out = []
    for k in range(n):
        slot = unit * np.array([1.0 / n * 0.8, 0.8]) + np.array([(k + 0.1) / n, 0.1])
        out.append(seq.with_joints(slot * (hi - lo).max()))
    return out


def make_desk_benchmark(out_dir: str | Path, seed: int = 0, num_frames: int = 17) -> Path:
    """Six synthetic pairings covering every pairing type; returns the manifest path."""
    from .data import make_clip
    from .skeleton import random_character, render_character

    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    man = BenchmarkManifest({}, {}, [], out)
    fams = ("wave", "walk", "bounce")
    for k, fam in enumerate(fams):
        clip = make_clip(seed * 1009 + k, num_frames=num_frames, family=fam)
        save_pose(clip.poses, out / "poses" / f"d{k}.jsonl")
        save_video(out / "videos" / f"d{k}", clip.video, clip.fps)
        man.driving[f"d{k}"] = DrivingEntry(f"d{k}", f"poses/d{k}.jsonl", "human-full", "static",
                                            f"videos/d{k}")
    multi = make_clip(seed * 1009 + 7, num_frames=num_frames, family="bounce", subjects=2)
    save_pose(multi.poses, out / "poses" / "dm.jsonl")
    save_video(out / "videos" / "dm", multi.video, multi.fps)
    man.driving["dm"] = DrivingEntry("dm", "poses/dm.jsonl", "multi-subject", "static", "videos/dm")
    for k in range(3):
        donor = make_clip(seed * 1009 + 20 + k, num_frames=1)
        img = render_character(donor.poses, random_character(rng), 32, 32)[0]
        save_image(out / "refs" / f"r{k}.png", img)
        man.references[f"r{k}"] = ReferenceEntry(f"r{k}", f"refs/r{k}.png", "cartoon")
    for k in range(2):
        donor = make_clip(seed * 1009 + 30 + k, num_frames=1, subjects=2)
        img = render_character(donor.poses, random_character(rng), 32, 32)[0]
        save_image(out / "refs" / f"rm{k}.png", img)
        man.references[f"rm{k}"] = ReferenceEntry(f"rm{k}", f"refs/rm{k}.png", "multi-subject")
    # one2multi drives a multi-character reference with a replicated single subject
    one = load_poses(out / "poses" / "d0.jsonl")[0]
    save_pose(replicate_subjects(one, 2), out / "poses" / "d0x2.jsonl")
    man.driving["d0x2"] = DrivingEntry("d0x2", "poses/d0x2.jsonl", "human-full", "static", "videos/d0")
    pairs = [("d0", "r0", "one2one"), ("d1", "r1", "one2one"), ("d2", "r2", "one2one"),
             ("d0x2", "rm0", "one2multi"), ("dm", "rm0", "multi2multi"), ("dm", "rm1", "multi2multi")]
    man.pairings = [Pairing(f"{d}__{r}", d, r, t) for d, r, t in pairs]
    return write_manifest(man, out / "manifest.jsonl")
