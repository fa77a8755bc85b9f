import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icanim.bootstrap import (
    FilterPolicy,
    TripletRecord,
    build_triplets,
    filter_records,
    load_triplets,
    read_manifest,
    read_manual_flags,
    run_bootstrap,
    synthesize_pair,
    trajectory_correlation,
    verify_manifest,
)
from icanim.data import make_corpus
from icanim.errors import CheckpointError, ManifestError, ParameterError, ScoringError
from icanim.scoring import HeuristicScorer, Scores, get_scorer, register_scorer
from icanim.videoio import load_video, save_video

score_vals = st.floats(1.0, 5.0, allow_nan=False)


def _rec(i, scores, flag="pending"):
    return TripletRecord(f"r{i}", f"v_o/r{i}", f"v_src/r{i}", scores=scores, manual_flag=flag)


# scoring -------------------------------------------------------------------

def test_static_clip_scores_full_consistency():
    clip = make_corpus(1, seed=2, num_frames=9)[0]
    static = np.repeat(clip.video[:1], 9, axis=0)
    s = HeuristicScorer().score(static)
    assert s.temporal_consistency == 5.0 and s.motion_smoothness == 5.0
    assert s.appearance_consistency == 5.0


def test_scores_in_range_and_reproducible():
    rng = np.random.default_rng(0)
    scorer = get_scorer()
    for v in (rng.random((6, 16, 16, 3)), np.zeros((1, 8, 8, 3)), make_corpus(1, seed=9)[0].video,
              rng.normal(0, 10, (4, 8, 8, 3))):
        a, b = scorer.score(v), scorer.score(v.copy())
        assert a == b and all(1.0 <= x <= 5.0 for x in a.as_tuple())
    with pytest.raises(ScoringError):
        Scores(5.1, 3, 3, 3)
    with pytest.raises(ScoringError):
        scorer.score(np.full((2, 4, 4, 3), np.nan))
    with pytest.raises(ScoringError):
        get_scorer("nope")


def test_heuristic_ranks_clean_above_noisy():
    clip = make_corpus(1, seed=3, num_frames=17)[0]
    noisy = np.clip(clip.video + np.random.default_rng(0).normal(0, 0.05, clip.video.shape), 0, 1)
    s = get_scorer()
    assert s.score(clip.video).mean > 4.5 > s.score(noisy).mean


def test_register_scorer():
    class Fixed:
        name = "fixed"

        def score(self, video):
            return Scores(4, 4, 4, 4)

    register_scorer("fixed", Fixed)
    assert get_scorer("fixed").score(None).mean == 4.0


# filtering -----------------------------------------------------------------

def test_filter_examples():
    kept = _rec(0, (4.6, 4.7, 4.4, 4.5))
    assert kept.mean_score == pytest.approx(4.55, abs=1e-12)
    boundary = _rec(1, (4.5, 4.5, 4.5, 4.5))
    report = []
    out = filter_records([kept, boundary, _rec(2, None)], FilterPolicy(), report)
    assert out == [kept]
    assert report[1].startswith("r1: rejected") and "pending" in report[2]
    assert filter_records([boundary], FilterPolicy(strict=False)) == [boundary]
    assert filter_records([], FilterPolicy()) == []


def test_filter_manual_stage():
    recs = [_rec(0, (5, 5, 5, 5), "approved"), _rec(1, (5, 5, 5, 5), "pending"),
            _rec(2, (5, 5, 5, 5), "rejected")]
    assert [r.record_id for r in filter_records(recs, FilterPolicy(require_manual=True))] == ["r0"]
    assert len(filter_records(recs, FilterPolicy())) == 3


def test_policy_and_record_validation():
    with pytest.raises(ParameterError):
        FilterPolicy(auto_threshold=5.5)
    with pytest.raises(ParameterError):
        _rec(0, (0.5, 3, 3, 3))
    with pytest.raises(ParameterError):
        _rec(0, None, "maybe")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(score_vals, score_vals, score_vals, score_vals), max_size=20),
       st.floats(1.0, 5.0), st.floats(1.0, 5.0))
def test_filter_monotone(scores, t1, t2):
    lo, hi = sorted((t1, t2))
    recs = [_rec(i, s) for i, s in enumerate(scores)]
    a = {r.record_id for r in filter_records(recs, FilterPolicy(lo))}
    b = {r.record_id for r in filter_records(recs, FilterPolicy(hi))}
    assert b <= a


def test_flag_file_parsing(tmp_path):
    p = tmp_path / "flags.txt"
    p.write_text("# header\n\nr0 approved\nr1 rejected  # note\n")
    assert read_manual_flags(p) == {"r0": "approved", "r1": "rejected"}
    p.write_text("r0 maybe\n")
    with pytest.raises(ManifestError, match="line 1"):
        read_manual_flags(p)


# manifest ------------------------------------------------------------------

def _write_sources(root, n=3):
    clips = make_corpus(n, seed=21, num_frames=9)
    recs = []
    for i, c in enumerate(clips):
        save_video(root / "v_o" / f"r{i}", c.video[::-1], c.fps)
        save_video(root / "v_src" / f"r{i}", c.video, c.fps)
        recs.append(_rec(i, (4.8, 4.8, 4.8, 4.8)))
    return clips, recs


def test_build_triplets_integrity(tmp_path):
    clips, recs = _write_sources(tmp_path)
    path = build_triplets(recs, tmp_path / "triplets.jsonl")
    rows = read_manifest(path)
    assert len(rows) == 3
    verify_manifest(path)
    for row, clip in zip(rows, clips):
        v_src, _ = load_video(tmp_path / row.v_src_path)
        from icanim.videoio import load_image

        assert load_image(tmp_path / row.i_ref_path).tobytes() == v_src[0].tobytes()
        assert np.abs(v_src - clip.video).max() <= 0.5 / 255 + 1e-6
    trips = load_triplets(path)
    assert [t.triplet_id for t in trips] == ["r0", "r1", "r2"]
    assert np.array_equal(trips[0].v_src[0], load_video(tmp_path / "v_src" / "r0")[0][0])


def test_build_triplets_errors(tmp_path):
    _, recs = _write_sources(tmp_path, 2)
    with pytest.raises(ManifestError, match="duplicate"):
        build_triplets([recs[0], recs[0]], tmp_path / "m.jsonl")
    with pytest.raises(ManifestError, match="r9"):
        build_triplets([_rec(9, None)], tmp_path / "m.jsonl")
    path = build_triplets(recs, tmp_path / "m.jsonl")
    # tampering with I_ref is caught
    from icanim.videoio import save_image

    save_image(tmp_path / read_manifest(path)[0].i_ref_path, np.zeros((32, 32, 3), np.float32))
    with pytest.raises(ManifestError, match="i_ref"):
        verify_manifest(path)
    (tmp_path / "bad.jsonl").write_text('{"id": "a"}\n')
    with pytest.raises(ManifestError, match="line 1"):
        read_manifest(tmp_path / "bad.jsonl")


# synthesis -----------------------------------------------------------------

def test_synthesize_pair_contract(tiny_bundle, small_corpus):
    clip = small_corpus[0]
    a = synthesize_pair(tiny_bundle, clip.pose, clip.video[0], seed=3, steps=2)
    assert a.shape == clip.video.shape
    assert a.tobytes() == synthesize_pair(tiny_bundle, clip.pose, clip.video[0], seed=3, steps=2).tobytes()
    tiny_bundle.stage = "e2e"
    with pytest.raises(CheckpointError):
        synthesize_pair(tiny_bundle, clip.pose, clip.video[0])


def test_trajectory_correlation_oracle(small_corpus):
    clip = small_corpus[1]
    assert trajectory_correlation(clip.video, clip.pose) > 0.5
    still = np.repeat(clip.video[:1], len(clip.video), axis=0)
    assert trajectory_correlation(still, clip.pose) == 0.0
    with pytest.raises(ParameterError):
        trajectory_correlation(clip.video[:5], clip.pose)


def test_run_bootstrap_end_to_end(tmp_path, tiny_bundle):
    sources = make_corpus(3, seed=31, num_frames=9)

    class Alternating:
        name = "alt"

        def score(self, video):
            # deterministic from content: keep about half
            v = 4.0 + (float(np.asarray(video).sum()) * 1000 % 1.0)
            return Scores(v, v, v, v)

    a = run_bootstrap(tiny_bundle, sources, tmp_path / "a", scorer=Alternating(), steps=1)
    run_bootstrap(tiny_bundle, sources, tmp_path / "b", scorer=Alternating(), steps=1, workers=2)
    assert len(a.records) == 3
    assert (tmp_path / "a" / "triplets.jsonl").read_bytes() == (tmp_path / "b" / "triplets.jsonl").read_bytes()
    assert len(read_manifest(a.manifest)) == len(a.accepted)
    verify_manifest(a.manifest)
    for name in ("flags.txt", "scores.jsonl", "filter_report.txt"):
        assert (tmp_path / "a" / name).is_file()
    rows = [json.loads(x) for x in (tmp_path / "a" / "scores.jsonl").read_text().splitlines()]
    assert [r["id"] for r in rows] == ["pair0000", "pair0001", "pair0002"]
    # manual stage reads the edited flag file
    flags = tmp_path / "flags.txt"
    flags.write_text("pair0000 approved\n")
    c = run_bootstrap(tiny_bundle, sources, tmp_path / "c", FilterPolicy(1.0, require_manual=True),
                      scorer=Alternating(), steps=1, flags_path=flags)
    assert [r.record_id for r in c.accepted] == ["pair0000"]
