import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embed_curation.core import (
    BoundingBox,
    ClipRecord,
    FrameDetections,
    HandDetection,
    NarrationRecord,
    ObjectDetection,
    validate,
)
from embed_curation.curation import (
    budget_count,
    frame_term,
    hoi_score,
    narration_centered_clip,
    pair_narrations,
    sample_frames,
    score_clip,
    score_clips,
    score_frame_table,
    segment_video,
    select_top_clips,
)
from embed_curation.synthetic import planted_scored_clips, random_clip_frames, random_frame_table

BOX = BoundingBox(10, 10, 20, 20)


def frame(t=0.0, probs=(), contact=False, n_obj=0, vid="v"):
    hands = tuple(HandDetection(BOX, p, "left", contact) for p in probs)
    objs = tuple(ObjectDetection(BOX, 0.9) for _ in range(n_obj))
    return FrameDetections(vid, t, 100.0, 100.0, hands, objs)


def eq1_direct(frames):
    """Literal per-frame evaluation of the clip score, used as the oracle."""
    total = 0.0
    for f in frames:
        has_contact = False
        for h in f.hands:
            if h.in_contact:
                has_contact = True
        hoi = 1 if (has_contact and len(f.objects) > 0) else 0
        if len(f.hands) == 0:
            avg = 0.0
        else:
            s = 0.0
            for h in f.hands:
                s += h.probability
            avg = s / len(f.hands)
        total += hoi + avg
    return total / len(frames)


# --- segmentation ----------------------------------------------------------


def tiling_oracle(duration, length, min_tail=1.0):
    out, start = [], 0.0
    while start + length <= duration:
        out.append((start, start + length))
        start += length
    if duration - start >= min_tail:
        out.append((start, duration))
    return out


def test_exact_tiling():
    clips = segment_video("v", 15.0)
    assert [(c.start_s, c.end_s) for c in clips] == [(0, 5), (5, 10), (10, 15)]


@pytest.mark.parametrize("duration", [12.0, 15.0, 0.5, 1.0, 5.9, 6.0, 49.99, 123.4])
def test_tiling_matches_oracle(duration):
    got = [(c.start_s, c.end_s) for c in segment_video("v", duration)]
    assert got == tiling_oracle(duration, 5.0)


def test_short_video_has_no_clips():
    assert segment_video("v", 0.5) == []


def test_nonpositive_duration():
    with pytest.raises(ValueError):
        segment_video("v", 0.0)


def test_segment_clips_are_valid():
    for c in segment_video("v", 37.0):
        assert validate(c).ok
        assert len(c.frame_refs) == 4


# --- frame sampling ----------------------------------------------------------


def test_midpoint_targets():
    clip = segment_video("v", 5.0)[0]
    assert clip.frame_refs == (0.625, 1.875, 3.125, 4.375)
    assert [(i + 0.5) * 5.0 / 4 for i in range(4)] == list(clip.frame_refs)


def test_single_midpoint():
    (c,) = [c for c in segment_video("v", 15.0, frames=1) if c.start_s == 10.0]
    assert c.frame_refs == (12.5,)


def test_no_detections_gives_empty_frames():
    clip = segment_video("v", 5.0)[0]
    frames = sample_frames(clip, [frame(7.0)])
    assert len(frames) == 4
    assert all(not f.hands and not f.objects for f in frames)
    assert [f.timestamp_s for f in frames] == list(clip.frame_refs)


def test_snapping_to_nearest_in_clip():
    clip = segment_video("v", 10.0)[1]  # [5, 10) targets 5.625, 6.875, 8.125, 9.375
    dets = [frame(t) for t in (4.9, 5.0, 7.0, 8.0, 9.9, 10.0)]
    got = [f.timestamp_s for f in sample_frames(clip, dets)]
    assert got == [5.0, 7.0, 8.0, 9.9]


def test_snapping_tie_prefers_earlier():
    clip = ClipRecord("v", 0.0, 4.0, (2.0,))
    got = sample_frames(clip, [frame(1.0), frame(3.0)])
    assert got[0].timestamp_s == 1.0


# --- scoring -----------------------------------------------------------------


def test_all_empty_frames_score_zero():
    assert hoi_score([frame()] * 4)[0] == 0.0


def test_maximal_score():
    f = frame(probs=(1.0,), contact=True, n_obj=1)
    assert hoi_score([f] * 4)[0] == 2.0


def test_worked_example():
    frames = [
        frame(probs=(0.8,), contact=True, n_obj=1),
        frame(probs=(0.6, 0.7), contact=True, n_obj=1),
        frame(),
        frame(),
    ]
    score, terms = hoi_score(frames)
    assert eq1_direct(frames) == pytest.approx(0.8625, abs=1e-15)
    assert score == pytest.approx(0.8625, abs=1e-12)
    assert [t.hoi_indicator for t in terms] == [1, 1, 0, 0]


def test_contact_without_object_is_not_hoi():
    assert frame_term(frame(probs=(0.9,), contact=True)).hoi_indicator == 0
    assert frame_term(frame(probs=(0.9,), contact=False, n_obj=2)).hoi_indicator == 0


def test_scored_clip_is_valid():
    rng = np.random.default_rng(5)
    for _ in range(50):
        frames = random_clip_frames(rng)
        s = score_clip(ClipRecord("vid", 0.0, 5.0, (0.625, 1.875, 3.125, 4.375)), frames)
        assert validate(s).ok
        assert abs(s.hoi_score - eq1_direct(frames)) <= 1e-12


def test_adding_hand_moves_mean_by_update_law():
    rng = np.random.default_rng(9)
    for _ in range(200):
        probs = tuple(rng.uniform(size=int(rng.integers(1, 5))))
        p = float(rng.uniform())
        old = frame_term(frame(probs=probs)).avg_hand_prob
        new = frame_term(frame(probs=probs + (p,))).avg_hand_prob
        n = len(probs)
        assert new == pytest.approx(old + (p - old) / (n + 1), abs=1e-12)
        assert old - new <= abs(p - old) + 1e-12


def test_columnar_scoring_matches_objects():
    rng = np.random.default_rng(1)
    n_frames = 400
    hf, hp, hc, of = random_frame_table(rng, n_frames)
    scores, _, _ = score_frame_table(n_frames, hf, hp, hc, of)
    frames = []
    for i in range(n_frames):
        mask = hf == i
        hands = tuple(HandDetection(BOX, float(p), "unknown", bool(c)) for p, c in zip(hp[mask], hc[mask]))
        objs = tuple(ObjectDetection(BOX, 0.5) for _ in range(int((of == i).sum())))
        frames.append(FrameDetections("v", float(i), 100.0, 100.0, hands, objs))
    for c in range(n_frames // 4):
        assert scores[c] == pytest.approx(eq1_direct(frames[4 * c : 4 * c + 4]), abs=1e-12)


def test_parallel_scoring_is_identical(fixture_dir):
    from embed_curation.ingest import ingest_detections

    idx = ingest_detections(fixture_dir / "detections.jsonl")
    clips = [c for v in idx.video_ids for c in segment_video(v, 50.0)]
    serial = score_clips(clips, idx.detections_by_video, workers=1)
    parallel = score_clips(clips, idx.detections_by_video, workers=3, chunk_size=7)
    assert serial == parallel


# --- selection ---------------------------------------------------------------


def _scored(scores, vids=None):
    out = []
    for i, s in enumerate(scores):
        vid = vids[i] if vids else f"v{i}"
        frames = [frame(probs=(s / 1.0,))] if s <= 1 else [frame(probs=(s - 1,), contact=True, n_obj=1)]
        out.append(score_clip(ClipRecord(vid, 5.0 * i, 5.0 * i + 5, (5.0 * i + 2.5,)), frames))
    return out


def test_top_two():
    got = select_top_clips(_scored([0.2, 0.9, 0.5]), 2)
    assert [s.hoi_score for s in got] == [0.9, 0.5]


def test_tie_rule():
    clips = _scored([0.5, 0.5, 0.5], vids=["b", "a", "c"])
    (best,) = select_top_clips(clips, 1)
    assert best.clip.video_id == "a"


def test_budget_larger_than_input():
    assert len(select_top_clips(_scored([0.1, 0.2]), 10)) == 2


def test_fractional_budget():
    assert budget_count(0.6, 50) == 30
    assert budget_count(1.0, 7) == 7
    with pytest.raises(ValueError):
        budget_count(0, 5)
    with pytest.raises(ValueError):
        budget_count(1.5, 5)


def test_planted_recovery():
    clips, planted = planted_scored_clips(np.random.default_rng(0))
    got = {s.clip.key for s in select_top_clips(clips, 100)}
    assert got == planted


def test_per_video_scope():
    clips = _scored([0.9, 0.8, 0.1, 0.7], vids=["a", "a", "b", "b"])
    got = select_top_clips(clips, 1, scope="per_video")
    assert sorted(s.hoi_score for s in got) == [0.7, 0.9]


@given(st.lists(st.floats(0, 2), min_size=1, max_size=25), st.randoms(), st.integers(1, 30))
@settings(max_examples=60)
def test_selection_permutation_invariant_and_monotone(scores, rnd, budget):
    clips = _scored([min(s, 2.0) for s in scores], vids=[f"v{i % 4}" for i in range(len(scores))])
    base = select_top_clips(clips, budget)
    shuffled = clips[:]
    rnd.shuffle(shuffled)
    assert select_top_clips(shuffled, budget) == base
    bigger = select_top_clips(clips, budget + 3)
    assert set(map(id, base)) <= set(map(id, bigger))


# --- pairing -----------------------------------------------------------------


def _n(t, vid="v"):
    return NarrationRecord(vid, t, f"at {t}", "original_asr", alignability=0.9)


def test_interior_and_half_open_boundary():
    clip = ClipRecord("v", 5.0, 10.0, (7.5,))
    res = pair_narrations([clip], [_n(7.2), _n(10.0)])
    assert [n.timestamp_s for _, n in res.pairs] == [7.2]
    assert [n.timestamp_s for n in res.unmatched_narrations] == [10.0]


def test_boundary_goes_to_later_clip():
    clips = segment_video("v", 10.0)
    res = pair_narrations(clips, [_n(5.0)])
    assert [(c.start_s, c.end_s) for c, _ in res.pairs] == [(5.0, 10.0)]
    assert [c.start_s for c in res.unpaired_clips] == [0.0]


@given(st.lists(st.floats(0, 60, allow_nan=False), max_size=40))
def test_pairing_matches_membership_scan(times):
    clips = [c for c in segment_video("v", 50.0) if c.start_s != 20.0]
    narrs = [_n(t) for t in times]
    res = pair_narrations(clips, narrs)
    expected = sorted(
        (c.start_s, n.timestamp_s) for n in narrs for c in clips if c.start_s <= n.timestamp_s < c.end_s
    )
    assert sorted((c.start_s, n.timestamp_s) for c, n in res.pairs) == expected
    assert len(res.pairs) + len(res.unmatched_narrations) == len(narrs)
    for (c1, _), (c2, _) in itertools.combinations(res.pairs, 2):
        assert c1 == c2 or c1.end_s <= c2.start_s or c2.end_s <= c1.start_s


def test_narration_centered_clip():
    c = narration_centered_clip(_n(10.0))
    assert (c.start_s, c.end_s) == (7.5, 12.5)
    assert (narration_centered_clip(_n(1.0)).start_s, narration_centered_clip(_n(1.0)).end_s) == (0.0, 3.5)
    assert (narration_centered_clip(_n(0.0)).start_s, narration_centered_clip(_n(0.0)).end_s) == (0.0, 2.5)
    assert validate(c).ok
