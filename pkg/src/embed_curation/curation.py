"""Temporal selection: clip segmentation, frame sampling, HOI scoring,
budgeted ranking, and narration pairing."""

from __future__ import annotations

import bisect
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    ClipRecord,
    FrameDetections,
    FrameTerm,
    NarrationRecord,
    ScoredClip,
)

DEFAULT_CLIP_LEN = 5.0
DEFAULT_FRAMES = 4
MIN_TAIL_S = 1.0
DEFAULT_BUDGET = 0.6
NARRATION_HALF_WIDTH = 2.5


def midpoint_targets(start_s: float, end_s: float, k: int = DEFAULT_FRAMES) -> tuple[float, ...]:
    if k < 1:
        raise ValueError("k must be >= 1")
    step = (end_s - start_s) / k
    return tuple(start_s + (i + 0.5) * step for i in range(k))


def segment_video(
    video_id: str,
    video_duration_s: float,
    clip_len_s: float = DEFAULT_CLIP_LEN,
    frames: int = DEFAULT_FRAMES,
    min_tail_s: float = MIN_TAIL_S,
) -> list[ClipRecord]:
    """Tile ``[0, duration)`` with contiguous ``clip_len_s`` clips.

    A trailing partial clip is kept only if it lasts at least ``min_tail_s``.

    >>> [(c.start_s, c.end_s) for c in segment_video("v", 12.0)]
    [(0.0, 5.0), (5.0, 10.0), (10.0, 12.0)]
    """
    if not video_duration_s > 0:
        raise ValueError(f"video duration must be positive, got {video_duration_s}")
    if not clip_len_s > 0:
        raise ValueError(f"clip length must be positive, got {clip_len_s}")
    clips = []
    i = 0
    while True:
        start = i * clip_len_s
        if start >= video_duration_s:
            break
        end = min((i + 1) * clip_len_s, video_duration_s)
        if end - start < clip_len_s and end - start < min_tail_s:
            break
        clips.append(ClipRecord(video_id, float(start), float(end), midpoint_targets(start, end, frames)))
        i += 1
    return clips


def narration_centered_clip(
    narration: NarrationRecord,
    half_width: float = NARRATION_HALF_WIDTH,
    frames: int = DEFAULT_FRAMES,
) -> ClipRecord:
    """Clip ``[max(0, t - half_width), t + half_width)`` around a narration."""
    t = narration.timestamp_s
    if t < 0:
        raise ValueError("narration timestamp must be >= 0")
    start, end = max(0.0, t - half_width), t + half_width
    return ClipRecord(narration.video_id, start, end, midpoint_targets(start, end, frames))


def _empty_frame(video_id: str, t: float, size: tuple[float, float]) -> FrameDetections:
    return FrameDetections(video_id, t, size[0], size[1])


def sample_frames(
    clip: ClipRecord,
    detections: Sequence[FrameDetections],
    k: int | None = None,
    frame_size: tuple[float, float] | None = None,
) -> list[FrameDetections]:
    """Pick one detection frame per sampling slot.

    Targets are ``clip.frame_refs`` (or ``k`` midpoints when ``k`` is given).
    Each target snaps to the closest detection timestamp inside the clip,
    earlier frame on ties. Slots with no detection frame in the clip become
    empty frames at the target time. ``detections`` must be time-sorted.
    """
    targets = midpoint_targets(clip.start_s, clip.end_s, k) if k else clip.frame_refs
    times = [f.timestamp_s for f in detections]
    lo = bisect.bisect_left(times, clip.start_s)
    hi = bisect.bisect_left(times, clip.end_s)
    if frame_size is None:
        frame_size = (
            (detections[0].frame_width, detections[0].frame_height) if detections else (1.0, 1.0)
        )
    if lo == hi:
        return [_empty_frame(clip.video_id, t, frame_size) for t in targets]
    window = times[lo:hi]
    picked = []
    for t in targets:
        j = bisect.bisect_left(window, t)
        if j == len(window):
            j -= 1
        elif j > 0 and t - window[j - 1] <= window[j] - t:
            j -= 1
        picked.append(detections[lo + j])
    return picked


def frame_term(frame: FrameDetections) -> FrameTerm:
    """HOI indicator and mean hand probability for one frame.

    The indicator is 1 when some hand is in contact and at least one object
    was detected. Frames without hands have mean hand probability 0.
    """
    hands = frame.hands
    hoi = int(bool(frame.objects) and any(h.in_contact for h in hands))
    avg = math.fsum(h.probability for h in hands) / len(hands) if hands else 0.0
    return FrameTerm(hoi, avg)


def hoi_score(frames: Sequence[FrameDetections]) -> tuple[float, tuple[FrameTerm, ...]]:
    if not frames:
        raise ValueError("at least one frame slot is required")
    terms = tuple(frame_term(f) for f in frames)
    return math.fsum(t.value for t in terms) / len(terms), terms


def score_clip(clip: ClipRecord, frames: Sequence[FrameDetections]) -> ScoredClip:
    score, terms = hoi_score(frames)
    return ScoredClip(clip, score, terms)


@dataclass(frozen=True)
class SampledClip:
    """A scored clip together with the frames that produced its score."""

    scored: ScoredClip
    frames: tuple[FrameDetections, ...]

    @property
    def clip(self) -> ClipRecord:
        return self.scored.clip


def _score_chunk(args) -> list[SampledClip]:
    clips, detections_by_video = args
    out = []
    for clip in clips:
        frames = sample_frames(clip, detections_by_video.get(clip.video_id, ()))
        out.append(SampledClip(score_clip(clip, frames), tuple(frames)))
    return out


def score_clips(
    clips: Sequence[ClipRecord],
    detections_by_video: Mapping[str, Sequence[FrameDetections]],
    workers: int = 1,
    chunk_size: int = 256,
) -> list[SampledClip]:
    """Sample and score every clip; output order matches ``clips`` for any
    worker count."""
    if workers <= 1 or len(clips) <= chunk_size:
        return _score_chunk((clips, detections_by_video))
    chunks = [clips[i : i + chunk_size] for i in range(0, len(clips), chunk_size)]
    jobs = []
    for chunk in chunks:
        vids = {c.video_id for c in chunk}
        jobs.append((chunk, {v: detections_by_video[v] for v in vids if v in detections_by_video}))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_score_chunk, jobs))
    return [s for part in parts for s in part]


# ---------------------------------------------------------------------------
# Columnar scoring for large synthetic or pre-flattened detector dumps
# ---------------------------------------------------------------------------


def score_frame_table(
    n_frames: int,
    hand_frame: np.ndarray,
    hand_prob: np.ndarray,
    hand_contact: np.ndarray,
    object_frame: np.ndarray,
    frames_per_clip: int = DEFAULT_FRAMES,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized HOI scoring over flattened detections.

    Frames ``0..n_frames-1`` are grouped into consecutive clips of
    ``frames_per_clip`` slots. ``hand_frame``/``object_frame`` give the frame
    index of each hand/object detection. Returns ``(clip_scores, hoi, avg_hp)``
    where the last two are per frame.
    """
    if n_frames % frames_per_clip:
        raise ValueError("n_frames must be a multiple of frames_per_clip")
    hand_frame = np.asarray(hand_frame, dtype=np.int64)
    n_hands = np.bincount(hand_frame, minlength=n_frames)
    prob_sum = np.bincount(hand_frame, weights=np.asarray(hand_prob, float), minlength=n_frames)
    avg_hp = np.divide(prob_sum, n_hands, out=np.zeros(n_frames), where=n_hands > 0)
    contact = np.bincount(
        hand_frame, weights=np.asarray(hand_contact, float), minlength=n_frames
    ) > 0
    has_obj = np.bincount(np.asarray(object_frame, dtype=np.int64), minlength=n_frames) > 0
    hoi = (contact & has_obj).astype(float)
    scores = (hoi + avg_hp).reshape(-1, frames_per_clip).mean(axis=1)
    return scores, hoi, avg_hp


# ---------------------------------------------------------------------------
# Ranking and selection
# ---------------------------------------------------------------------------


def _rank_key(s: ScoredClip) -> tuple:
    return (-s.hoi_score, s.clip.video_id, s.clip.start_s, s.clip.end_s)


def budget_count(budget: int | float, n: int) -> int:
    """Number of clips to keep: an ``int`` is an absolute count, a ``float``
    in ``(0, 1]`` a fraction of ``n`` (rounded down)."""
    if isinstance(budget, bool) or not isinstance(budget, (int, float)):
        raise TypeError("budget must be an int count or a float fraction")
    if not budget > 0:
        raise ValueError("budget must be positive")
    if isinstance(budget, float):
        if budget > 1.0:
            raise ValueError("fractional budget must be in (0, 1]")
        return math.floor(budget * n + 1e-9)
    return min(budget, n)


def select_top_clips(
    scored: Iterable,
    budget: int | float = DEFAULT_BUDGET,
    scope: str = "global",
) -> list:
    """Keep the highest-scoring clips.

    Accepts :class:`ScoredClip` or :class:`SampledClip` items. Ties are
    broken by ``(video_id, start_s)`` ascending, so the result depends only on
    the input multiset. With ``scope="per_video"`` the budget applies to each
    video separately.
    """
    items = list(scored)

    def key(item):
        return _rank_key(item.scored if isinstance(item, SampledClip) else item)

    if scope == "global":
        return sorted(items, key=key)[: budget_count(budget, len(items))]
    if scope == "per_video":
        groups: dict[str, list] = defaultdict(list)
        for item in items:
            groups[key(item)[1]].append(item)
        out = []
        for vid in sorted(groups):
            group = sorted(groups[vid], key=key)
            out.extend(group[: budget_count(budget, len(group))])
        return sorted(out, key=key)
    raise ValueError(f"unknown selection scope {scope!r}")


# ---------------------------------------------------------------------------
# Narration pairing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairingResult:
    pairs: tuple[tuple[ClipRecord, NarrationRecord], ...]
    unpaired_clips: tuple[ClipRecord, ...]
    unmatched_narrations: tuple[NarrationRecord, ...]


def pair_narrations(
    clips: Iterable[ClipRecord], narrations: Iterable[NarrationRecord]
) -> PairingResult:
    """Pair each narration with the clip whose half-open interval holds its
    timestamp. Clips are assumed disjoint within a video; when they are not,
    the clip with the latest start wins."""
    by_video: dict[str, list[ClipRecord]] = defaultdict(list)
    for c in clips:
        by_video[c.video_id].append(c)
    starts = {}
    for vid, cs in by_video.items():
        cs.sort(key=lambda c: (c.start_s, c.end_s))
        starts[vid] = [c.start_s for c in cs]
    pairs, unmatched = [], []
    used: set[tuple[str, float, float]] = set()
    for n in sorted(narrations, key=lambda n: (n.video_id, n.timestamp_s, n.text)):
        cs = by_video.get(n.video_id)
        j = bisect.bisect_right(starts[n.video_id], n.timestamp_s) - 1 if cs else -1
        if j >= 0 and cs[j].covers(n.timestamp_s):
            pairs.append((cs[j], n))
            used.add((cs[j].video_id, cs[j].start_s, cs[j].end_s))
        else:
            unmatched.append(n)
    unpaired = [
        c
        for vid in sorted(by_video)
        for c in by_video[vid]
        if (c.video_id, c.start_s, c.end_s) not in used
    ]
    return PairingResult(tuple(pairs), tuple(unpaired), tuple(unmatched))
