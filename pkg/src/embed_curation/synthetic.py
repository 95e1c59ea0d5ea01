"""Seeded synthetic detector output, clip sets, and the bundled fixture corpus."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import (
    BoundingBox,
    ClipRecord,
    FrameDetections,
    FrameTerm,
    HandDetection,
    ObjectDetection,
    ScoredClip,
    dumps,
)
from .curation import midpoint_targets


def random_box(rng: np.random.Generator, w: float, h: float) -> BoundingBox:
    x0, x1 = np.sort(rng.uniform(0, w, 2))
    y0, y1 = np.sort(rng.uniform(0, h, 2))
    return BoundingBox(float(x0), float(y0), float(x1), float(y1))


def random_frame(
    rng: np.random.Generator,
    video_id: str = "vid",
    timestamp_s: float = 0.0,
    width: float = 640.0,
    height: float = 360.0,
    max_hands: int = 3,
    max_objects: int = 3,
) -> FrameDetections:
    hands = tuple(
        HandDetection(
            random_box(rng, width, height),
            float(rng.uniform()),
            str(rng.choice(["left", "right", "unknown"])),
            bool(rng.uniform() < 0.5),
        )
        for _ in range(int(rng.integers(0, max_hands + 1)))
    )
    objects = tuple(
        ObjectDetection(random_box(rng, width, height), float(rng.uniform()))
        for _ in range(int(rng.integers(0, max_objects + 1)))
    )
    return FrameDetections(video_id, float(timestamp_s), width, height, hands, objects)


def random_clip_frames(
    rng: np.random.Generator, k: int = 4, video_id: str = "vid", start_s: float = 0.0
) -> list[FrameDetections]:
    targets = midpoint_targets(start_s, start_s + 5.0, k)
    return [random_frame(rng, video_id, t) for t in targets]


def planted_scored_clips(
    rng: np.random.Generator, n: int = 1000, planted: int = 100
) -> tuple[list[ScoredClip], set[tuple[str, float]]]:
    """``planted`` clips scoring in [1.5, 2], the rest in [0, 0.5].

    Scores are built from per-frame terms so each :class:`ScoredClip` is
    internally consistent. Returns the clips and the planted clip keys.
    """
    clips, keys = [], set()
    labels = np.zeros(n, dtype=bool)
    labels[rng.choice(n, planted, replace=False)] = True
    for i in range(n):
        vid = f"v{int(rng.integers(0, 50)):03d}"
        start = 5.0 * i
        if labels[i]:
            terms = tuple(FrameTerm(1, float(rng.uniform(0.5, 1.0))) for _ in range(4))
        else:
            terms = tuple(FrameTerm(0, float(rng.uniform(0.0, 0.5))) for _ in range(4))
        score = float(np.mean([t.value for t in terms]))
        clip = ClipRecord(vid, start, start + 5.0, midpoint_targets(start, start + 5.0, 4))
        clips.append(ScoredClip(clip, score, terms))
        if labels[i]:
            keys.add(clip.key)
    return clips, keys


def random_frame_table(rng: np.random.Generator, n_frames: int, max_hands: int = 3, max_objects: int = 2):
    """Flattened detections for :func:`~embed_curation.curation.score_frame_table`.

    Returns ``(hand_frame, hand_prob, hand_contact, object_frame)``; the
    number of detection records is ``hand_frame.size + object_frame.size``.
    """
    n_hands = rng.integers(0, max_hands + 1, n_frames)
    n_obj = rng.integers(0, max_objects + 1, n_frames)
    hand_frame = np.repeat(np.arange(n_frames), n_hands)
    object_frame = np.repeat(np.arange(n_frames), n_obj)
    hand_prob = rng.uniform(size=hand_frame.size)
    hand_contact = rng.uniform(size=hand_frame.size) < 0.5
    return hand_frame, hand_prob, hand_contact, object_frame


# ---------------------------------------------------------------------------
# Bundled fixture corpus
# ---------------------------------------------------------------------------

FIXTURE_DIR = Path(__file__).parent / "data" / "fixture"

_ASR_LINES = [
    ("i'm just gonna start by cutting it in half", 0.92),
    ("let's start by turning on my stove", 0.88),
    ("i cannot wait to dig in and enjoy it on the outside", 0.05),
    ("now i'm going to whisk the eggs together", 0.81),
    ("so we'll pour the batter into the pan", 0.77),
    ("thank you guys so much for watching", 0.02),
    ("and then you want to sand down the edges", 0.74),
    ("i'll tighten the screw with the screwdriver", 0.86),
    ("this is my favorite part of the whole video", 0.10),
    ("next we fold the paper in half again", 0.69),
]


def build_fixture_corpus(out_dir: str | Path = FIXTURE_DIR, seed: int = 20240501) -> Path:
    """Write the five-video fixture: 50 clips of detections, 30 ASR
    narrations, narrator captions, ego narrations, durations, and canned
    stub-service responses."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    videos = [f"htm_{i:02d}" for i in range(5)]
    det_lines, nar_lines, cap_lines = [], [], []
    for v_i, vid in enumerate(videos):
        for c in range(10):
            start = 5.0 * c
            activity = rng.uniform()
            for f in range(8):
                t = round(start + 0.3125 + 0.625 * f, 4)
                frame = _fixture_frame(rng, vid, t, activity)
                det_lines.append(dumps(frame))
            cap_lines.append(
                json.dumps(
                    {
                        "video_id": vid,
                        "start_s": start,
                        "end_s": start + 5.0,
                        "text": f"#C C {['picks up', 'cuts', 'holds', 'moves', 'places'][c % 5]} the {['knife', 'board', 'bowl', 'cloth', 'lid'][(c + v_i) % 5]}",
                        "perplexity": round(float(rng.uniform(1.5, 20.0)), 3),
                        "generation_meta": {"sampling_strategy": "beam", "beam_size": 5},
                    }
                )
            )
    for i in range(30):
        vid = videos[i % 5]
        text, align = _ASR_LINES[i % len(_ASR_LINES)]
        t = round(float(rng.uniform(0.0, 50.0)), 3)
        if i == 7:
            t = 10.0  # exactly on a clip boundary
        nar_lines.append(
            json.dumps(
                {
                    "video_id": vid,
                    "timestamp_s": t,
                    "text": text,
                    "source": "original_asr",
                    "alignability": align,
                    "perplexity": None,
                    "generation_meta": None,
                }
            )
        )
    ego_texts = [
        "#C C turns on a light",
        "#C C opens door",
        "#C C picks up the knife from the table",
        "#C C #unsure touches something",
        "#C C washes the plate in the sink",
        "#C C cuts the onion",
    ]
    ego_lines = []
    for i, text in enumerate(ego_texts):
        t = 3.0 + 7.0 * i
        ego_lines.append(
            json.dumps(
                {
                    "video_id": f"ego4d_{i % 2:02d}",
                    "timestamp_s": t,
                    "text": text,
                    "source": "ego_manual",
                    "alignability": None,
                    "perplexity": None,
                    "generation_meta": {"clip_start_s": t - 0.5, "clip_end_s": t + 0.6}
                    if i % 2
                    else None,
                }
            )
        )
    (out / "detections.jsonl").write_text(
        json.dumps({"schema_version": "1.0", "kind": "detections"}) + "\n"
        + "".join(l + "\n" for l in det_lines),
        encoding="utf-8",
    )
    (out / "narrations.jsonl").write_text("".join(l + "\n" for l in nar_lines), encoding="utf-8")
    (out / "captions.jsonl").write_text("".join(l + "\n" for l in cap_lines), encoding="utf-8")
    (out / "ego_narrations.jsonl").write_text("".join(l + "\n" for l in ego_lines), encoding="utf-8")
    (out / "videos.jsonl").write_text(
        "".join(json.dumps({"video_id": v, "duration_s": 50.0}) + "\n" for v in videos),
        encoding="utf-8",
    )
    (out / "stub_responses.json").write_text(
        json.dumps(
            {
                "i'm just gonna start by cutting it in half": "a person cuts it in half",
                "let's start by turning on my stove": "turn on the stove",
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return out


def _fixture_frame(rng, vid: str, t: float, activity: float) -> FrameDetections:
    w, h = 640.0, 360.0
    hands, objects = [], []
    if rng.uniform() < activity:
        for side in ("left", "right")[: int(rng.integers(1, 3))]:
            cx, cy = rng.uniform(120, 520), rng.uniform(90, 270)
            bw, bh = rng.uniform(30, 80), rng.uniform(30, 80)
            box = BoundingBox(
                round(float(cx - bw / 2), 2),
                round(float(cy - bh / 2), 2),
                round(float(cx + bw / 2), 2),
                round(float(cy + bh / 2), 2),
            )
            hands.append(
                HandDetection(box, round(float(rng.uniform(0.5, 1.0)), 3), side, bool(rng.uniform() < activity))
            )
        if rng.uniform() < activity:
            cx, cy = rng.uniform(150, 490), rng.uniform(100, 260)
            box = BoundingBox(
                round(float(cx - 40), 2), round(float(cy - 30), 2),
                round(float(cx + 40), 2), round(float(cy + 30), 2),
            )
            objects.append(ObjectDetection(box, round(float(rng.uniform(0.4, 1.0)), 3)))
    return FrameDetections(vid, t, w, h, tuple(hands), tuple(objects))
