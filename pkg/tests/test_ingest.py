import json
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from embed_curation.core import (
    BoundingBox,
    FrameDetections,
    HandDetection,
    NarrationRecord,
    SchemaVersionError,
    ValidationError,
    dumps,
)
from embed_curation.ingest import (
    build_index,
    ego_clip,
    filter_ego_narrations,
    ingest_detections,
    ingest_narrations,
    read_index,
    write_index,
)
from embed_curation.synthetic import random_frame


def _write(path, lines):
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return path


def _frame(vid, t, box=BoundingBox(1, 1, 5, 5)):
    return FrameDetections(vid, t, 100.0, 100.0, (HandDetection(box, 0.9, "left", True),))


def test_clean_detections(tmp_path):
    p = _write(tmp_path / "d.jsonl", [dumps(_frame("a", t)) for t in (1.0, 0.5, 2.0)])
    idx = ingest_detections(p, strict=True)
    assert idx.detection_count() == 3
    assert idx.reports[0].skipped == 0
    assert [f.timestamp_s for f in idx.detections_by_video["a"]] == [0.5, 1.0, 2.0]


def test_inverted_box_lenient_and_strict(tmp_path):
    bad = dumps(_frame("a", 1.0, BoundingBox(9, 1, 5, 5)))
    p = _write(tmp_path / "d.jsonl", [dumps(_frame("a", 0.0)), bad])
    idx = ingest_detections(p, strict=False)
    assert idx.detection_count() == 1
    assert idx.reports[0].skipped == 1
    with pytest.raises(ValidationError, match="x_min ≤ x_max"):
        ingest_detections(p, strict=True)


def test_malformed_json_line(tmp_path):
    p = _write(tmp_path / "d.jsonl", [dumps(_frame("a", 0.0)), "{not json"])
    assert ingest_detections(p).reports[0].skipped == 1
    with pytest.raises(ValidationError):
        ingest_detections(p, strict=True)


def test_schema_header(tmp_path):
    ok = _write(tmp_path / "ok.jsonl", [json.dumps({"schema_version": "1.0", "kind": "detections"}), dumps(_frame("a", 0.0))])
    assert ingest_detections(ok).detection_count() == 1
    bad = _write(tmp_path / "bad.jsonl", [json.dumps({"schema_version": "0.9"}), dumps(_frame("a", 0.0))])
    with pytest.raises(SchemaVersionError):
        ingest_detections(bad)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        ingest_detections(tmp_path / "nope.jsonl")


def _narr(vid, t, text, source="original_asr"):
    return NarrationRecord(vid, t, text, source, alignability=0.5 if source == "original_asr" else None)


def test_narrations_sorted_by_time(tmp_path):
    p = _write(tmp_path / "n.jsonl", [dumps(_narr("v", 9.0, "second")), dumps(_narr("v", 2.0, "first"))])
    idx = ingest_narrations(p)
    assert [n.text for n in idx.narrations_by_video["v"]] == ["first", "second"]


def test_empty_text_rejected(tmp_path):
    p = _write(tmp_path / "n.jsonl", [dumps(_narr("v", 1.0, "  "))])
    idx = ingest_narrations(p)
    assert idx.narration_count() == 0 and idx.reports[0].skipped == 1
    with pytest.raises(ValidationError, match="text nonempty"):
        ingest_narrations(p, strict=True)


def test_duplicates_counted(tmp_path):
    line = dumps(_narr("v", 1.0, "same words here"))
    p = _write(tmp_path / "n.jsonl", [line, line, dumps(_narr("v", 2.0, "other"))])
    idx = ingest_narrations(p)
    assert idx.narration_count() == 2
    assert idx.reports[0].duplicates == 1
    assert idx.reports[0].indexed == 2


def test_fixture_narration_count(fixture_dir):
    path = fixture_dir / "narrations.jsonl"
    expected = sum(1 for line in path.read_text().splitlines() if line.strip())
    idx = ingest_narrations(path, strict=True)
    assert expected == 30
    assert idx.narration_count() == expected
    assert sum(len(v) for v in idx.narrations_by_video.values()) == expected


def test_ingest_is_order_insensitive(tmp_path):
    rng = np.random.default_rng(3)
    lines = [dumps(random_frame(rng, f"v{i % 3}", float(rng.integers(0, 5)))) for i in range(60)]
    a = ingest_detections(_write(tmp_path / "a.jsonl", lines))
    shuffled = lines[:]
    random.Random(1).shuffle(shuffled)
    b = ingest_detections(_write(tmp_path / "b.jsonl", shuffled))
    assert a == b
    for frames in a.detections_by_video.values():
        times = [f.timestamp_s for f in frames]
        assert times == sorted(times)


def test_large_ingest_is_time_sorted(tmp_path):
    rng = np.random.default_rng(0)
    n = 1_000_000
    vids = rng.integers(0, 200, n)
    times = rng.uniform(0, 600, n)
    lines = (
        f'{{"video_id":"v{v}","timestamp_s":{t!r},"frame_width":640.0,"frame_height":360.0,"hands":[],"objects":[]}}'
        for v, t in zip(vids.tolist(), times.tolist())
    )
    p = tmp_path / "big.jsonl"
    p.write_text("\n".join(lines) + "\n")
    idx = ingest_detections(p)
    assert idx.detection_count() == n
    for frames in idx.detections_by_video.values():
        ts = [f.timestamp_s for f in frames]
        assert all(a <= b for a, b in zip(ts, ts[1:]))


def test_index_persistence_roundtrip(tmp_path, fixture_dir):
    idx = build_index(
        [fixture_dir / "detections.jsonl"],
        [fixture_dir / "narrations.jsonl"],
        duration_paths=[fixture_dir / "videos.jsonl"],
    )
    write_index(idx, tmp_path / "index", num_shards=3)
    back = read_index(tmp_path / "index")
    assert back == idx
    assert back.durations == idx.durations == {f"htm_{i:02d}": 50.0 for i in range(5)}


def test_parallel_build_matches_serial(fixture_dir):
    args = ([fixture_dir / "detections.jsonl"], [fixture_dir / "narrations.jsonl"])
    assert build_index(*args, workers=4) == build_index(*args, workers=1)


# --- ego narration filter --------------------------------------------------


def _ego(text):
    return NarrationRecord("e", 0.0, text, "ego_manual")


def test_ego_filter_examples():
    kept, rep = filter_ego_narrations(
        [_ego("C turns on a light"), _ego("#unsure action here maybe"), _ego("opens door")]
    )
    assert [n.text for n in kept] == ["C turns on a light"]
    assert (rep.dropped_unsure, rep.dropped_short) == (1, 1)


def test_ego_filter_capitalized_tag():
    kept, rep = filter_ego_narrations([_ego("#C C #Unsure picks something up")])
    assert not kept and rep.dropped_unsure == 1


def test_punctuation_is_not_stripped():
    kept, _ = filter_ego_narrations([_ego("C opens . door")])
    assert len(kept) == 1


words = st.sampled_from(["C", "#C", "opens", "door", "#unsure", "#Unsure", "the", "knife", "x"])
texts = st.lists(words, min_size=1, max_size=7).map(" ".join)


@given(st.lists(texts, max_size=30))
def test_ego_filter_bookkeeping_and_idempotence(items):
    narrs = [_ego(t) for t in items]
    kept, rep = filter_ego_narrations(narrs)
    assert rep.kept + rep.dropped == len(narrs) == rep.input_count
    again, rep2 = filter_ego_narrations(kept)
    assert again == kept and rep2.dropped == 0
    brute_kept = [t for t in items if "#unsure" not in t and "#Unsure" not in t and len(t.split()) >= 4]
    assert [n.text for n in kept] == brute_kept


def test_ego_clip_explicit_and_fallback():
    n = NarrationRecord("e", 0.2, "C cuts the onion", "ego_manual")
    c = ego_clip(n)
    assert (c.start_s, c.end_s) == (0.0, 0.7)
    n2 = NarrationRecord("e", 4.0, "C cuts the onion", "ego_manual", generation_meta={"clip_start_s": 3.1, "clip_end_s": 5.0})
    c2 = ego_clip(n2)
    assert (c2.start_s, c2.end_s) == (3.1, 5.0)
