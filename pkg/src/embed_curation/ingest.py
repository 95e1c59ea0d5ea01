"""Loading detector and narration JSON Lines files into a per-video index.

A file may optionally open with a header line of the form
``{"schema_version": "1.0", "kind": "detections"}``; a header carrying a
different schema version is rejected.
"""

from __future__ import annotations

import json
import logging
import math
import os
import zlib
from collections import defaultdict
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    SCHEMA_VERSION,
    ClipRecord,
    FrameDetections,
    NarrationRecord,
    SchemaVersionError,
    ValidationError,
    dumps,
    parse,
)

logger = logging.getLogger(__name__)

UNSURE_TAGS = ("#unsure", "#Unsure")
MIN_EGO_TOKENS = 4


@dataclass
class IngestReport:
    path: str
    kind: str
    indexed: int = 0
    skipped: int = 0
    duplicates: int = 0
    errors: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "path": self.path,
            "kind": self.kind,
            "indexed": self.indexed,
            "skipped": self.skipped,
            "duplicates": self.duplicates,
        }


@dataclass
class CorpusIndex:
    """Per-video, time-sorted detections and narrations."""

    detections_by_video: dict[str, list[FrameDetections]] = field(default_factory=dict)
    narrations_by_video: dict[str, list[NarrationRecord]] = field(default_factory=dict)
    source_tag: str = ""
    reports: list[IngestReport] = field(default_factory=list)
    durations: dict[str, float] = field(default_factory=dict)

    @property
    def video_ids(self) -> list[str]:
        return sorted(set(self.detections_by_video) | set(self.narrations_by_video))

    def detection_count(self) -> int:
        return sum(len(v) for v in self.detections_by_video.values())

    def narration_count(self) -> int:
        return sum(len(v) for v in self.narrations_by_video.values())

    def all_narrations(self) -> list[NarrationRecord]:
        return [n for vid in sorted(self.narrations_by_video) for n in self.narrations_by_video[vid]]

    def merge(self, other: "CorpusIndex") -> "CorpusIndex":
        """Merge ``other`` into this index (single writer) and return self."""
        for vid, frames in other.detections_by_video.items():
            merged = self.detections_by_video.get(vid, []) + frames
            self.detections_by_video[vid] = _time_sorted(merged)
        for vid, items in other.narrations_by_video.items():
            merged = self.narrations_by_video.get(vid, []) + items
            self.narrations_by_video[vid] = _dedupe(_time_sorted(merged))
        if other.source_tag and other.source_tag not in self.source_tag.split(","):
            self.source_tag = ",".join(t for t in (self.source_tag, other.source_tag) if t)
        self.reports.extend(other.reports)
        self.durations.update(other.durations)
        return self

    def duration_of(self, video_id: str, clip_len_s: float = 5.0) -> float:
        """Known duration, else the end of the clip holding the last observed
        timestamp for the video."""
        if video_id in self.durations:
            return self.durations[video_id]
        times = [f.timestamp_s for f in self.detections_by_video.get(video_id, ())]
        times += [n.timestamp_s for n in self.narrations_by_video.get(video_id, ())]
        if not times:
            raise KeyError(video_id)
        return (math.floor(max(times) / clip_len_s) + 1) * clip_len_s

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CorpusIndex):
            return NotImplemented
        return (
            self.detections_by_video == other.detections_by_video
            and self.narrations_by_video == other.narrations_by_video
        )


def _time_sorted(records: list) -> list:
    """Sort by timestamp; equal timestamps are ordered by canonical encoding
    so the result does not depend on input order."""
    out = sorted(records, key=lambda r: r.timestamp_s)
    i = 0
    while i < len(out):
        j = i + 1
        while j < len(out) and out[j].timestamp_s == out[i].timestamp_s:
            j += 1
        if j - i > 1:
            out[i:j] = sorted(out[i:j], key=dumps)
        i = j
    return out


def _read_lines(path: str | os.PathLike, kind: str) -> Iterator[tuple[int, str]]:
    first = True
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if first:
                first = False
                header = _maybe_header(line)
                if header is not None:
                    version = header.get("schema_version")
                    if version != SCHEMA_VERSION:
                        raise SchemaVersionError(
                            f"{path}: schema_version {version!r} != {SCHEMA_VERSION!r}"
                        )
                    if header.get("kind") not in (None, kind):
                        raise SchemaVersionError(
                            f"{path}: header kind {header.get('kind')!r} != {kind!r}"
                        )
                    continue
            yield lineno, line


def _maybe_header(line: str) -> dict | None:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict) and set(obj) <= {"schema_version", "kind"} and "schema_version" in obj:
        return obj
    return None


def _ingest(path, cls, kind: str, strict: bool):
    report = IngestReport(path=str(path), kind=kind)
    by_video: dict[str, list] = defaultdict(list)
    for lineno, line in _read_lines(path, kind):
        try:
            record = parse(cls, line, context=f"{path}:{lineno}")
        except ValidationError as exc:
            if strict:
                raise
            report.skipped += 1
            report.errors.append(str(exc))
            continue
        by_video[record.video_id].append(record)
        report.indexed += 1
    if report.skipped:
        logger.warning("%s: skipped %d invalid line(s)", path, report.skipped)
    return by_video, report


def _dedupe(items: list[NarrationRecord]) -> list[NarrationRecord]:
    # keeps the canonically-first record of each (video, time, text) group
    seen: set[tuple] = set()
    out = []
    for n in items:
        key = (n.video_id, n.timestamp_s, n.text)
        if key not in seen:
            seen.add(key)
            out.append(n)
    return out


def ingest_durations(path: str | os.PathLike) -> dict[str, float]:
    """Read ``{"video_id": ..., "duration_s": ...}`` lines."""
    out = {}
    for lineno, line in _read_lines(path, "videos"):
        d = json.loads(line)
        dur = float(d["duration_s"])
        if not dur > 0:
            raise ValidationError([], f"{path}:{lineno}: duration_s must be positive")
        out[d["video_id"]] = dur
    return out


def ingest_detections(path: str | os.PathLike, strict: bool = False) -> CorpusIndex:
    """Index a ``detections.jsonl`` file.

    Strict mode raises :class:`~embed_curation.core.ValidationError` on the
    first bad line; lenient mode skips and counts bad lines in the report.
    """
    by_video, report = _ingest(path, FrameDetections, "detections", strict)
    return CorpusIndex(
        detections_by_video={v: _time_sorted(fs) for v, fs in by_video.items()},
        source_tag=Path(path).stem,
        reports=[report],
    )


def ingest_narrations(path: str | os.PathLike, strict: bool = False) -> CorpusIndex:
    """Index a ``narrations.jsonl`` file; exact (video, time, text) repeats
    are dropped and counted as duplicates."""
    by_video, report = _ingest(path, NarrationRecord, "narrations", strict)
    table = {}
    for vid, items in by_video.items():
        table[vid] = _dedupe(_time_sorted(items))
        report.duplicates += len(items) - len(table[vid])
    report.indexed -= report.duplicates
    return CorpusIndex(
        narrations_by_video=table,
        source_tag=Path(path).stem,
        reports=[report],
    )


@dataclass(frozen=True)
class EgoFilterReport:
    input_count: int
    kept: int
    dropped_unsure: int
    dropped_short: int

    @property
    def dropped(self) -> int:
        return self.dropped_unsure + self.dropped_short


def has_unsure_tag(text: str) -> bool:
    return any(tag in text for tag in UNSURE_TAGS)


def token_count(text: str) -> int:
    return len(text.strip().split())


def filter_ego_narrations(
    narrations: Iterable[NarrationRecord], min_tokens: int = MIN_EGO_TOKENS
) -> tuple[list[NarrationRecord], EgoFilterReport]:
    """Drop narrations tagged ``#unsure``/``#Unsure`` or shorter than
    ``min_tokens`` whitespace tokens. The tag rule is checked first, so each
    dropped narration is counted under exactly one rule."""
    kept: list[NarrationRecord] = []
    n_in = unsure = short = 0
    for n in narrations:
        n_in += 1
        if has_unsure_tag(n.text):
            unsure += 1
        elif token_count(n.text) < min_tokens:
            short += 1
        else:
            kept.append(n)
    return kept, EgoFilterReport(n_in, len(kept), unsure, short)


def ego_clip(
    narration: NarrationRecord, half_width: float = 0.5, frames: int = 4
) -> ClipRecord:
    """Clip for an ego narration.

    Uses ``generation_meta['clip_start_s'/'clip_end_s']`` when the narration
    arrives with explicit bounds, otherwise a fixed ``±half_width`` window.
    """
    from .curation import midpoint_targets

    meta = narration.generation_meta or {}
    if "clip_start_s" in meta and "clip_end_s" in meta:
        start, end = float(meta["clip_start_s"]), float(meta["clip_end_s"])
    else:
        t = narration.timestamp_s
        start, end = max(0.0, t - half_width), t + half_width
    return ClipRecord(narration.video_id, start, end, midpoint_targets(start, end, frames))


# ---------------------------------------------------------------------------
# Persisted index: sharded JSON Lines plus a metadata header
# ---------------------------------------------------------------------------

INDEX_META = "index.meta.json"


def shard_of(video_id: str, num_shards: int) -> int:
    return zlib.crc32(video_id.encode("utf-8")) % num_shards


def _shard_paths(out: Path, kind: str, num_shards: int) -> list[Path]:
    return [out / f"{kind}-{i:05d}-of-{num_shards:05d}.jsonl" for i in range(num_shards)]


def write_index(index: CorpusIndex, out_dir: str | os.PathLike, num_shards: int = 4) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for kind, table in (
        ("detections", index.detections_by_video),
        ("narrations", index.narrations_by_video),
    ):
        buckets: list[list[str]] = [[] for _ in range(num_shards)]
        for vid in sorted(table):
            for rec in table[vid]:
                buckets[shard_of(vid, num_shards)].append(dumps(rec))
        for p, lines in zip(_shard_paths(out, kind, num_shards), buckets):
            p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        counts[kind] = sum(len(b) for b in buckets)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "source_tag": index.source_tag,
        "num_shards": num_shards,
        "counts": counts,
        "videos": len(index.video_ids),
        "durations": {v: index.durations[v] for v in sorted(index.durations)},
    }
    (out / INDEX_META).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return out


def read_index(index_dir: str | os.PathLike, strict: bool = True) -> CorpusIndex:
    src = Path(index_dir)
    meta = json.loads((src / INDEX_META).read_text(encoding="utf-8"))
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{src}: schema_version {meta.get('schema_version')!r} != {SCHEMA_VERSION!r}"
        )
    index = CorpusIndex(source_tag=meta.get("source_tag", ""))
    n = int(meta["num_shards"])
    for p in _shard_paths(src, "detections", n):
        index.merge(ingest_detections(p, strict=strict))
    for p in _shard_paths(src, "narrations", n):
        index.merge(ingest_narrations(p, strict=strict))
    index.source_tag = meta.get("source_tag", "")
    index.durations = {k: float(v) for k, v in meta.get("durations", {}).items()}
    index.reports = []
    counts = meta.get("counts", {})
    if counts and (
        counts.get("detections") != index.detection_count()
        or counts.get("narrations") != index.narration_count()
    ):
        raise ValidationError([], f"{src}: shard contents do not match {INDEX_META} counts")
    return index


def build_index(
    detection_paths: Sequence[str | os.PathLike] = (),
    narration_paths: Sequence[str | os.PathLike] = (),
    strict: bool = False,
    workers: int = 1,
    duration_paths: Sequence[str | os.PathLike] = (),
) -> CorpusIndex:
    """Ingest several files, optionally in parallel, and merge them in
    argument order."""
    jobs = [(ingest_detections, p) for p in detection_paths]
    jobs += [(ingest_narrations, p) for p in narration_paths]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda j: j[0](j[1], strict), jobs))
    else:
        parts = [fn(p, strict) for fn, p in jobs]
    index = CorpusIndex()
    for part in parts:
        index.merge(part)
    for p in duration_paths:
        index.durations.update(ingest_durations(p))
    return index
