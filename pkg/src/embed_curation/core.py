"""Shared domain types, invariant checks, and canonical JSON Lines encoding.

Every type is a frozen dataclass. Construction never raises on invariant
violations; use :func:`validate` to obtain the list of violations, or the
``parse_*`` helpers which raise :class:`ValidationError` on bad input.

Canonical encoding: one JSON object per line, UTF-8, keys in the field order
declared here, floats written with Python's shortest round-trip ``repr``.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

SCHEMA_VERSION = "1.0"

HAND_SIDES = ("left", "right", "unknown")
NARRATION_SOURCES = ("original_asr", "rephrased", "narrator_generated", "ego_manual")
DOMAINS = ("ego", "exo_ego")

HOI_SCORE_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when a record parsed from external input breaks an invariant."""

    def __init__(self, violations: Sequence["Violation"], context: str = ""):
        self.violations = list(violations)
        self.context = context
        msg = "; ".join(str(v) for v in self.violations) or "invalid record"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class SchemaVersionError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str

    def __str__(self) -> str:
        return f"{self.path}: {self.rule}" if self.path else self.rule


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    def within(self, width: float, height: float) -> bool:
        return (
            0.0 <= self.x_min
            and 0.0 <= self.y_min
            and self.x_max <= width
            and self.y_max <= height
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class HandDetection:
    box: BoundingBox
    probability: float
    side: str = "unknown"
    in_contact: bool = False


@dataclass(frozen=True)
class ObjectDetection:
    box: BoundingBox
    probability: float


@dataclass(frozen=True)
class FrameDetections:
    """Detector output for one frame of one video."""

    video_id: str
    timestamp_s: float
    frame_width: float
    frame_height: float
    hands: tuple[HandDetection, ...] = ()
    objects: tuple[ObjectDetection, ...] = ()

    def boxes(self) -> list[BoundingBox]:
        return [h.box for h in self.hands] + [o.box for o in self.objects]


@dataclass(frozen=True)
class ClipRecord:
    """Half-open video segment ``[start_s, end_s)`` with sampled frame times."""

    video_id: str
    start_s: float
    end_s: float
    frame_refs: tuple[float, ...] = ()

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def covers(self, t: float) -> bool:
        return self.start_s <= t < self.end_s

    @property
    def key(self) -> tuple[str, float]:
        return (self.video_id, self.start_s)


@dataclass(frozen=True)
class FrameTerm:
    hoi_indicator: int
    avg_hand_prob: float

    @property
    def value(self) -> float:
        return self.hoi_indicator + self.avg_hand_prob


@dataclass(frozen=True)
class ScoredClip:
    clip: ClipRecord
    hoi_score: float
    per_frame_terms: tuple[FrameTerm, ...]


@dataclass(frozen=True)
class NarrationRecord:
    video_id: str
    timestamp_s: float
    text: str
    source: str
    alignability: float | None = None
    perplexity: float | None = None
    generation_meta: Mapping[str, Any] | None = None

    def __hash__(self) -> int:
        return hash((self.video_id, self.timestamp_s, self.text, self.source))


@dataclass(frozen=True)
class ManifestEntry:
    """One (clip, narration) training pair.

    ``frame_width``/``frame_height`` record the frame size the crop region
    refers to; they are present exactly when ``crop_region`` is.
    """

    clip: ClipRecord
    narration: NarrationRecord
    domain: str
    crop_region: BoundingBox | None = None
    frame_width: float | None = None
    frame_height: float | None = None

    def sort_key(self) -> tuple:
        n = self.narration
        return (
            self.clip.video_id,
            self.clip.start_s,
            n.timestamp_s,
            self.clip.end_s,
            self.domain,
            n.source,
            n.text,
        )

    @property
    def entry_id(self) -> str:
        return hashlib.sha1(dumps(self).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class DatasetManifest:
    schema_version: str
    created_from: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]
    stats: Mapping[str, Any]


@dataclass(frozen=True)
class EmbeddingBatch:
    video_embeddings: np.ndarray
    text_embeddings: np.ndarray
    temperature: float = 0.07

    def __post_init__(self):
        object.__setattr__(
            self, "video_embeddings", np.asarray(self.video_embeddings, dtype=float)
        )
        object.__setattr__(
            self, "text_embeddings", np.asarray(self.text_embeddings, dtype=float)
        )


@dataclass(frozen=True)
class LossReport:
    loss: float
    gradient_video: np.ndarray
    gradient_text: np.ndarray


Record = Union[
    BoundingBox,
    HandDetection,
    ObjectDetection,
    FrameDetections,
    ClipRecord,
    ScoredClip,
    NarrationRecord,
    ManifestEntry,
    DatasetManifest,
    EmbeddingBatch,
    LossReport,
]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _finite(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _unit(x: Any) -> bool:
    return _finite(x) and 0.0 <= x <= 1.0


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _check_box(box: BoundingBox, path: str, out: list[Violation]) -> bool:
    coords = box.as_tuple()
    if not all(_finite(c) for c in coords):
        out.append(Violation(path, "coordinates finite"))
        return False
    if any(c < 0 for c in coords):
        out.append(Violation(path, "coordinates ≥ 0"))
    ok = True
    if box.x_min > box.x_max:
        out.append(Violation(path, "x_min ≤ x_max"))
        ok = False
    if box.y_min > box.y_max:
        out.append(Violation(path, "y_min ≤ y_max"))
        ok = False
    return ok


def _check_in_frame(
    box: BoundingBox, w: float, h: float, path: str, out: list[Violation]
) -> None:
    if _finite(w) and _finite(h) and not box.within(w, h):
        out.append(Violation(path, "box within frame bounds"))


def _check_frame(f: FrameDetections, path: str, out: list[Violation]) -> None:
    if not isinstance(f.video_id, str) or not f.video_id:
        out.append(Violation(_join(path, "video_id"), "video_id nonempty"))
    if not _finite(f.timestamp_s) or f.timestamp_s < 0:
        out.append(Violation(_join(path, "timestamp_s"), "timestamp_s ≥ 0"))
    if not (_finite(f.frame_width) and f.frame_width > 0):
        out.append(Violation(_join(path, "frame_width"), "frame dimensions > 0"))
    if not (_finite(f.frame_height) and f.frame_height > 0):
        out.append(Violation(_join(path, "frame_height"), "frame dimensions > 0"))
    for i, hand in enumerate(f.hands):
        hp = f"{_join(path, 'hands')}[{i}]"
        _check_hand(hand, hp, out)
        _check_in_frame(hand.box, f.frame_width, f.frame_height, _join(hp, "box"), out)
    for i, obj in enumerate(f.objects):
        op = f"{_join(path, 'objects')}[{i}]"
        _check_object(obj, op, out)
        _check_in_frame(obj.box, f.frame_width, f.frame_height, _join(op, "box"), out)


def _check_hand(h: HandDetection, path: str, out: list[Violation]) -> None:
    _check_box(h.box, _join(path, "box"), out)
    if not _unit(h.probability):
        out.append(Violation(_join(path, "probability"), "0 ≤ probability ≤ 1"))
    if h.side not in HAND_SIDES:
        out.append(Violation(_join(path, "side"), "side in {left, right, unknown}"))
    if not isinstance(h.in_contact, bool):
        out.append(Violation(_join(path, "in_contact"), "in_contact is boolean"))


def _check_object(o: ObjectDetection, path: str, out: list[Violation]) -> None:
    _check_box(o.box, _join(path, "box"), out)
    if not _unit(o.probability):
        out.append(Violation(_join(path, "probability"), "0 ≤ probability ≤ 1"))


def _check_clip(c: ClipRecord, path: str, out: list[Violation]) -> None:
    if not isinstance(c.video_id, str) or not c.video_id:
        out.append(Violation(_join(path, "video_id"), "video_id nonempty"))
    if not (_finite(c.start_s) and _finite(c.end_s)):
        out.append(Violation(path, "start_s, end_s finite"))
        return
    if c.start_s < 0:
        out.append(Violation(_join(path, "start_s"), "start_s ≥ 0"))
    if not c.start_s < c.end_s:
        out.append(Violation(path, "start_s < end_s"))
    refs = c.frame_refs
    if len(refs) < 1:
        out.append(Violation(_join(path, "frame_refs"), "k ≥ 1"))
    if any(not _finite(t) for t in refs):
        out.append(Violation(_join(path, "frame_refs"), "frame_refs finite"))
        return
    if any(b <= a for a, b in zip(refs, refs[1:])):
        out.append(Violation(_join(path, "frame_refs"), "frame_refs strictly increasing"))
    if any(not c.start_s <= t < c.end_s for t in refs):
        out.append(Violation(_join(path, "frame_refs"), "frame_refs in [start_s, end_s)"))


def _check_scored(s: ScoredClip, path: str, out: list[Violation]) -> None:
    _check_clip(s.clip, _join(path, "clip"), out)
    terms = s.per_frame_terms
    for i, t in enumerate(terms):
        tp = f"{_join(path, 'per_frame_terms')}[{i}]"
        if t.hoi_indicator not in (0, 1) or isinstance(t.hoi_indicator, float):
            out.append(Violation(tp, "hoi_indicator in {0, 1}"))
        if not _unit(t.avg_hand_prob):
            out.append(Violation(tp, "0 ≤ avg_hand_prob ≤ 1"))
    if not _finite(s.hoi_score):
        out.append(Violation(_join(path, "hoi_score"), "hoi_score finite"))
        return
    if not 0.0 <= s.hoi_score <= 2.0:
        out.append(Violation(_join(path, "hoi_score"), "0 ≤ hoi_score ≤ 2"))
    if not terms:
        out.append(Violation(_join(path, "per_frame_terms"), "k ≥ 1"))
    else:
        mean = math.fsum(t.value for t in terms) / len(terms)
        if abs(mean - s.hoi_score) > HOI_SCORE_TOL:
            out.append(
                Violation(_join(path, "hoi_score"), "hoi_score equals mean of frame terms")
            )


def _check_narration(n: NarrationRecord, path: str, out: list[Violation]) -> None:
    if not isinstance(n.video_id, str) or not n.video_id:
        out.append(Violation(_join(path, "video_id"), "video_id nonempty"))
    if not _finite(n.timestamp_s) or n.timestamp_s < 0:
        out.append(Violation(_join(path, "timestamp_s"), "timestamp_s ≥ 0"))
    if not isinstance(n.text, str) or not n.text.strip():
        out.append(Violation(_join(path, "text"), "text nonempty"))
    if n.source not in NARRATION_SOURCES:
        out.append(Violation(_join(path, "source"), "source is a known tag"))
    wants_align = n.source in ("original_asr", "rephrased")
    if wants_align != (n.alignability is not None):
        out.append(
            Violation(
                _join(path, "alignability"),
                "alignability present iff source is original_asr or rephrased",
            )
        )
    elif n.alignability is not None and not _unit(n.alignability):
        out.append(Violation(_join(path, "alignability"), "0 ≤ alignability ≤ 1"))
    wants_ppl = n.source == "narrator_generated"
    if wants_ppl != (n.perplexity is not None):
        out.append(
            Violation(
                _join(path, "perplexity"),
                "perplexity present iff source is narrator_generated",
            )
        )
    elif n.perplexity is not None and not (_finite(n.perplexity) and n.perplexity > 0):
        out.append(Violation(_join(path, "perplexity"), "perplexity > 0"))


def _check_entry(e: ManifestEntry, path: str, out: list[Violation]) -> None:
    _check_clip(e.clip, _join(path, "clip"), out)
    _check_narration(e.narration, _join(path, "narration"), out)
    if e.domain not in DOMAINS:
        out.append(Violation(_join(path, "domain"), "domain in {ego, exo_ego}"))
    has_size = e.frame_width is not None or e.frame_height is not None
    if e.crop_region is not None:
        cp = _join(path, "crop_region")
        if _check_box(e.crop_region, cp, out):
            if e.frame_width is None or e.frame_height is None:
                out.append(Violation(cp, "crop_region requires frame size"))
            else:
                _check_in_frame(e.crop_region, e.frame_width, e.frame_height, cp, out)
    elif has_size:
        out.append(Violation(path, "frame size present only with crop_region"))
    if e.narration.video_id != e.clip.video_id:
        out.append(Violation(path, "narration and clip share video_id"))
    if (
        e.domain == "exo_ego"
        and e.narration.source in ("original_asr", "rephrased")
        and not e.clip.covers(e.narration.timestamp_s)
    ):
        out.append(Violation(path, "narration timestamp within clip"))


def compute_stats(entries: Sequence[ManifestEntry]) -> dict[str, Any]:
    pairs = {d: 0 for d in DOMAINS}
    videos: dict[str, set[str]] = {d: set() for d in DOMAINS}
    for e in entries:
        if e.domain in pairs:
            pairs[e.domain] += 1
            videos[e.domain].add(e.clip.video_id)
    return {
        "pair_count": pairs,
        "video_count": {d: len(videos[d]) for d in DOMAINS},
    }


def _check_manifest(m: DatasetManifest, path: str, out: list[Violation]) -> None:
    if not isinstance(m.schema_version, str) or not m.schema_version:
        out.append(Violation(_join(path, "schema_version"), "schema_version nonempty"))
    for i, e in enumerate(m.entries):
        _check_entry(e, f"{_join(path, 'entries')}[{i}]", out)
    keys = [e.sort_key() for e in m.entries]
    if any(b < a for a, b in zip(keys, keys[1:])):
        out.append(Violation(_join(path, "entries"), "entries in canonical order"))
    if _plain(m.stats) != compute_stats(m.entries):
        out.append(Violation(_join(path, "stats"), "stats match entries"))


def _check_embeddings(b: EmbeddingBatch, path: str, out: list[Violation]) -> None:
    v, t = b.video_embeddings, b.text_embeddings
    if v.ndim != 2 or v.shape != t.shape:
        out.append(Violation(path, "embedding matrices share a B×d shape"))
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(t))):
        out.append(Violation(path, "embeddings finite"))
    if not (_finite(b.temperature) and b.temperature > 0):
        out.append(Violation(_join(path, "temperature"), "temperature > 0"))


def _check_loss(r: LossReport, path: str, out: list[Violation]) -> None:
    if not _finite(r.loss):
        out.append(Violation(_join(path, "loss"), "loss finite"))
    if not (np.all(np.isfinite(r.gradient_video)) and np.all(np.isfinite(r.gradient_text))):
        out.append(Violation(path, "gradients finite"))


_CHECKS = {
    BoundingBox: lambda r, p, o: _check_box(r, p, o),
    HandDetection: _check_hand,
    ObjectDetection: _check_object,
    FrameDetections: _check_frame,
    ClipRecord: _check_clip,
    ScoredClip: _check_scored,
    NarrationRecord: _check_narration,
    ManifestEntry: _check_entry,
    DatasetManifest: _check_manifest,
    EmbeddingBatch: _check_embeddings,
    LossReport: _check_loss,
}


def validate(record: Record, frame_size: tuple[float, float] | None = None) -> ValidationResult:
    """Check every invariant of ``record``; never raises on bad data.

    ``frame_size`` additionally checks that a bare box lies inside a
    ``(width, height)`` frame.
    """
    out: list[Violation] = []
    check = _CHECKS.get(type(record))
    if check is None:
        raise TypeError(f"not a core record: {type(record).__name__}")
    check(record, "", out)
    if frame_size is not None and isinstance(record, BoundingBox):
        _check_in_frame(record, frame_size[0], frame_size[1], "", out)
    return ValidationResult(tuple(out))


def require_valid(record: Record, context: str = "") -> Record:
    result = validate(record)
    if not result.ok:
        raise ValidationError(result.violations, context)
    return record


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _plain(obj: Any) -> Any:
    """Convert mappings/sequences to plain JSON-ready containers."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _f(x: Any) -> float | None:
    # real-valued fields always encode as floats, so 10 and 10.0 serialize alike
    return None if x is None else float(x)


def box_to_dict(b: BoundingBox) -> dict:
    return {"x_min": _f(b.x_min), "y_min": _f(b.y_min), "x_max": _f(b.x_max), "y_max": _f(b.y_max)}


def to_dict(record: Record) -> dict:
    """Plain dict with keys in canonical order."""
    if isinstance(record, BoundingBox):
        return box_to_dict(record)
    if isinstance(record, HandDetection):
        return {
            "box": box_to_dict(record.box),
            "probability": _f(record.probability),
            "side": record.side,
            "in_contact": record.in_contact,
        }
    if isinstance(record, ObjectDetection):
        return {"box": box_to_dict(record.box), "probability": _f(record.probability)}
    if isinstance(record, FrameDetections):
        return {
            "video_id": record.video_id,
            "timestamp_s": _f(record.timestamp_s),
            "frame_width": _f(record.frame_width),
            "frame_height": _f(record.frame_height),
            "hands": [to_dict(h) for h in record.hands],
            "objects": [to_dict(o) for o in record.objects],
        }
    if isinstance(record, ClipRecord):
        return {
            "video_id": record.video_id,
            "start_s": _f(record.start_s),
            "end_s": _f(record.end_s),
            "frame_refs": [_f(t) for t in record.frame_refs],
        }
    if isinstance(record, ScoredClip):
        return {
            "clip": to_dict(record.clip),
            "hoi_score": _f(record.hoi_score),
            "per_frame_terms": [
                [int(t.hoi_indicator), _f(t.avg_hand_prob)] for t in record.per_frame_terms
            ],
        }
    if isinstance(record, NarrationRecord):
        return {
            "video_id": record.video_id,
            "timestamp_s": _f(record.timestamp_s),
            "text": record.text,
            "source": record.source,
            "alignability": _f(record.alignability),
            "perplexity": _f(record.perplexity),
            "generation_meta": _plain(record.generation_meta)
            if record.generation_meta is not None
            else None,
        }
    if isinstance(record, ManifestEntry):
        return {
            "clip": to_dict(record.clip),
            "crop_region": box_to_dict(record.crop_region)
            if record.crop_region is not None
            else None,
            "frame_width": _f(record.frame_width),
            "frame_height": _f(record.frame_height),
            "narration": to_dict(record.narration),
            "domain": record.domain,
        }
    if isinstance(record, DatasetManifest):
        return {
            "schema_version": record.schema_version,
            "created_from": list(record.created_from),
            "stats": _plain(record.stats),
            "entries": [to_dict(e) for e in record.entries],
        }
    if isinstance(record, EmbeddingBatch):
        return {
            "video_embeddings": record.video_embeddings.tolist(),
            "text_embeddings": record.text_embeddings.tolist(),
            "temperature": _f(record.temperature),
        }
    if isinstance(record, LossReport):
        return {
            "loss": record.loss,
            "gradient_video": record.gradient_video.tolist(),
            "gradient_text": record.gradient_text.tolist(),
        }
    raise TypeError(f"not a core record: {type(record).__name__}")


def _num(x: Any, name: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError(f"{name}: expected a number, got {type(x).__name__}")
    return float(x)


def _opt_num(x: Any, name: str) -> float | None:
    return None if x is None else _num(x, name)


def _freeze(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _freeze(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return tuple(_freeze(v) for v in obj)
    return obj


def box_from_dict(d: Mapping) -> BoundingBox:
    return BoundingBox(
        _num(d["x_min"], "x_min"),
        _num(d["y_min"], "y_min"),
        _num(d["x_max"], "x_max"),
        _num(d["y_max"], "y_max"),
    )


def from_dict(cls: type, d: Mapping) -> Record:
    """Inverse of :func:`to_dict`. Raises ``KeyError``/``TypeError`` on
    structurally malformed input; invariants are not checked here."""
    if cls is BoundingBox:
        return box_from_dict(d)
    if cls is HandDetection:
        return HandDetection(
            box_from_dict(d["box"]),
            _num(d["probability"], "probability"),
            d.get("side", "unknown"),
            d.get("in_contact", False),
        )
    if cls is ObjectDetection:
        return ObjectDetection(box_from_dict(d["box"]), _num(d["probability"], "probability"))
    if cls is FrameDetections:
        return FrameDetections(
            video_id=d["video_id"],
            timestamp_s=_num(d["timestamp_s"], "timestamp_s"),
            frame_width=_num(d["frame_width"], "frame_width"),
            frame_height=_num(d["frame_height"], "frame_height"),
            hands=tuple(from_dict(HandDetection, h) for h in d.get("hands", ())),
            objects=tuple(from_dict(ObjectDetection, o) for o in d.get("objects", ())),
        )
    if cls is ClipRecord:
        return ClipRecord(
            video_id=d["video_id"],
            start_s=_num(d["start_s"], "start_s"),
            end_s=_num(d["end_s"], "end_s"),
            frame_refs=tuple(_num(t, "frame_refs") for t in d.get("frame_refs", ())),
        )
    if cls is ScoredClip:
        return ScoredClip(
            clip=from_dict(ClipRecord, d["clip"]),
            hoi_score=_num(d["hoi_score"], "hoi_score"),
            per_frame_terms=tuple(
                FrameTerm(int(h), _num(p, "avg_hand_prob")) for h, p in d["per_frame_terms"]
            ),
        )
    if cls is NarrationRecord:
        meta = d.get("generation_meta")
        return NarrationRecord(
            video_id=d["video_id"],
            timestamp_s=_num(d["timestamp_s"], "timestamp_s"),
            text=d["text"],
            source=d["source"],
            alignability=_opt_num(d.get("alignability"), "alignability"),
            perplexity=_opt_num(d.get("perplexity"), "perplexity"),
            generation_meta=_freeze(meta) if meta is not None else None,
        )
    if cls is ManifestEntry:
        crop = d.get("crop_region")
        return ManifestEntry(
            clip=from_dict(ClipRecord, d["clip"]),
            narration=from_dict(NarrationRecord, d["narration"]),
            domain=d["domain"],
            crop_region=box_from_dict(crop) if crop is not None else None,
            frame_width=_opt_num(d.get("frame_width"), "frame_width"),
            frame_height=_opt_num(d.get("frame_height"), "frame_height"),
        )
    if cls is DatasetManifest:
        return DatasetManifest(
            schema_version=d["schema_version"],
            created_from=tuple(d.get("created_from", ())),
            entries=tuple(from_dict(ManifestEntry, e) for e in d.get("entries", ())),
            stats=_freeze(d.get("stats", {})),
        )
    if cls is EmbeddingBatch:
        return EmbeddingBatch(
            np.asarray(d["video_embeddings"], dtype=float),
            np.asarray(d["text_embeddings"], dtype=float),
            _num(d["temperature"], "temperature"),
        )
    if cls is LossReport:
        return LossReport(
            _num(d["loss"], "loss"),
            np.asarray(d["gradient_video"], dtype=float),
            np.asarray(d["gradient_text"], dtype=float),
        )
    raise TypeError(f"not a core record type: {cls!r}")


def dumps(record: Record | Mapping) -> str:
    """Canonical single-line JSON (no trailing newline)."""
    payload = record if isinstance(record, Mapping) else to_dict(record)
    return json.dumps(
        _plain(payload), ensure_ascii=False, separators=(",", ":"), allow_nan=False
    )


def loads(cls: type, line: str | bytes) -> Record:
    return from_dict(cls, json.loads(line))


def parse(cls: type, line: str | bytes, context: str = "") -> Record:
    """Decode and validate one line; raise :class:`ValidationError` on any
    structural or invariant problem."""
    try:
        record = loads(cls, line)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError([Violation("", f"malformed record ({exc})")], context) from exc
    return require_valid(record, context)


def stable_hash(payload: Any) -> str:
    text = json.dumps(_plain(payload), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
