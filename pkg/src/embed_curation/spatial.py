"""Crop geometry: union box of all hand/object detections in a clip."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from .core import BoundingBox, FrameDetections
from .curation import SampledClip

DEFAULT_MARGIN = 0.1


def union_box(boxes: Iterable[BoundingBox]) -> BoundingBox | None:
    """Smallest axis-aligned box containing every input box."""
    it = iter(boxes)
    first = next(it, None)
    if first is None:
        return None
    x0, y0, x1, y1 = first.as_tuple()
    for b in it:
        x0 = min(x0, b.x_min)
        y0 = min(y0, b.y_min)
        x1 = max(x1, b.x_max)
        y1 = max(y1, b.y_max)
    return BoundingBox(x0, y0, x1, y1)


def hull_box(frames: Sequence[FrameDetections]) -> BoundingBox | None:
    """Bounding box of the convex hull of every hand and object box across
    ``frames``. For axis-aligned inputs this is the component-wise min/max of
    the box corners. ``None`` when nothing was detected."""
    return union_box(b for f in frames for b in f.boxes())


def hull_boxes_per_frame(frames: Sequence[FrameDetections]) -> list[BoundingBox | None]:
    return [union_box(f.boxes()) for f in frames]


def expand_and_clamp(
    box: BoundingBox,
    margin_frac: float = DEFAULT_MARGIN,
    frame_w: float | None = None,
    frame_h: float | None = None,
) -> BoundingBox:
    """Pad ``box`` by ``margin_frac`` of its width/height on every side, then
    clamp to ``[0, frame_w] x [0, frame_h]``.

    >>> expand_and_clamp(BoundingBox(10, 10, 50, 50), 0.1, 100, 100)
    BoundingBox(x_min=6.0, y_min=6.0, x_max=54.0, y_max=54.0)
    """
    if margin_frac < 0:
        raise ValueError("margin_frac must be >= 0")
    dx = margin_frac * box.width
    dy = margin_frac * box.height
    x0, y0 = max(0.0, box.x_min - dx), max(0.0, box.y_min - dy)
    x1, y1 = box.x_max + dx, box.y_max + dy
    if frame_w is not None:
        x1 = min(frame_w, x1)
    if frame_h is not None:
        y1 = min(frame_h, y1)
    return BoundingBox(float(x0), float(y0), float(x1), float(y1))


@dataclass(frozen=True)
class CroppedClip:
    sampled: SampledClip
    crop_region: BoundingBox | None
    frame_width: float | None = None
    frame_height: float | None = None

    @property
    def clip(self):
        return self.sampled.clip


def crop_for(frames: Sequence[FrameDetections], margin_frac: float = DEFAULT_MARGIN):
    """``(crop_region, frame_w, frame_h)`` for one clip, or ``(None, None, None)``."""
    hull = hull_box(frames)
    if hull is None:
        return None, None, None
    # crop refers to the largest frame among those with detections
    with_boxes = [f for f in frames if f.hands or f.objects]
    w = max(f.frame_width for f in with_boxes)
    h = max(f.frame_height for f in with_boxes)
    return expand_and_clamp(hull, margin_frac, w, h), w, h


def attach_crops(
    clips: Iterable[SampledClip], margin_frac: float = DEFAULT_MARGIN
) -> list[CroppedClip]:
    out = []
    for sc in clips:
        region, w, h = crop_for(sc.frames, margin_frac)
        out.append(CroppedClip(sc, region, w, h))
    return out
