"""
Scoring clips by hand-object interaction
========================================

"""

import numpy as np

from embed_curation import BoundingBox, FrameDetections, HandDetection, ObjectDetection
from embed_curation.curation import hoi_score, segment_video, select_top_clips, score_clip
from embed_curation.synthetic import random_clip_frames

# a 15 second video tiles into three 5 second clips, each sampled at 4 midpoints
clips = segment_video("kitchen_01", 15.0)
for c in clips:
    print(c.start_s, c.end_s, c.frame_refs)

# two frames where a hand touches an object, two empty frames
box = BoundingBox(100, 100, 160, 150)
busy = FrameDetections("kitchen_01", 0.625, 640, 360, (HandDetection(box, 0.8, "right", True),), (ObjectDetection(box, 0.9),))
two_hands = FrameDetections(
    "kitchen_01", 1.875, 640, 360,
    (HandDetection(box, 0.6, "left", True), HandDetection(box, 0.7, "right", False)),
    (ObjectDetection(box, 0.9),),
)
empty = FrameDetections("kitchen_01", 3.125, 640, 360, (), ())
score, terms = hoi_score([busy, two_hands, empty, empty])
print("score", score)  # (1.8 + 1.65 + 0 + 0) / 4
print([(t.hoi_indicator, round(t.avg_hand_prob, 3)) for t in terms])

# rank a batch of random clips and keep the top ten
rng = np.random.default_rng(0)
scored = [score_clip(c, random_clip_frames(rng, start_s=c.start_s)) for c in segment_video("long_video", 300.0)]
for s in select_top_clips(scored, 10):
    print(f"{s.clip.start_s:6.1f}  {s.hoi_score:.3f}")
