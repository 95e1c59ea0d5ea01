"""
Cropping to the interaction region
==================================

"""

import numpy as np

from embed_curation.spatial import expand_and_clamp, hull_box, hull_boxes_per_frame
from embed_curation.synthetic import random_clip_frames

rng = np.random.default_rng(3)
frames = random_clip_frames(rng)

# one region covering every hand and object box in the clip
hull = hull_box(frames)
print("hull", hull.as_tuple() if hull else None)

# pad by 10% of the width/height and keep it inside the frame
if hull is not None:
    crop = expand_and_clamp(hull, 0.1, frames[0].frame_width, frames[0].frame_height)
    print("crop", tuple(round(v, 1) for v in crop.as_tuple()))
    print("all boxes inside:", all(crop.contains(b) for f in frames for b in f.boxes()))

# the per-frame variant gives one region per sampled frame
for region in hull_boxes_per_frame(frames):
    print(region.as_tuple() if region else "no detections")
