"""
Building a manifest and drawing batches
=======================================

"""

import tempfile
from pathlib import Path

from embed_curation import BoundingBox, ClipRecord, ManifestEntry, NarrationRecord
from embed_curation.assembly import concat_datasets, iter_batches, make_manifest, read_manifest, write_manifest

ego = make_manifest(
    [
        ManifestEntry(ClipRecord("ego_a", t, t + 1.0, (t + 0.5,)), NarrationRecord("ego_a", t + 0.5, "#C C opens the drawer", "ego_manual"), "ego")
        for t in (0.0, 4.0, 8.0)
    ],
    ["ego_narrations"],
)
exo = make_manifest(
    [
        ManifestEntry(
            ClipRecord("htm_a", t, t + 5.0, (t + 2.5,)),
            NarrationRecord("htm_a", t + 1.0, "a person stirs the pot", "rephrased", alignability=0.9),
            "exo_ego", BoundingBox(50, 40, 300, 260), 640.0, 360.0,
        )
        for t in (0.0, 5.0)
    ],
    ["detections"],
)

combined = concat_datasets(ego, exo)
print(combined.stats)

# identical manifests always serialize to identical bytes
out = Path(tempfile.mkdtemp()) / "combined.jsonl"
write_manifest(combined, out)
assert read_manifest(out) == combined
print(out.read_text().splitlines()[0][:120], "...")

# entries with a crop region show the cropped view about half the time
for step, batch in enumerate(iter_batches(combined, batch_size=2, seed=7, steps=4)):
    print(step, [(s.domain, s.view) for s in batch])
