"""
Rewriting narrations in action-centric style
============================================

"""

from embed_curation import NarrationRecord
from embed_curation.narration import (
    StubCompletionClient,
    build_rephrase_prompt,
    filter_alignability,
    rephrase_all,
)

asr = [
    NarrationRecord("htm_07", 4.2, "i'm just gonna start by cutting it in half", "original_asr", alignability=0.92),
    NarrationRecord("htm_07", 9.8, "thank you guys so much for watching", "original_asr", alignability=0.03),
    NarrationRecord("htm_07", 12.5, "now we whisk the eggs together", "original_asr", alignability=0.81),
]

# sentences that do not describe anything visible are dropped first
res = filter_alignability(asr, threshold=0.5)
print(res.counts)

# the prompt sent to the completion service
print(build_rephrase_prompt(res.kept[0].text).render())

# an offline stub stands in for the language model; a canned reply for the
# first sentence, a filler-stripping rewrite for everything else
client = StubCompletionClient({"i'm just gonna start by cutting it in half": "a person cuts it in half"})
done, failed = rephrase_all(res.kept, client)
for n in done:
    print(f"{n.generation_meta['original']!r} -> {n.text!r}")
print("failures:", failed)
