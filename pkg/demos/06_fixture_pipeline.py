"""
Running the full pipeline on the bundled fixture
================================================

"""

import json
import shutil
import tempfile
from pathlib import Path

from embed_curation.pipeline import PipelineConfig, run_pipeline
from embed_curation.synthetic import FIXTURE_DIR

work = Path(tempfile.mkdtemp()) / "fixture"
shutil.copytree(FIXTURE_DIR, work)

cfg = PipelineConfig.load(work / "pipeline.toml")
result = run_pipeline(cfg)
print("exit code", result.exit_code)
print(json.dumps(result.report["stages"], indent=1, sort_keys=True))

# a second run with resume skips every stage
again = run_pipeline(cfg, resume=True)
print("skipped", again.skipped)

for line in (work / "out" / "manifest.jsonl").read_text().splitlines()[-2:]:
    e = json.loads(line)
    print(e["narration"]["source"], "|", e["narration"]["text"], "|", e["crop_region"])
