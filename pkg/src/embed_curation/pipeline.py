"""Stage functions, intermediate artifact formats, and the resumable
end-to-end runner."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from . import assembly, curation, ingest, narration, spatial
from .core import (
    SCHEMA_VERSION,
    ClipRecord,
    FrameDetections,
    ManifestEntry,
    NarrationRecord,
    ScoredClip,
    SchemaVersionError,
    ValidationError,
    box_from_dict,
    box_to_dict,
    from_dict,
    to_dict,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

STAGES = ("ingest", "curate", "crop", "narrate", "assemble")

# Stable process exit codes, one per failure class.
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_SERVICE = 4
EXIT_STAGE = 5


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")

    @property
    def exit_code(self) -> int:
        if isinstance(self.cause, (narration.ServiceError, narration.RephraseError)):
            return EXIT_SERVICE
        if isinstance(self.cause, (ValidationError, SchemaVersionError, json.JSONDecodeError)):
            return EXIT_INPUT
        return EXIT_STAGE


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class LLMConfig:
    kind: str = "stub"  # "stub" or "http"
    url: str | None = None
    stub_responses: str | None = None
    max_in_flight: int = narration.DEFAULT_IN_FLIGHT
    max_retries: int = narration.MAX_RETRIES


@dataclass
class PipelineConfig:
    detections: list[str]
    narrations: list[str]
    out_dir: str
    durations: list[str] = field(default_factory=list)
    captions: list[str] = field(default_factory=list)
    ego_narrations: list[str] = field(default_factory=list)
    clip_len: float = curation.DEFAULT_CLIP_LEN
    frames_per_clip: int = curation.DEFAULT_FRAMES
    min_tail: float = curation.MIN_TAIL_S
    budget: float | int = curation.DEFAULT_BUDGET
    selection_scope: str = "global"
    mode: str = "uniform"
    margin: float = spatial.DEFAULT_MARGIN
    per_frame_crops: bool = False
    align_threshold: float = narration.DEFAULT_ALIGN_THRESHOLD
    ppl_max: float = 10.0
    merge_policy: str = "both"
    keep_unchanged: bool = True
    ego_half_width: float = 0.5
    seed: int = 7
    strict: bool = False
    workers: int = 1
    num_shards: int = 4
    llm: LLMConfig = field(default_factory=LLMConfig)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: str | Path = ".") -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = Path(base_dir)
        kwargs = dict(data)
        for key in ("detections", "narrations", "durations", "captions", "ego_narrations"):
            val = kwargs.get(key, [])
            if isinstance(val, str):
                val = [val]
            kwargs[key] = [str(base / p) for p in val]
        if "out_dir" in kwargs:
            kwargs["out_dir"] = str(base / kwargs["out_dir"])
        llm = dict(kwargs.get("llm", {}))
        llm_known = {f.name for f in fields(LLMConfig)}
        if set(llm) - llm_known:
            raise ConfigError(f"unknown llm keys: {sorted(set(llm) - llm_known)}")
        if llm.get("stub_responses"):
            llm["stub_responses"] = str(base / llm["stub_responses"])
        kwargs["llm"] = LLMConfig(**llm)
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        p = Path(path)
        try:
            raw = p.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            if p.suffix == ".toml":
                data = tomllib.loads(raw.decode("utf-8"))
            else:
                data = json.loads(raw)
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config {p}: {exc}") from exc
        return cls.from_mapping(data, p.parent)

    def check(self) -> None:
        """Validate everything that can be checked before any work starts."""
        if not self.detections:
            raise ConfigError("at least one detections path is required")
        for key in ("detections", "narrations", "durations", "captions", "ego_narrations"):
            for p in getattr(self, key):
                if not Path(p).is_file():
                    raise ConfigError(f"{key}: no such file {p}")
        if self.llm.stub_responses and not Path(self.llm.stub_responses).is_file():
            raise ConfigError(f"llm.stub_responses: no such file {self.llm.stub_responses}")
        if not self.clip_len > 0:
            raise ConfigError("clip_len must be positive")
        if self.frames_per_clip < 1:
            raise ConfigError("frames_per_clip must be >= 1")
        try:
            curation.budget_count(self.budget, 1)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"budget: {exc}") from exc
        if self.mode not in ("uniform", "narration-centered"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.selection_scope not in ("global", "per_video"):
            raise ConfigError(f"unknown selection_scope {self.selection_scope!r}")
        if self.merge_policy not in narration.MERGE_POLICIES:
            raise ConfigError(f"unknown merge_policy {self.merge_policy!r}")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.llm.kind not in ("stub", "http"):
            raise ConfigError(f"unknown llm.kind {self.llm.kind!r}")
        if self.llm.kind == "http" and not (self.llm.url or os.environ.get("EMBED_LLM_URL")):
            raise ConfigError("llm.kind = 'http' needs llm.url or EMBED_LLM_URL")

    def paths(self) -> dict[str, Path]:
        out = Path(self.out_dir)
        return {
            "index": out / "index",
            "scored": out / "scored.jsonl",
            "cropped": out / "cropped.jsonl",
            "exo_ego": out / "exo_ego.jsonl",
            "ego": out / "ego.jsonl",
            "manifest": out / "manifest.jsonl",
            "report": out / "run_report.json",
            "state": out / ".stages",
        }


def make_client(cfg: LLMConfig) -> narration.CompletionClient:
    if cfg.kind == "http":
        return narration.HttpCompletionClient(cfg.url)
    responses = {}
    if cfg.stub_responses:
        responses = json.loads(Path(cfg.stub_responses).read_text(encoding="utf-8"))
    return narration.StubCompletionClient(responses)


# ---------------------------------------------------------------------------
# Intermediate clip artifacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClipArtifact:
    """A selected clip with its sampled frames, paired narrations, and
    (after the crop stage) its crop region."""

    scored: ScoredClip
    frames: tuple[FrameDetections, ...]
    narrations: tuple[NarrationRecord, ...] = ()
    crop: spatial.CroppedClip | None = None
    per_frame_regions: tuple | None = None

    @property
    def clip(self) -> ClipRecord:
        return self.scored.clip

    @property
    def paired(self) -> bool:
        return bool(self.narrations)

    def to_json(self) -> str:
        d: dict[str, Any] = {
            "scored": to_dict(self.scored),
            "frames": [to_dict(f) for f in self.frames],
            "narrations": [to_dict(n) for n in self.narrations],
            "paired": self.paired,
        }
        if self.crop is not None:
            c = self.crop
            d["crop_region"] = box_to_dict(c.crop_region) if c.crop_region else None
            d["frame_width"] = c.frame_width
            d["frame_height"] = c.frame_height
        if self.per_frame_regions is not None:
            d["per_frame_regions"] = [
                box_to_dict(b) if b is not None else None for b in self.per_frame_regions
            ]
        return json.dumps(d, ensure_ascii=False, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "ClipArtifact":
        d = json.loads(line)
        scored = from_dict(ScoredClip, d["scored"])
        frames = tuple(from_dict(FrameDetections, f) for f in d["frames"])
        narrs = tuple(from_dict(NarrationRecord, n) for n in d["narrations"])
        crop = None
        if "crop_region" in d:
            region = d["crop_region"]
            crop = spatial.CroppedClip(
                curation.SampledClip(scored, frames),
                box_from_dict(region) if region is not None else None,
                d.get("frame_width"),
                d.get("frame_height"),
            )
        pfr = d.get("per_frame_regions")
        if pfr is not None:
            pfr = tuple(box_from_dict(b) if b is not None else None for b in pfr)
        return cls(scored, frames, narrs, crop, pfr)


def write_artifacts(items: Sequence[ClipArtifact], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes("".join(a.to_json() + "\n" for a in items).encode("utf-8"))


def read_artifacts(path: Path) -> list[ClipArtifact]:
    with open(path, encoding="utf-8") as fh:
        return [ClipArtifact.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_ingest(
    detections: Sequence[str],
    narrations: Sequence[str],
    out_dir: Path,
    strict: bool = False,
    durations: Sequence[str] = (),
    workers: int = 1,
    num_shards: int = 4,
) -> dict:
    index = ingest.build_index(detections, narrations, strict, workers, durations)
    ingest.write_index(index, out_dir, num_shards)
    return {
        "videos": len(index.video_ids),
        "detections_indexed": index.detection_count(),
        "narrations_indexed": index.narration_count(),
        "skipped": sum(r.skipped for r in index.reports),
        "duplicates": sum(r.duplicates for r in index.reports),
    }


def run_curate(
    index_dir: Path,
    out: Path,
    clip_len: float = curation.DEFAULT_CLIP_LEN,
    frames: int = curation.DEFAULT_FRAMES,
    budget: float | int = curation.DEFAULT_BUDGET,
    mode: str = "uniform",
    scope: str = "global",
    min_tail: float = curation.MIN_TAIL_S,
    workers: int = 1,
) -> dict:
    index = ingest.read_index(index_dir)
    asr = [n for n in index.all_narrations() if n.source == "original_asr"]
    if mode == "uniform":
        clips = []
        for vid in index.video_ids:
            clips += curation.segment_video(
                vid, index.duration_of(vid, clip_len), clip_len, frames, min_tail
            )
    elif mode == "narration-centered":
        clips = [curation.narration_centered_clip(n, clip_len / 2, frames) for n in asr]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    sampled = curation.score_clips(clips, index.detections_by_video, workers)
    selected = curation.select_top_clips(sampled, budget, scope)
    if mode == "uniform":
        pairing = curation.pair_narrations([s.clip for s in selected], asr)
        by_clip: dict[tuple, list[NarrationRecord]] = defaultdict(list)
        for c, n in pairing.pairs:
            by_clip[(c.video_id, c.start_s, c.end_s)].append(n)
    else:
        by_clip = defaultdict(list)
        chosen = {(s.clip.video_id, s.clip.start_s, s.clip.end_s) for s in selected}
        for c, n in zip(clips, asr):
            k = (c.video_id, c.start_s, c.end_s)
            if k in chosen:
                by_clip[k].append(n)
    artifacts = [
        ClipArtifact(
            s.scored,
            s.frames,
            tuple(by_clip.get((s.clip.video_id, s.clip.start_s, s.clip.end_s), ())),
        )
        for s in selected
    ]
    write_artifacts(artifacts, out)
    return {
        "clips_scored": len(sampled),
        "clips_selected": len(selected),
        "clips_paired": sum(a.paired for a in artifacts),
        "clips_unpaired": sum(not a.paired for a in artifacts),
        "narrations_paired": sum(len(a.narrations) for a in artifacts),
    }


def run_crop(scored: Path, out: Path, margin: float = spatial.DEFAULT_MARGIN, per_frame: bool = False) -> dict:
    items = read_artifacts(scored)
    done = []
    for a in items:
        region, w, h = spatial.crop_for(a.frames, margin)
        pfr = None
        if per_frame:
            pfr = tuple(
                spatial.expand_and_clamp(b, margin, f.frame_width, f.frame_height) if b else None
                for b, f in zip(spatial.hull_boxes_per_frame(a.frames), a.frames)
            )
        crop = spatial.CroppedClip(curation.SampledClip(a.scored, a.frames), region, w, h)
        done.append(ClipArtifact(a.scored, a.frames, a.narrations, crop, pfr))
    write_artifacts(done, out)
    return {
        "clips": len(done),
        "with_crop": sum(a.crop.crop_region is not None for a in done),
        "without_crop": sum(a.crop.crop_region is None for a in done),
    }


def _entry(a: ClipArtifact, n: NarrationRecord, domain: str = "exo_ego") -> ManifestEntry:
    crop = a.crop
    if crop is None or crop.crop_region is None:
        return ManifestEntry(a.clip, n, domain)
    return ManifestEntry(a.clip, n, domain, crop.crop_region, crop.frame_width, crop.frame_height)


def run_narrate(
    cropped: Path,
    out: Path,
    client: narration.CompletionClient | None,
    captions: Sequence[str] = (),
    align_threshold: float = narration.DEFAULT_ALIGN_THRESHOLD,
    ppl_max: float = 10.0,
    policy: str = "both",
    keep_unchanged: bool = True,
    max_in_flight: int = narration.DEFAULT_IN_FLIGHT,
    max_retries: int = narration.MAX_RETRIES,
    strict: bool = False,
    created_from: Sequence[str] = (),
    use_rephrase: bool = True,
) -> dict:
    """Build the curated exocentric manifest from cropped clips.

    ASR narrations are alignability-filtered and rephrased (unless
    ``use_rephrase`` is false); narrator captions are perplexity-filtered and
    attached to their clips; both streams are merged per ``policy``.
    """
    items = read_artifacts(cropped)
    by_key = {narration.clip_key(a.clip.video_id, a.clip.start_s): a for a in items}

    originals = [n for a in items for n in a.narrations] if use_rephrase else []
    aligned = narration.filter_alignability(originals, align_threshold)
    rephrased: list[NarrationRecord] = []
    failures: list[narration.RephraseFailure] = []
    if aligned.kept:
        if client is None:
            raise narration.ServiceError("no completion client configured")
        rephrased, failures = narration.rephrase_all(
            list(aligned.kept),
            client,
            max_in_flight=max_in_flight,
            keep_unchanged=keep_unchanged,
            max_retries=max_retries,
        )
    clip_of = {}
    for a in items:
        for n in a.narrations:
            clip_of[(n.video_id, n.timestamp_s, n.text)] = a
    rephrased_by_clip: dict = defaultdict(list)
    for r in rephrased:
        a = clip_of[(r.video_id, r.timestamp_s, r.generation_meta["original"])]
        rephrased_by_clip[narration.clip_key(a.clip.video_id, a.clip.start_s)].append(r)

    generated: list[NarrationRecord] = []
    rejected = 0
    for path in captions:
        recs, rep = narration.ingest_narrator_captions(path, strict)
        generated += recs
        rejected += rep.rejected
    ppl = narration.filter_perplexity(generated, ppl_max)
    generated_by_clip: dict = defaultdict(list)
    unmatched_captions = 0
    for g in ppl.kept:
        key = narration.caption_clip_key(g)
        if key in by_key:
            generated_by_clip[key].append(g)
        else:
            unmatched_captions += 1

    merged = narration.merge_narrations(rephrased_by_clip, generated_by_clip, policy)
    entries = [_entry(by_key[k], n) for k in merged for n in merged[k]]
    manifest = assembly.make_manifest(entries, created_from)
    assembly.write_manifest(manifest, out)

    side = out.parent
    _write_lines(side / "rephrase_failures.jsonl", [
        json.dumps({"reason": f.reason, "narration": to_dict(f.narration)}, ensure_ascii=False)
        for f in failures
    ])
    _write_lines(side / "needs_scoring.jsonl", [
        json.dumps(to_dict(n), ensure_ascii=False) for n in aligned.needs_scoring
    ])
    return {
        "asr_input": len(originals),
        "alignability_kept": len(aligned.kept),
        "alignability_dropped": len(aligned.dropped),
        "needs_scoring": len(aligned.needs_scoring),
        "rephrased": len(rephrased),
        "rephrase_failed": len(failures),
        "captions_ingested": len(generated),
        "captions_rejected": rejected,
        "perplexity_kept": len(ppl.kept),
        "perplexity_dropped": len(ppl.dropped),
        "captions_unmatched": unmatched_captions,
        "pairs": len(manifest.entries),
        "videos": manifest.stats["video_count"]["exo_ego"],
    }


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    path.write_bytes("".join(line + "\n" for line in lines).encode("utf-8"))


def build_ego_manifest(
    paths: Sequence[str], half_width: float = 0.5, frames: int = 4, strict: bool = False
) -> tuple[assembly.DatasetManifest, dict]:
    narrs: list[NarrationRecord] = []
    for p in paths:
        narrs += ingest.ingest_narrations(p, strict).all_narrations()
    narrs = [n for n in narrs if n.source == "ego_manual"]
    kept, rep = ingest.filter_ego_narrations(narrs)
    entries = [ManifestEntry(ingest.ego_clip(n, half_width, frames), n, "ego") for n in kept]
    tags = [Path(p).stem for p in paths]
    counts = {
        "ego_input": rep.input_count,
        "ego_kept": rep.kept,
        "ego_dropped_unsure": rep.dropped_unsure,
        "ego_dropped_short": rep.dropped_short,
    }
    return assembly.make_manifest(entries, tags), counts


def run_assemble(ego: Path | None, exo: Path | None, out: Path) -> dict:
    parts = [assembly.read_manifest(p) for p in (ego, exo) if p is not None]
    combined = assembly.concat_datasets(*parts)
    assembly.write_manifest(combined, out)
    return {
        "pairs": dict(combined.stats["pair_count"]),
        "videos": dict(combined.stats["video_count"]),
        "manifest_sha256": hashlib.sha256(out.read_bytes()).hexdigest(),
    }


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _digest_paths(paths: Sequence[Path | str]) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        files = sorted(x for x in p.rglob("*") if x.is_file()) if p.is_dir() else [p]
        for f in files:
            h.update(f.name.encode())
            h.update(hashlib.sha256(f.read_bytes()).digest())
    return h.hexdigest()


@dataclass
class RunResult:
    exit_code: int
    report: dict
    skipped: list[str] = field(default_factory=list)
    failed_stage: str | None = None
    error: str | None = None


def run_pipeline(
    cfg: PipelineConfig,
    resume: bool = False,
    client: narration.CompletionClient | None = None,
) -> RunResult:
    """Run every stage in order; with ``resume`` a stage whose inputs and
    settings hash to a previously completed run is skipped."""
    paths = cfg.paths()
    state_dir = paths["state"]
    state_dir.mkdir(parents=True, exist_ok=True)
    report: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "stages": {}}
    skipped: list[str] = []
    sources = [Path(p).stem for p in cfg.detections]

    def ego_stage():
        manifest, counts = build_ego_manifest(
            cfg.ego_narrations, cfg.ego_half_width, cfg.frames_per_clip, cfg.strict
        )
        assembly.write_manifest(manifest, paths["ego"])
        return counts

    plan = [
        (
            "ingest",
            [*cfg.detections, *cfg.narrations, *cfg.durations],
            {"strict": cfg.strict, "num_shards": cfg.num_shards},
            [paths["index"]],
            lambda: run_ingest(
                cfg.detections, cfg.narrations, paths["index"], cfg.strict,
                cfg.durations, cfg.workers, cfg.num_shards,
            ),
        ),
        (
            "curate",
            [paths["index"]],
            {
                "clip_len": cfg.clip_len, "frames": cfg.frames_per_clip, "budget": cfg.budget,
                "mode": cfg.mode, "scope": cfg.selection_scope, "min_tail": cfg.min_tail,
            },
            [paths["scored"]],
            lambda: run_curate(
                paths["index"], paths["scored"], cfg.clip_len, cfg.frames_per_clip,
                cfg.budget, cfg.mode, cfg.selection_scope, cfg.min_tail, cfg.workers,
            ),
        ),
        (
            "crop",
            [paths["scored"]],
            {"margin": cfg.margin, "per_frame": cfg.per_frame_crops},
            [paths["cropped"]],
            lambda: run_crop(paths["scored"], paths["cropped"], cfg.margin, cfg.per_frame_crops),
        ),
        (
            "narrate",
            [paths["cropped"], *cfg.captions]
            + ([cfg.llm.stub_responses] if cfg.llm.stub_responses else []),
            {
                "align_threshold": cfg.align_threshold, "ppl_max": cfg.ppl_max,
                "policy": cfg.merge_policy, "keep_unchanged": cfg.keep_unchanged,
                "llm": {"kind": cfg.llm.kind, "url": cfg.llm.url},
            },
            [paths["exo_ego"]],
            lambda: run_narrate(
                paths["cropped"], paths["exo_ego"], client or make_client(cfg.llm),
                cfg.captions, cfg.align_threshold, cfg.ppl_max, cfg.merge_policy,
                cfg.keep_unchanged, cfg.llm.max_in_flight, cfg.llm.max_retries,
                cfg.strict, sources,
            ),
        ),
        (
            "assemble",
            [paths["exo_ego"], *cfg.ego_narrations],
            {"ego_half_width": cfg.ego_half_width, "frames": cfg.frames_per_clip},
            [paths["manifest"]],
            lambda: {
                **ego_stage(),
                **run_assemble(paths["ego"], paths["exo_ego"], paths["manifest"]),
            },
        ),
    ]

    for name, inputs, settings, outputs, action in plan:
        state_file = state_dir / f"{name}.json"
        try:
            key = hashlib.sha256(
                json.dumps(
                    {"stage": name, "inputs": _digest_paths(inputs), "settings": settings},
                    sort_keys=True,
                ).encode()
            ).hexdigest()
        except OSError as exc:
            return _fail(report, skipped, name, exc)
        if resume and state_file.is_file() and all(Path(o).exists() for o in outputs):
            state = json.loads(state_file.read_text(encoding="utf-8"))
            if state.get("key") == key:
                logger.info("stage skipped", extra={"stage": name, "reason": "up to date"})
                report["stages"][name] = state["report"]
                skipped.append(name)
                continue
        logger.info("stage start", extra={"stage": name})
        try:
            counts = action()
        except Exception as exc:  # any stage failure halts the run
            return _fail(report, skipped, name, exc)
        report["stages"][name] = counts
        state_file.write_text(
            json.dumps({"key": key, "report": counts}, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        logger.info("stage done", extra={"stage": name, "counts": counts})

    manifest = assembly.read_manifest(paths["manifest"])
    report["manifest"] = {
        "path": paths["manifest"].name,
        "entries": len(manifest.entries),
        "stats": manifest.stats,
        "sha256": hashlib.sha256(paths["manifest"].read_bytes()).hexdigest(),
    }
    paths["report"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(EXIT_OK, report, skipped)


def _fail(report: dict, skipped: list[str], stage: str, exc: BaseException) -> RunResult:
    err = StageError(stage, exc)
    logger.error("stage failed", extra={"stage": stage, "error": str(exc)})
    return RunResult(err.exit_code, report, skipped, stage, str(err))
