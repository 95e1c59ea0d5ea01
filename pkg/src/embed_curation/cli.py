"""``embed`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import assembly, curation, narration, oracles, pipeline, spatial
from .pipeline import EXIT_CONFIG, EXIT_INPUT, EXIT_OK, EXIT_SERVICE, EXIT_STAGE

logger = logging.getLogger("embed")

_STD_ATTRS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonLineFormatter(logging.Formatter):
    """One JSON object per log line; ``extra=`` fields are inlined."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for k, v in vars(record).items():
            if k not in _STD_ATTRS and not k.startswith("_"):
                payload[k] = v
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str, ensure_ascii=False)


def setup_logging(quiet: bool = False, verbose: bool = False) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO)


def _budget(text: str) -> int | float:
    try:
        return int(text)
    except ValueError:
        return float(text)


def _emit(report: dict) -> None:
    print(json.dumps(report, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    report = pipeline.run_ingest(
        args.detections, args.narrations, Path(args.out), args.strict,
        args.durations, args.workers, args.shards,
    )
    _emit(report)
    return EXIT_OK


def cmd_curate(args) -> int:
    report = pipeline.run_curate(
        Path(args.index), Path(args.out), args.clip_len, args.frames, args.budget,
        args.mode, args.scope, args.min_tail, args.workers,
    )
    _emit(report)
    return EXIT_OK


def cmd_crop(args) -> int:
    _emit(pipeline.run_crop(Path(args.scored), Path(args.out), args.margin, args.per_frame))
    return EXIT_OK


def cmd_narrate(args) -> int:
    use_rephrase = args.mode in ("rephrase", "both")
    captions = args.captions if args.mode in ("ingest-captions", "both") else []
    client = None
    if use_rephrase:
        client = pipeline.make_client(
            pipeline.LLMConfig(kind=args.llm, url=args.llm_url, stub_responses=args.stub_responses)
        )
    report = pipeline.run_narrate(
        Path(args.cropped), Path(args.out), client, captions,
        args.align_threshold, args.ppl_max, args.policy, not args.drop_unchanged,
        args.max_in_flight, narration.MAX_RETRIES, args.strict,
        use_rephrase=use_rephrase,
    )
    _emit(report)
    return EXIT_OK


def cmd_assemble(args) -> int:
    ego = Path(args.ego) if args.ego else None
    if args.ego_narrations:
        manifest, counts = pipeline.build_ego_manifest(args.ego_narrations, args.ego_half_width)
        ego = Path(args.out).with_name("ego.jsonl")
        assembly.write_manifest(manifest, ego)
    else:
        counts = {}
    exo = Path(args.exo) if args.exo else None
    _emit({**counts, **pipeline.run_assemble(ego, exo, Path(args.out))})
    return EXIT_OK


def cmd_sample(args) -> int:
    manifest = assembly.read_manifest(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for step, batch in enumerate(
            assembly.iter_batches(manifest, args.batch, args.seed, args.steps)
        ):
            for s in batch:
                fh.write(json.dumps({"step": step, **s.as_dict()}, ensure_ascii=False) + "\n")
    _emit({"steps": args.steps, "batch": args.batch, "seed": args.seed, "out": str(out)})
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = oracles.run_suite(args.suite, args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_STAGE


def cmd_run(args) -> int:
    cfg = pipeline.PipelineConfig.load(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out_dir = args.out
    start = time.perf_counter()
    result = pipeline.run_pipeline(cfg, resume=args.resume)
    logger.info(
        "run finished",
        extra={
            "exit_code": result.exit_code,
            "skipped": result.skipped,
            "seconds": round(time.perf_counter() - start, 3),
        },
    )
    if result.exit_code != EXIT_OK:
        print(result.error, file=sys.stderr)
        return result.exit_code
    _emit(result.report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="embed",
        description="Curate exocentric video-language data into egocentric-style "
        "training manifests.",
    )
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    p.add_argument("--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate and index detection/narration files")
    s.add_argument("--detections", nargs="+", default=[], metavar="D.jsonl")
    s.add_argument("--narrations", nargs="+", default=[], metavar="N.jsonl")
    s.add_argument("--durations", nargs="+", default=[], metavar="V.jsonl",
                   help="optional {video_id, duration_s} lines")
    s.add_argument("--strict", action="store_true", help="abort on the first invalid line")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--shards", type=int, default=4)
    s.add_argument("--out", required=True, metavar="DIR")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("curate", help="segment, score, select, and pair clips")
    s.add_argument("--index", required=True, metavar="DIR")
    s.add_argument("--clip-len", type=float, default=curation.DEFAULT_CLIP_LEN)
    s.add_argument("--frames", type=int, default=curation.DEFAULT_FRAMES)
    s.add_argument("--budget", type=_budget, default=curation.DEFAULT_BUDGET,
                   help="integer count or fraction in (0, 1] (default 0.6)")
    s.add_argument("--mode", choices=("uniform", "narration-centered"), default="uniform")
    s.add_argument("--scope", choices=("global", "per_video"), default="global")
    s.add_argument("--min-tail", type=float, default=curation.MIN_TAIL_S)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True, metavar="scored.jsonl")
    s.set_defaults(func=cmd_curate)

    s = sub.add_parser("crop", help="attach hand/object crop regions")
    s.add_argument("--scored", required=True)
    s.add_argument("--margin", type=float, default=spatial.DEFAULT_MARGIN)
    s.add_argument("--per-frame", action="store_true", help="also emit one region per frame")
    s.add_argument("--out", required=True, metavar="cropped.jsonl")
    s.set_defaults(func=cmd_crop)

    s = sub.add_parser("narrate", help="filter, rephrase, and attach narrations")
    s.add_argument("--mode", choices=("rephrase", "ingest-captions", "both"), default="both")
    s.add_argument("--cropped", required=True)
    s.add_argument("--captions", nargs="+", default=[])
    s.add_argument("--align-threshold", type=float, default=narration.DEFAULT_ALIGN_THRESHOLD)
    s.add_argument("--ppl-max", type=float, default=10.0)
    s.add_argument("--policy", choices=narration.MERGE_POLICIES, default="both")
    s.add_argument("--drop-unchanged", action="store_true",
                   help="drop rephrasings identical to their input")
    s.add_argument("--llm", choices=("stub", "http"), default="http",
                   help="completion backend; http uses EMBED_LLM_URL/EMBED_LLM_TOKEN")
    s.add_argument("--llm-url", default=None)
    s.add_argument("--stub-responses", default=None, help="JSON map of canned stub replies")
    s.add_argument("--max-in-flight", type=int, default=narration.DEFAULT_IN_FLIGHT)
    s.add_argument("--strict", action="store_true")
    s.add_argument("--out", required=True, metavar="exo_ego.jsonl")
    s.set_defaults(func=cmd_narrate)

    s = sub.add_parser("assemble", help="concatenate ego and curated manifests")
    s.add_argument("--ego", help="ego manifest (jsonl + meta)")
    s.add_argument("--ego-narrations", nargs="+", default=[],
                   help="build the ego manifest from raw ego narrations instead")
    s.add_argument("--ego-half-width", type=float, default=0.5)
    s.add_argument("--exo", help="curated exo_ego manifest")
    s.add_argument("--out", required=True, metavar="combined.jsonl")
    s.set_defaults(func=cmd_assemble)

    s = sub.add_parser("sample", help="emit seeded training batches")
    s.add_argument("--manifest", required=True)
    s.add_argument("--batch", type=int, default=1024)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--steps", type=int, default=1)
    s.add_argument("--out", required=True, metavar="batches.jsonl")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("verify", help="run the loss and metric oracle suites")
    s.add_argument("--suite", choices=("infonce", "metrics", "all"), default="all")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("run", help="run ingest -> curate -> crop -> narrate -> assemble")
    s.add_argument("--config", required=True, help="TOML or JSON pipeline config")
    s.add_argument("--resume", action="store_true", help="skip stages that are up to date")
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--out", default=None, help="override the config's out_dir")
    s.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.quiet, args.verbose)
    try:
        return args.func(args)
    except pipeline.ConfigError as exc:
        logger.error("config error", extra={"error": str(exc)})
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.ValidationError, pipeline.SchemaVersionError, json.JSONDecodeError,
            OSError, KeyError) as exc:
        logger.error("input error", extra={"error": str(exc)})
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (narration.ServiceError, narration.RephraseError) as exc:
        logger.error("service error", extra={"error": str(exc)})
        print(f"service error: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except ValueError as exc:
        logger.error("invalid argument", extra={"error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
