"""Narration transforms: alignability and perplexity filters, few-shot
exo-to-ego rephrasing through a text-completion service, narrator caption
ingestion, and per-clip merging."""

from __future__ import annotations

import json
import logging
import math
import os
import time
import urllib.error
import urllib.request
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Protocol

from .core import (
    ClipRecord,
    NarrationRecord,
    ValidationError,
    Violation,
    require_valid,
)

logger = logging.getLogger(__name__)

DEFAULT_ALIGN_THRESHOLD = 0.5
MAX_COMPLETION_TOKENS = 64
MAX_RETRIES = 3
DEFAULT_IN_FLIGHT = 8

SYSTEM_INSTRUCTION = "You are an assistant that extracts actions given the user inputs."

# Published few-shot pairs; the remaining annotated pairs were never released.
FEW_SHOT_PAIRS: tuple[tuple[str, str], ...] = (
    ("and finally i'll route the rest of the hair here", "route the rest of the hair"),
    ("the clay is pressed into shape over the mold", "press the clay into shape over the mold"),
    ("let's start by turning on my stove", "turn on the stove"),
)


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterResult:
    kept: tuple[NarrationRecord, ...]
    dropped: tuple[NarrationRecord, ...]
    needs_scoring: tuple[NarrationRecord, ...] = ()

    @property
    def counts(self) -> dict[str, int]:
        return {
            "input": len(self.kept) + len(self.dropped) + len(self.needs_scoring),
            "kept": len(self.kept),
            "dropped": len(self.dropped),
            "needs_scoring": len(self.needs_scoring),
        }


def filter_alignability(
    narrations: Iterable[NarrationRecord], threshold: float = DEFAULT_ALIGN_THRESHOLD
) -> FilterResult:
    """Keep narrations whose alignability score is ``>= threshold``.

    Narrations with no score go to ``needs_scoring`` rather than being kept.
    """
    kept, dropped, pending = [], [], []
    for n in narrations:
        if n.alignability is None:
            pending.append(n)
        elif n.alignability >= threshold:
            kept.append(n)
        else:
            dropped.append(n)
    return FilterResult(tuple(kept), tuple(dropped), tuple(pending))


def filter_perplexity(records: Iterable[NarrationRecord], max_perplexity: float) -> FilterResult:
    """Keep generations with perplexity ``<= max_perplexity`` (confident ones)."""
    kept, dropped = [], []
    for r in records:
        if r.perplexity is None:
            raise ValueError(f"narration without perplexity: {r.video_id}@{r.timestamp_s}")
        (kept if r.perplexity <= max_perplexity else dropped).append(r)
    return FilterResult(tuple(kept), tuple(dropped))


# ---------------------------------------------------------------------------
# Prompt
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RephrasePrompt:
    system_instruction: str
    few_shot_pairs: tuple[tuple[str, str], ...]
    query: str

    def render(self) -> str:
        lines = [
            "## Instruction",
            f"System: {self.system_instruction}",
            "",
            "## Exo-to-Ego Rephrasing Examples",
            "## User: Input; Assistant: Output.",
        ]
        for exo, ego in self.few_shot_pairs:
            lines += [f"User: {exo}", f"Assistant: {ego}", ""]
        lines += ["## Rephrasing New User Input", f"User: {self.query}", ""]
        return "\n".join(lines)


def build_rephrase_prompt(
    exo_text: str,
    few_shot_pairs: Sequence[tuple[str, str]] = FEW_SHOT_PAIRS,
    system_instruction: str = SYSTEM_INSTRUCTION,
) -> RephrasePrompt:
    if not exo_text.strip():
        raise ValueError("exo_text must be nonempty")
    if not few_shot_pairs:
        raise ValueError("at least one few-shot pair is required")
    return RephrasePrompt(
        system_instruction,
        tuple((str(a), str(b)) for a, b in few_shot_pairs),
        exo_text.strip(),
    )


# ---------------------------------------------------------------------------
# Completion service
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = MAX_COMPLETION_TOKENS
    temperature: float = 0.0
    stop: tuple[str, ...] = ("\nUser:",)

    def to_json(self) -> dict:
        return {
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "stop": list(self.stop),
        }


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    token_logprobs: tuple[float, ...] | None = None

    @classmethod
    def from_json(cls, body: Mapping) -> "CompletionResponse":
        if not isinstance(body.get("text"), str):
            raise ServiceError("response body lacks a 'text' string")
        lp = body.get("token_logprobs")
        return cls(body["text"], tuple(float(x) for x in lp) if lp is not None else None)


class ServiceError(RuntimeError):
    """Permanent completion-service failure."""


class TransientServiceError(ServiceError):
    """Failure worth retrying (timeouts, 5xx, 429)."""


class CompletionClient(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


class HttpCompletionClient:
    """JSON-over-HTTP client. POSTs the request body to ``url`` with an
    optional bearer token; reads ``EMBED_LLM_URL``/``EMBED_LLM_TOKEN`` when
    arguments are omitted."""

    def __init__(self, url: str | None = None, token: str | None = None, timeout: float = 30.0):
        self.url = url or os.environ.get("EMBED_LLM_URL")
        if not self.url:
            raise ServiceError("no completion endpoint configured (set EMBED_LLM_URL)")
        self.token = token if token is not None else os.environ.get("EMBED_LLM_TOKEN")
        self.timeout = timeout

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        data = json.dumps(request.to_json()).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(self.url, data=data, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise TransientServiceError(f"HTTP {exc.code}") from exc
            raise ServiceError(f"HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise TransientServiceError(str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise ServiceError("response is not JSON") from exc
        return CompletionResponse.from_json(body)


_FILLER = frozenset(
    "so and now then okay ok well just i i'm i'll we we're we'll you you're "
    "let's gonna going to start by finally first next here".split()
)


def stub_rewrite(text: str) -> str:
    """Deterministic stand-in for the rephrasing model: strips leading filler
    words and prefixes ``"a person"``."""
    words = text.strip().rstrip(".!?").split()
    i = 0
    while i < len(words) - 1 and words[i].lower() in _FILLER:
        i += 1
    return "a person " + " ".join(words[i:])


class StubCompletionClient:
    """Offline completion service for tests and fixture runs.

    Looks the query (the last ``User:`` line of the prompt) up in
    ``responses``; falls back to ``rewrite``. ``script`` may hold exceptions
    or strings returned in order before normal behaviour resumes.
    """

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        rewrite: Callable[[str], str] | None = stub_rewrite,
        script: Sequence[object] = (),
    ):
        self.responses = dict(responses or {})
        self.rewrite = rewrite
        self.script = list(script)
        self.calls: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.calls.append(request)
        if self.script:
            item = self.script.pop(0)
            if isinstance(item, BaseException):
                raise item
            return CompletionResponse(str(item))
        query = query_of(request.prompt)
        if query in self.responses:
            return CompletionResponse(self.responses[query])
        if self.rewrite is None:
            return CompletionResponse(query)
        return CompletionResponse(self.rewrite(query))


def query_of(prompt: str) -> str:
    for line in reversed(prompt.splitlines()):
        if line.startswith("User: "):
            return line[len("User: ") :]
    return ""


# ---------------------------------------------------------------------------
# Rephrasing
# ---------------------------------------------------------------------------


class RephraseError(RuntimeError):
    pass


class EmptyCompletion(RephraseError):
    pass


class DegenerateCompletion(RephraseError):
    pass


def clean_completion(text: str) -> str:
    """Strip role prefixes and anything after the first answer line."""
    out = text.strip()
    for prefix in ("Assistant:", "assistant:"):
        if out.startswith(prefix):
            out = out[len(prefix) :].strip()
    out = out.split("\n")[0].rstrip()
    return out


@dataclass(frozen=True)
class RephraseFailure:
    narration: NarrationRecord
    reason: str


def rephrase(
    narration: NarrationRecord,
    client: CompletionClient,
    few_shot_pairs: Sequence[tuple[str, str]] = FEW_SHOT_PAIRS,
    max_retries: int = MAX_RETRIES,
    backoff_s: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> NarrationRecord:
    """Rewrite one ASR narration in action-centric style.

    Transient service errors are retried up to ``max_retries`` times with
    exponential backoff. Raises :class:`ServiceError` or
    :class:`RephraseError` when no usable completion is obtained. The input
    record is left untouched; its text is kept in ``generation_meta``.
    """
    prompt = build_rephrase_prompt(narration.text, few_shot_pairs)
    request = CompletionRequest(prompt.render())
    attempt = 0
    while True:
        try:
            response = client.complete(request)
            break
        except TransientServiceError:
            if attempt >= max_retries:
                raise
            sleep(backoff_s * 2**attempt)
            attempt += 1
    text = clean_completion(response.text)
    if not text:
        raise EmptyCompletion("empty completion")
    if len(text.split()) > MAX_COMPLETION_TOKENS:
        raise DegenerateCompletion(f"completion longer than {MAX_COMPLETION_TOKENS} tokens")
    meta = dict(narration.generation_meta or {})
    meta.update(
        {
            "original": narration.text,
            "original_source": narration.source,
            "unchanged": text == narration.text.strip(),
        }
    )
    return replace(narration, text=text, source="rephrased", generation_meta=meta)


def rephrase_all(
    narrations: Sequence[NarrationRecord],
    client: CompletionClient,
    max_in_flight: int = DEFAULT_IN_FLIGHT,
    keep_unchanged: bool = True,
    **kwargs,
) -> tuple[list[NarrationRecord], list[RephraseFailure]]:
    """Rephrase many narrations with bounded concurrency.

    Results come back in input order. Failures land in the returned failure
    queue with the original record preserved.
    """

    def one(n: NarrationRecord):
        try:
            return rephrase(n, client, **kwargs)
        except (ServiceError, RephraseError) as exc:
            return RephraseFailure(n, f"{type(exc).__name__}: {exc}")

    if max_in_flight > 1 and len(narrations) > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(one, narrations))
    else:
        results = [one(n) for n in narrations]
    done = [r for r in results if isinstance(r, NarrationRecord)]
    failed = [r for r in results if isinstance(r, RephraseFailure)]
    if not keep_unchanged:
        done = [r for r in done if not r.generation_meta.get("unchanged")]
    if failed:
        logger.warning("rephrase: %d of %d narrations failed", len(failed), len(narrations))
    return done, failed


# ---------------------------------------------------------------------------
# Narrator captions
# ---------------------------------------------------------------------------


@dataclass
class CaptionIngestReport:
    path: str
    ingested: int = 0
    rejected: int = 0
    errors: list[str] = field(default_factory=list)


def caption_from_dict(d: Mapping) -> NarrationRecord:
    """Build a narrator record from one caption line.

    Expected keys: ``video_id``, ``start_s``, ``end_s``, ``text``,
    ``perplexity`` and optional ``generation_meta``. The timestamp is the
    clip midpoint; the clip bounds are kept in ``generation_meta``.
    """
    if d.get("perplexity") is None:
        raise ValidationError([Violation("perplexity", "perplexity required")])
    start, end = float(d["start_s"]), float(d["end_s"])
    if not start < end:
        raise ValidationError([Violation("", "start_s < end_s")])
    meta = {"clip_start_s": start, "clip_end_s": end}
    meta.update(d.get("generation_meta") or {})
    rec = NarrationRecord(
        video_id=d["video_id"],
        timestamp_s=(start + end) / 2,
        text=d["text"],
        source="narrator_generated",
        perplexity=float(d["perplexity"]),
        generation_meta=meta,
    )
    return require_valid(rec)


def ingest_narrator_captions(
    path: str | os.PathLike, strict: bool = False
) -> tuple[list[NarrationRecord], CaptionIngestReport]:
    report = CaptionIngestReport(str(path))
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                out.append(caption_from_dict(json.loads(raw)))
            except (ValidationError, KeyError, TypeError, ValueError) as exc:
                if strict:
                    raise ValidationError(
                        getattr(exc, "violations", [Violation("", str(exc))]),
                        f"{path}:{lineno}",
                    ) from exc
                report.rejected += 1
                report.errors.append(f"{path}:{lineno}: {exc}")
                continue
            report.ingested += 1
    return out, report


# ---------------------------------------------------------------------------
# Merge
# ---------------------------------------------------------------------------

MERGE_POLICIES = ("both", "prefer_rephrased", "prefer_generated")

ClipKey = tuple[str, float]


def clip_key(video_id: str, start_s: float) -> ClipKey:
    return (video_id, round(start_s, 6))


def caption_clip_key(n: NarrationRecord) -> ClipKey:
    return clip_key(n.video_id, float(n.generation_meta["clip_start_s"]))


def merge_narrations(
    rephrased: Mapping[ClipKey, Sequence[NarrationRecord]],
    generated: Mapping[ClipKey, Sequence[NarrationRecord]],
    policy: str = "both",
) -> dict[ClipKey, list[NarrationRecord]]:
    """Combine both narration streams per clip.

    ``both`` emits everything; the ``prefer_*`` policies emit only the
    preferred stream where a clip has it, otherwise the other one.
    """
    if policy not in MERGE_POLICIES:
        raise ValueError(f"unknown merge policy {policy!r}")
    out: dict[ClipKey, list[NarrationRecord]] = {}
    for key in sorted(set(rephrased) | set(generated)):
        r = list(rephrased.get(key, ()))
        g = list(generated.get(key, ()))
        if policy == "both":
            chosen = r + g
        elif policy == "prefer_rephrased":
            chosen = r or g
        else:
            chosen = g or r
        if chosen:
            out[key] = chosen
    return out


def group_by_clip(
    pairs: Iterable[tuple[ClipRecord, NarrationRecord]],
) -> dict[ClipKey, list[NarrationRecord]]:
    out: dict[ClipKey, list[NarrationRecord]] = defaultdict(list)
    for clip, n in pairs:
        out[clip_key(clip.video_id, clip.start_s)].append(n)
    return dict(out)
