"""Manifest construction, concatenation, on-disk format, and batch sampling."""

from __future__ import annotations

import json
import os
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    SCHEMA_VERSION,
    DatasetManifest,
    ManifestEntry,
    ValidationError,
    Violation,
    compute_stats,
    dumps,
    parse,
    validate,
)

VIEWS = ("original", "cropped")
CROP_PROBABILITY = 0.5


class ManifestIntegrityError(ValidationError):
    pass


class DomainCollisionError(ValueError):
    pass


def make_manifest(
    entries: Iterable[ManifestEntry], created_from: Sequence[str] = ()
) -> DatasetManifest:
    ordered = tuple(sorted(entries, key=ManifestEntry.sort_key))
    return DatasetManifest(
        schema_version=SCHEMA_VERSION,
        created_from=tuple(created_from),
        entries=ordered,
        stats=compute_stats(ordered),
    )


def concat_datasets(*manifests: DatasetManifest) -> DatasetManifest:
    """Union of manifests with domain tags preserved.

    A video id may appear under only one domain; ego and curated exocentric
    corpora must use disjoint (namespaced) ids.
    """
    domain_of: dict[str, str] = {}
    entries: list[ManifestEntry] = []
    sources: list[str] = []
    for m in manifests:
        for e in m.entries:
            vid = e.clip.video_id
            prev = domain_of.setdefault(vid, e.domain)
            if prev != e.domain:
                raise DomainCollisionError(
                    f"video_id {vid!r} appears in both {prev} and {e.domain} data"
                )
        entries.extend(m.entries)
        sources.extend(s for s in m.created_from if s not in sources)
    return make_manifest(entries, sources)


# ---------------------------------------------------------------------------
# On-disk format: <name>.jsonl entries + <name>.meta.json header
# ---------------------------------------------------------------------------


def meta_path(path: str | os.PathLike) -> Path:
    """``combined.jsonl`` -> ``combined.meta.json``."""
    p = Path(path)
    stem = p.name[: -len(".jsonl")] if p.name.endswith(".jsonl") else p.name
    return p.with_name(stem + ".meta.json")


def manifest_header(m: DatasetManifest) -> dict:
    return {
        "schema_version": m.schema_version,
        "created_from": list(m.created_from),
        "entry_count": len(m.entries),
        "stats": compute_stats(m.entries),
    }


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> Path:
    """Write entries and header; identical manifests give identical bytes."""
    result = validate(manifest)
    if not result.ok:
        raise ValidationError(result.violations, "refusing to write invalid manifest")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    body = "".join(dumps(e) + "\n" for e in manifest.entries)
    p.write_bytes(body.encode("utf-8"))
    header = json.dumps(manifest_header(manifest), indent=2, ensure_ascii=False) + "\n"
    meta_path(p).write_bytes(header.encode("utf-8"))
    return p


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load and fully validate a manifest; header/entry disagreement raises
    :class:`ManifestIntegrityError`."""
    p = Path(path)
    header = json.loads(meta_path(p).read_text(encoding="utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ManifestIntegrityError(
            [Violation("schema_version", f"expected {SCHEMA_VERSION!r}")], str(p)
        )
    entries = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                entries.append(parse(ManifestEntry, line, context=f"{p}:{lineno}"))
    manifest = DatasetManifest(
        schema_version=header["schema_version"],
        created_from=tuple(header.get("created_from", ())),
        entries=tuple(entries),
        stats=header.get("stats", {}),
    )
    problems = list(validate(manifest).violations)
    if header.get("entry_count") != len(entries):
        problems.append(Violation("entry_count", "header entry_count matches entries"))
    if problems:
        raise ManifestIntegrityError(problems, str(p))
    return manifest


# ---------------------------------------------------------------------------
# Batch sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSample:
    manifest_entry_id: str
    entry_index: int
    view: str
    narration: str
    domain: str

    def as_dict(self) -> dict:
        return {
            "manifest_entry_id": self.manifest_entry_id,
            "entry_index": self.entry_index,
            "view": self.view,
            "narration": self.narration,
            "domain": self.domain,
        }


def _choose_view(entry: ManifestEntry, rng: np.random.Generator) -> str:
    # a draw is consumed for every entry so the stream does not depend on
    # which entries carry crops
    u = rng.random()
    if entry.crop_region is None:
        return "original"
    return "cropped" if u < CROP_PROBABILITY else "original"


def _sample(entries: Sequence[ManifestEntry], idx: np.ndarray, rng) -> list[TrainingSample]:
    out = []
    for i in idx:
        e = entries[int(i)]
        out.append(
            TrainingSample(e.entry_id, int(i), _choose_view(e, rng), e.narration.text, e.domain)
        )
    return out


def _domain_indices(
    manifest: DatasetManifest, batch_size: int, ego_fraction: float, rng: np.random.Generator
) -> np.ndarray:
    ego = np.array([i for i, e in enumerate(manifest.entries) if e.domain == "ego"], dtype=np.int64)
    exo = np.array([i for i, e in enumerate(manifest.entries) if e.domain != "ego"], dtype=np.int64)
    n_ego = min(len(ego), int(round(ego_fraction * batch_size)))
    n_exo = batch_size - n_ego
    if n_exo > len(exo):
        raise ValueError("not enough exo_ego entries for the requested domain ratio")
    picked = np.concatenate(
        [rng.choice(ego, n_ego, replace=False), rng.choice(exo, n_exo, replace=False)]
    )
    return picked[rng.permutation(batch_size)]


def sample_batch(
    manifest: DatasetManifest,
    batch_size: int,
    rng_seed: int,
    ego_fraction: float | None = None,
) -> list[TrainingSample]:
    """Uniform sample without replacement plus a per-draw view choice.

    Entries with a crop region get the cropped view with probability 0.5.
    ``ego_fraction`` optionally fixes the share of ego entries per batch;
    by default the concatenated pool is sampled uniformly.
    """
    n = len(manifest.entries)
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if ego_fraction is None:
        idx = rng.choice(n, batch_size, replace=False)
    else:
        idx = _domain_indices(manifest, batch_size, ego_fraction, rng)
    return _sample(manifest.entries, idx, rng)


def iter_batches(
    manifest: DatasetManifest, batch_size: int, seed: int, steps: int
) -> Iterator[list[TrainingSample]]:
    """Epoch-based batches: each epoch is a fresh permutation derived from
    ``(seed, epoch)``; a step never repeats an entry. The trailing partial
    batch of an epoch is dropped."""
    n = len(manifest.entries)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}]")
    per_epoch = n // batch_size
    for step in range(steps):
        epoch, offset = divmod(step, per_epoch)
        order = np.random.default_rng([seed, epoch]).permutation(n)
        idx = order[offset * batch_size : (offset + 1) * batch_size]
        view_rng = np.random.default_rng([seed, epoch, offset, 1])
        yield _sample(manifest.entries, idx, view_rng)
