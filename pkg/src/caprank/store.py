"""Durable store of images, candidate captions, and human preference rankings.

Persistence is an append-only log of canonical single-line JSON records:
a header line carrying the schema version and store id, followed by one
line per image, caption, or preference record in append order. The log is
diffable, replayable, and mergeable across labelers; replaying it always
reconstructs the identical in-memory state.

A ranking is an ordered list of rank groups. Group 0 is best; captions in
the same group are tied and a record with a single group (all tied) is
accepted but flagged degenerate, which excludes it from pair generation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional

from .errors import (
    CaptionLimitExceeded,
    CorruptLog,
    DuplicateCaptionId,
    DuplicateImageId,
    DuplicateRecordId,
    InvalidField,
    RankingNotPartition,
    SchemaVersionMismatch,
    UnknownCaption,
    UnknownImage,
)
from .ioutil import canonical_json, check_identifier

SCHEMA_VERSION = 1
MAX_CAPTIONS_PER_IMAGE = 16

IMAGE_SOURCE_TAGS = ("dataset-native", "external")
CAPTION_SOURCES = ("dataset-sampled", "model-rewritten", "human-rewritten")


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    uri: str
    source_tag: str = "dataset-native"

    def __post_init__(self):
        check_identifier(self.image_id, "image_id")
        if not self.uri:
            raise InvalidField("uri must be non-empty")
        if self.source_tag not in IMAGE_SOURCE_TAGS:
            raise InvalidField(f"source_tag must be one of {IMAGE_SOURCE_TAGS}")


@dataclass(frozen=True)
class CaptionCandidate:
    caption_id: str
    image_id: str
    text: str
    source: str = "dataset-sampled"

    def __post_init__(self):
        check_identifier(self.caption_id, "caption_id")
        check_identifier(self.image_id, "image_id")
        if not isinstance(self.text, str) or not self.text.strip():
            raise InvalidField("caption text must be non-empty after whitespace trim")
        if self.source not in CAPTION_SOURCES:
            raise InvalidField(f"caption source must be one of {CAPTION_SOURCES}")


@dataclass(frozen=True)
class CriteriaAnnotation:
    """Per-caption checklist: a correctness flag plus three 0-2 grades."""

    accuracy: bool
    completeness: int
    vividness: int
    context: int

    def __post_init__(self):
        if not isinstance(self.accuracy, bool):
            raise InvalidField("accuracy must be a boolean")
        for grade_name in ("completeness", "vividness", "context"):
            grade = getattr(self, grade_name)
            if not isinstance(grade, int) or isinstance(grade, bool) or not 0 <= grade <= 2:
                raise InvalidField(f"{grade_name} grade must be an integer in 0..2")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "vividness": self.vividness,
            "context": self.context,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CriteriaAnnotation":
        try:
            return cls(
                accuracy=d["accuracy"],
                completeness=d["completeness"],
                vividness=d["vividness"],
                context=d["context"],
            )
        except KeyError as e:
            raise InvalidField(f"criteria annotation missing field {e}") from None


def _normalize_ranking(ranking: Iterable[Iterable[str]]) -> tuple[tuple[str, ...], ...]:
    groups = []
    for group in ranking:
        ids = sorted(group)
        if not ids:
            raise InvalidField("rank groups must be non-empty")
        for cid in ids:
            check_identifier(cid, "caption_id")
        groups.append(tuple(ids))
    if not groups:
        raise InvalidField("ranking must contain at least one group")
    return tuple(groups)


@dataclass(frozen=True)
class PreferenceRecord:
    """One labeler's ranking of the captions they annotated for one image."""

    record_id: str
    image_id: str
    labeler_id: str
    ranking: tuple[tuple[str, ...], ...]
    criteria: Mapping[str, CriteriaAnnotation] = field(default_factory=dict)
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        check_identifier(self.record_id, "record_id")
        check_identifier(self.image_id, "image_id")
        check_identifier(self.labeler_id, "labeler_id")
        object.__setattr__(self, "ranking", _normalize_ranking(self.ranking))
        object.__setattr__(self, "criteria", dict(self.criteria))
        ts = self.timestamp
        if ts.tzinfo is None:
            raise InvalidField("timestamp must be timezone-aware (UTC)")
        object.__setattr__(self, "timestamp", ts.astimezone(timezone.utc))

    @property
    def ranked_caption_ids(self) -> set[str]:
        return {cid for group in self.ranking for cid in group}

    @property
    def degenerate(self) -> bool:
        """True when every caption is tied; such records yield no pairs."""
        return len(self.ranking) < 2

    def rank_of(self, caption_id: str) -> int:
        for index, group in enumerate(self.ranking):
            if caption_id in group:
                return index
        raise KeyError(caption_id)


class PreferenceDataset:
    """In-memory store with an optional bound append-only log file.

    Appends are validated against referential integrity before any state
    (memory or log) is touched; a rejected append leaves the store as it
    was. Writes go through this single object, so appends are serialized;
    the in-memory maps are safe for concurrent readers between appends.
    """

    def __init__(self, store_id: str = "store"):
        check_identifier(store_id, "store_id")
        self.store_id = store_id
        self.images: dict[str, ImageEntry] = {}
        self.captions: dict[str, dict[str, CaptionCandidate]] = {}
        self.records: list[PreferenceRecord] = []
        self._record_ids: set[str] = set()
        self._annotated: set[tuple[str, str]] = set()
        self._log = None

    # -- construction / persistence ------------------------------------

    @classmethod
    def create(cls, path, store_id: str = "store") -> "PreferenceDataset":
        """Create a new log file at ``path`` and return the bound store."""
        store = cls(store_id)
        if os.path.exists(path):
            raise InvalidField(f"refusing to overwrite existing store log {path}")
        f = open(path, "w", encoding="utf-8")
        f.write(store._header_line() + "\n")
        f.flush()
        store._log = f
        return store

    def _header_line(self) -> str:
        return canonical_json(
            {"kind": "header", "schema_version": SCHEMA_VERSION, "store_id": self.store_id}
        )

    def close(self):
        if self._log is not None:
            self._log.flush()
            os.fsync(self._log.fileno())
            self._log.close()
            self._log = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _append_line(self, line: str):
        if self._log is not None:
            self._log.write(line + "\n")
            self._log.flush()

    # -- mutation --------------------------------------------------------

    def add_image(self, image: ImageEntry) -> ImageEntry:
        if image.image_id in self.images:
            raise DuplicateImageId(image.image_id)
        self.images[image.image_id] = image
        self.captions.setdefault(image.image_id, {})
        self._append_line(_image_line(image))
        return image

    def add_caption(self, caption: CaptionCandidate) -> CaptionCandidate:
        if caption.image_id not in self.images:
            raise UnknownImage(caption.image_id)
        existing = self.captions[caption.image_id]
        if caption.caption_id in existing:
            raise DuplicateCaptionId(f"{caption.image_id}/{caption.caption_id}")
        if len(existing) >= MAX_CAPTIONS_PER_IMAGE:
            raise CaptionLimitExceeded(
                f"image {caption.image_id} already has {MAX_CAPTIONS_PER_IMAGE} captions"
            )
        existing[caption.caption_id] = caption
        self._append_line(_caption_line(caption))
        return caption

    def validate_record(self, rec: PreferenceRecord):
        """Raise without mutating if ``rec`` cannot be appended."""
        if rec.record_id in self._record_ids:
            raise DuplicateRecordId(rec.record_id)
        if rec.image_id not in self.images:
            raise UnknownImage(rec.image_id)
        known = self.captions[rec.image_id]
        seen: set[str] = set()
        for group in rec.ranking:
            for cid in group:
                if cid not in known:
                    raise UnknownCaption(f"{rec.image_id}/{cid}")
                if cid in seen:
                    raise RankingNotPartition(f"caption {cid!r} appears in more than one group")
                seen.add(cid)
        for cid in rec.criteria:
            if cid not in known:
                raise UnknownCaption(f"{rec.image_id}/{cid}")
            if cid not in seen:
                raise RankingNotPartition(
                    f"caption {cid!r} has a criteria annotation but is missing from the ranking"
                )

    def append_record(self, rec: PreferenceRecord) -> PreferenceRecord:
        self.validate_record(rec)
        self.records.append(rec)
        self._record_ids.add(rec.record_id)
        self._annotated.add((rec.image_id, rec.labeler_id))
        self._append_line(_record_line(rec))
        return rec

    # -- queries ---------------------------------------------------------

    def captions_of(self, image_id: str) -> dict[str, CaptionCandidate]:
        if image_id not in self.images:
            raise UnknownImage(image_id)
        return self.captions[image_id]

    def has_record(self, image_id: str, labeler_id: str) -> bool:
        return (image_id, labeler_id) in self._annotated

    def records_for_image(self, image_id: str) -> list[PreferenceRecord]:
        return [r for r in self.records if r.image_id == image_id]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PreferenceDataset):
            return NotImplemented
        return (
            self.store_id == other.store_id
            and self.images == other.images
            and self.captions == other.captions
            and self.records == other.records
        )


# ---- line encoding ---------------------------------------------------------

def _image_line(image: ImageEntry) -> str:
    return canonical_json(
        {
            "kind": "image",
            "image_id": image.image_id,
            "uri": image.uri,
            "source_tag": image.source_tag,
        }
    )


def _caption_line(caption: CaptionCandidate) -> str:
    return canonical_json(
        {
            "kind": "caption",
            "caption_id": caption.caption_id,
            "image_id": caption.image_id,
            "text": caption.text,
            "source": caption.source,
        }
    )


def _record_line(rec: PreferenceRecord) -> str:
    return canonical_json(
        {
            "kind": "record",
            "record_id": rec.record_id,
            "image_id": rec.image_id,
            "labeler_id": rec.labeler_id,
            "ranking": [list(group) for group in rec.ranking],
            "criteria": {cid: ann.to_dict() for cid, ann in sorted(rec.criteria.items())},
            "timestamp": rec.timestamp.isoformat(),
        }
    )


def _parse_line(payload: dict, store: PreferenceDataset):
    kind = payload.get("kind")
    if kind == "image":
        store.add_image(
            ImageEntry(
                image_id=payload["image_id"],
                uri=payload["uri"],
                source_tag=payload.get("source_tag", "dataset-native"),
            )
        )
    elif kind == "caption":
        store.add_caption(
            CaptionCandidate(
                caption_id=payload["caption_id"],
                image_id=payload["image_id"],
                text=payload["text"],
                source=payload.get("source", "dataset-sampled"),
            )
        )
    elif kind == "record":
        store.append_record(
            PreferenceRecord(
                record_id=payload["record_id"],
                image_id=payload["image_id"],
                labeler_id=payload["labeler_id"],
                ranking=[tuple(g) for g in payload["ranking"]],
                criteria={
                    cid: CriteriaAnnotation.from_dict(d)
                    for cid, d in payload.get("criteria", {}).items()
                },
                timestamp=datetime.fromisoformat(payload["timestamp"]),
            )
        )
    else:
        raise InvalidField(f"unknown log entry kind {kind!r}")


def load_store(path, log_appends: bool = False) -> PreferenceDataset:
    """Replay a record log into a store.

    With ``log_appends=True`` the returned store keeps the file open in
    append mode, so further mutations are durably logged to the same file.
    """
    import json

    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorruptLog(1, "empty log; header line missing")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CorruptLog(1, f"unparseable header: {e}") from None
    if header.get("kind") != "header":
        raise CorruptLog(1, "first line is not a header record")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"log declares schema {header.get('schema_version')!r}, "
            f"this build reads schema {SCHEMA_VERSION}"
        )

    store = PreferenceDataset(header.get("store_id", "store"))
    for line_number, line in enumerate(lines[1:], start=2):
        if not line:
            raise CorruptLog(line_number, "blank line inside log")
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorruptLog(line_number, f"unparseable entry: {e}") from None
        try:
            _parse_line(payload, store)
        except CorruptLog:
            raise
        except Exception as e:  # validation failures name the offending line
            raise CorruptLog(line_number, f"{type(e).__name__}: {e}") from None

    if log_appends:
        store._log = open(path, "a", encoding="utf-8")
    return store


def export_store(store: PreferenceDataset, path):
    """Write the canonical serialization of a store.

    Images and captions are emitted in sorted-id order and records in
    append order, so the bytes are a pure function of store contents and
    ``export_store`` followed by ``load_store`` is the identity.
    """
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(store._header_line() + "\n")
        for image_id in sorted(store.images):
            f.write(_image_line(store.images[image_id]) + "\n")
        for image_id in sorted(store.captions):
            for caption_id in sorted(store.captions[image_id]):
                f.write(_caption_line(store.captions[image_id][caption_id]) + "\n")
        for rec in store.records:
            f.write(_record_line(rec) + "\n")
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
