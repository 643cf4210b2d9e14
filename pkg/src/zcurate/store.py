"""Record store: ingestion, persistence, and content-addressed media storage.

Layout under the data root (``ZCURATE_DATA_DIR`` or an explicit path):

    records.jsonl       append-only journal, one full record snapshot per line
    pool/<hh>/<hash>    media bytes stored under their SHA-256, sharded by the
                        first two hex characters

The journal is replayed on open; the last snapshot per id wins. Records are
returned as copies, so readers can hand them across threads freely; all
mutations go through the single store writer, which serializes on a lock.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .errors import StoreError

CAPTION_LEVELS = ("long", "medium", "short", "tags", "simulated_user", "difference")
PAIR_ROLES = ("input", "edit", "frame")
EMBEDDING_MODALITIES = ("image", "text")

# status -> statuses reachable in one update. raw -> dropped covers records
# that fail to decode during profiling.
STATUS_TRANSITIONS: dict[str, set[str]] = {
    "raw": {"profiled", "dropped"},
    "profiled": {"kept", "dropped"},
    "kept": {"sampled"},
    "dropped": set(),
    "sampled": set(),
}

ENV_DATA_DIR = "ZCURATE_DATA_DIR"


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class DataRecord:
    """One image(+text) item in the media pool."""

    id: str
    media_ref: str
    source: str = ""
    alt_text: str | None = None
    captions: dict[str, str] = field(default_factory=dict)
    tags: list[str] = field(default_factory=list)
    embeddings: dict[str, list[float]] = field(default_factory=dict)
    profile: dict[str, Any] | None = None
    pair_role: tuple[str, str] | None = None  # (group id, role)
    status: str = "raw"
    drop_reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "media_ref": self.media_ref,
            "source": self.source,
            "alt_text": self.alt_text,
            "captions": self.captions,
            "tags": self.tags,
            "embeddings": self.embeddings,
            "profile": self.profile,
            "pair_role": list(self.pair_role) if self.pair_role else None,
            "status": self.status,
            "drop_reason": self.drop_reason,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DataRecord":
        pair_role = d.get("pair_role")
        return cls(
            id=d["id"],
            media_ref=d["media_ref"],
            source=d.get("source", ""),
            alt_text=d.get("alt_text"),
            captions=dict(d.get("captions") or {}),
            tags=list(d.get("tags") or []),
            embeddings={k: list(v) for k, v in (d.get("embeddings") or {}).items()},
            profile=d.get("profile"),
            pair_role=tuple(pair_role) if pair_role else None,
            status=d.get("status", "raw"),
            drop_reason=d.get("drop_reason"),
        )

    def copy(self) -> "DataRecord":
        return DataRecord.from_dict(self.to_dict())


@dataclass
class IngestSummary:
    added: int = 0
    rejected: int = 0
    reject_reasons: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reject_reasons[reason] = self.reject_reasons.get(reason, 0) + 1


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


class RecordStore:
    """Single-writer record store backed by a JSONL journal and a media pool."""

    def __init__(self, data_dir: str | Path | None = None):
        root = data_dir or os.environ.get(ENV_DATA_DIR)
        if root is None:
            raise StoreError("no_data_dir", f"pass data_dir or set {ENV_DATA_DIR}")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.pool_dir = self.root / "pool"
        self.journal_path = self.root / "records.jsonl"
        self._records: dict[str, DataRecord] = {}
        self._lock = threading.RLock()
        self._embedding_dims: dict[str, int] = {}
        self._replay()

    # -- persistence -------------------------------------------------------

    def _replay(self) -> None:
        if not self.journal_path.exists():
            return
        with self.journal_path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = DataRecord.from_dict(json.loads(line))
                self._records[rec.id] = rec
                for modality, vec in rec.embeddings.items():
                    self._embedding_dims.setdefault(modality, len(vec))

    def _append(self, record: DataRecord) -> None:
        with self.journal_path.open("a", encoding="utf-8") as f:
            f.write(_dumps(record.to_dict()))
            f.write("\n")

    # -- media pool --------------------------------------------------------

    def media_path(self, media_id: str) -> Path:
        return self.pool_dir / media_id[:2] / media_id

    def put_media(self, data: bytes) -> str:
        """Store bytes under their content hash; idempotent for equal bytes."""
        if not data:
            raise StoreError("empty_media")
        media_id = content_hash(data)
        path = self.media_path(media_id)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return media_id

    def get_media(self, media_id: str) -> bytes:
        path = self.media_path(media_id)
        if not path.exists():
            raise StoreError("not_found", f"media {media_id}")
        return path.read_bytes()

    # -- records -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._records

    def ids(self) -> list[str]:
        return sorted(self._records)

    def records(self, status: str | None = None) -> Iterator[DataRecord]:
        for rid in self.ids():
            rec = self._records[rid]
            if status is None or rec.status == status:
                yield rec.copy()

    def get_record(self, record_id: str) -> DataRecord:
        rec = self._records.get(record_id)
        if rec is None:
            raise StoreError("not_found", f"record {record_id}")
        return rec.copy()

    def _validate_captions(self, captions: dict[str, str]) -> None:
        for level in captions:
            if level not in CAPTION_LEVELS:
                raise StoreError("caption_level", f"unknown caption level {level!r}")

    def _validate_embeddings(self, embeddings: dict[str, Any]) -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for modality, vec in embeddings.items():
            values = [float(x) for x in vec]
            known = self._embedding_dims.get(modality)
            if known is not None and len(values) != known:
                raise StoreError(
                    "dim_mismatch",
                    f"{modality} embedding has dim {len(values)}, expected {known}",
                )
            out[modality] = values
        return out

    def add_record(self, record: DataRecord) -> DataRecord:
        with self._lock:
            self._validate_captions(record.captions)
            record.embeddings = self._validate_embeddings(record.embeddings)
            for modality, vec in record.embeddings.items():
                self._embedding_dims.setdefault(modality, len(vec))
            self._records[record.id] = record.copy()
            self._append(record)
            return record.copy()

    def update_record(self, record_id: str, patch: dict[str, Any]) -> DataRecord:
        """Apply a field patch; status changes must follow the transition graph."""
        with self._lock:
            rec = self._records.get(record_id)
            if rec is None:
                raise StoreError("not_found", f"record {record_id}")
            rec = rec.copy()
            if "status" in patch:
                new = patch["status"]
                if new != rec.status:
                    if new not in STATUS_TRANSITIONS.get(rec.status, set()):
                        raise StoreError(
                            "bad_transition", f"{rec.status} -> {new} not allowed"
                        )
                    rec.status = new
                if new == "dropped":
                    rec.drop_reason = patch.get("drop_reason", rec.drop_reason)
            if "captions" in patch:
                self._validate_captions(patch["captions"])
                rec.captions.update(patch["captions"])
            if "tags" in patch:
                rec.tags = list(patch["tags"])
            if "embeddings" in patch:
                new_embs = self._validate_embeddings(patch["embeddings"])
                rec.embeddings.update(new_embs)
                for modality, vec in new_embs.items():
                    self._embedding_dims.setdefault(modality, len(vec))
            if "profile" in patch:
                rec.profile = patch["profile"]
            if "alt_text" in patch:
                rec.alt_text = patch["alt_text"]
            if "source" in patch:
                rec.source = patch["source"]
            if "pair_role" in patch:
                pr = patch["pair_role"]
                rec.pair_role = tuple(pr) if pr else None
            self._records[record_id] = rec
            self._append(rec)
            return rec.copy()

    def _merge_record(self, existing: DataRecord, incoming: dict[str, Any]) -> None:
        patch: dict[str, Any] = {}
        captions = incoming.get("captions") or {}
        if captions:
            patch["captions"] = captions
        tags = incoming.get("tags") or []
        if tags:
            merged = list(existing.tags)
            merged.extend(t for t in tags if t not in merged)
            patch["tags"] = merged
        embeddings = incoming.get("embeddings") or {}
        if embeddings:
            patch["embeddings"] = embeddings
        if existing.alt_text is None and incoming.get("alt_text") is not None:
            patch["alt_text"] = incoming["alt_text"]
        if not existing.source and incoming.get("source"):
            patch["source"] = incoming["source"]
        if existing.pair_role is None and incoming.get("pair_role"):
            patch["pair_role"] = incoming["pair_role"]
        if patch:
            self.update_record(existing.id, patch)

    # -- ingestion ---------------------------------------------------------

    def ingest_jsonl(self, path: str | Path) -> IngestSummary:
        """Ingest one JSONL file; each line carries media_ref or media_b64.

        Lines that merge into an existing record still count as added. Blank
        lines are skipped without counting.
        """
        path = Path(path)
        if not path.exists():
            raise StoreError("unreadable", f"no such file: {path}")
        base = path.parent
        summary = IngestSummary()
        with path.open("r", encoding="utf-8") as f:
            for raw in f:
                line = raw.strip()
                if not line:
                    continue
                self._ingest_line(line, base, summary)
        return summary

    def _ingest_line(self, line: str, base: Path, summary: IngestSummary) -> None:
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("line is not an object")
        except ValueError:
            summary.reject("parse")
            return

        try:
            data = self._load_media(obj, base)
        except StoreError as e:
            summary.reject(e.code)
            return

        try:
            media_id = self.put_media(data)
        except StoreError as e:
            summary.reject(e.code)
            return

        try:
            with self._lock:
                existing = self._records.get(media_id)
                if existing is not None:
                    self._merge_record(existing, obj)
                else:
                    record = DataRecord(
                        id=media_id,
                        media_ref=f"pool/{media_id[:2]}/{media_id}",
                        source=obj.get("source", ""),
                        alt_text=obj.get("alt_text"),
                        captions=dict(obj.get("captions") or {}),
                        tags=[str(t) for t in (obj.get("tags") or [])],
                        embeddings=dict(obj.get("embeddings") or {}),
                        pair_role=tuple(obj["pair_role"]) if obj.get("pair_role") else None,
                    )
                    self.add_record(record)
        except StoreError as e:
            summary.reject(e.code)
            return
        summary.added += 1

    def _load_media(self, obj: dict[str, Any], base: Path) -> bytes:
        if "media_b64" in obj:
            try:
                return base64.b64decode(obj["media_b64"], validate=True)
            except Exception:
                raise StoreError("parse", "invalid base64 media") from None
        if "media_ref" in obj:
            ref = Path(obj["media_ref"])
            path = ref if ref.is_absolute() else base / ref
            if not path.exists():
                raise StoreError("media_missing", str(path))
            return path.read_bytes()
        raise StoreError("media_missing", "line has neither media_ref nor media_b64")

    def media_for(self, record_id: str) -> bytes:
        rec = self.get_record(record_id)
        return (self.root / rec.media_ref).read_bytes()

    # -- export ------------------------------------------------------------

    def export_jsonl(self, path: str | Path) -> int:
        """Write all records back out in the ingest schema, sorted by id."""
        path = Path(path)
        n = 0
        with path.open("w", encoding="utf-8") as f:
            for rec in self.records():
                obj: dict[str, Any] = {"media_ref": rec.media_ref, "source": rec.source}
                if rec.alt_text is not None:
                    obj["alt_text"] = rec.alt_text
                if rec.captions:
                    obj["captions"] = rec.captions
                if rec.tags:
                    obj["tags"] = rec.tags
                if rec.embeddings:
                    obj["embeddings"] = rec.embeddings
                if rec.pair_role:
                    obj["pair_role"] = list(rec.pair_role)
                f.write(_dumps(obj))
                f.write("\n")
                n += 1
        return n
