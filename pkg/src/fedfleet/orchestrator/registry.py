"""Versioned model registry.

Uploads are full canonical model documents. The registry assigns versions
(contiguous from 1 per model_id, whatever version field the upload carried)
and is idempotent on content: re-posting a document whose content already
exists for that model_id returns the existing version instead of minting a
new one. Content identity hashes the document with the version field
excluded.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

from ..model_format import canonical_json, from_document, validate_model

STATUS_ACTIVE = "Active"
STATUS_RETIRED = "Retired"


class InvalidModel(Exception):
    def __init__(self, violations):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


@dataclass
class RegistryEntry:
    model_id: str
    version: int
    document: dict
    uploaded_at: float
    status: str = STATUS_ACTIVE
    content_hash: str = ""

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "version": self.version,
            "document": self.document,
            "uploaded_at": self.uploaded_at,
            "status": self.status,
            "content_hash": self.content_hash,
        }

    @staticmethod
    def from_json(obj: dict) -> "RegistryEntry":
        return RegistryEntry(
            model_id=obj["model_id"],
            version=obj["version"],
            document=obj["document"],
            uploaded_at=obj["uploaded_at"],
            status=obj.get("status", STATUS_ACTIVE),
            content_hash=obj.get("content_hash", ""),
        )


def content_hash(document: dict) -> str:
    keyed = {k: v for k, v in document.items() if k != "version"}
    return hashlib.sha256(canonical_json(keyed).encode("utf-8")).hexdigest()


class ModelRegistry:
    def __init__(self, clock, on_new_entry=None):
        self._clock = clock
        self._on_new_entry = on_new_entry
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, int], RegistryEntry] = {}
        self._hashes: dict[tuple[str, str], int] = {}  # (model_id, hash) -> version

    def restore(self, entry: RegistryEntry) -> None:
        with self._lock:
            self._entries[(entry.model_id, entry.version)] = entry
            self._hashes[(entry.model_id, entry.content_hash)] = entry.version

    def register(self, document: dict) -> tuple[str, int]:
        model = from_document(document)
        # the registry owns version numbering; a fresh upload may carry any
        # version field, so validate everything else with version pinned to 1
        model.version = 1
        violations = validate_model(model)
        if violations:
            raise InvalidModel(violations)

        digest = content_hash(document)
        with self._lock:
            existing = self._hashes.get((model.model_id, digest))
            if existing is not None:
                return model.model_id, existing
            version = self.latest_version_locked(model.model_id) + 1
            stored = dict(document)
            stored["version"] = version
            entry = RegistryEntry(
                model_id=model.model_id,
                version=version,
                document=stored,
                uploaded_at=self._clock(),
                content_hash=digest,
            )
            self._entries[(model.model_id, version)] = entry
            self._hashes[(model.model_id, digest)] = version
        if self._on_new_entry:
            self._on_new_entry(entry)
        return model.model_id, version

    def latest_version_locked(self, model_id: str) -> int:
        versions = [v for (mid, v) in self._entries if mid == model_id]
        return max(versions, default=0)

    def get(self, model_id: str, version: int | None = None) -> RegistryEntry | None:
        with self._lock:
            if version is None:
                version = self.latest_version_locked(model_id)
            return self._entries.get((model_id, version))

    def list_entries(self) -> list[RegistryEntry]:
        with self._lock:
            return [self._entries[key] for key in sorted(self._entries)]
