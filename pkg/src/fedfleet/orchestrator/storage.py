"""Append-only JSON-lines persistence.

Four files under the data directory: registry.jsonl, sessions.jsonl,
rounds.jsonl, fa_results.jsonl. One canonical-JSON object per line, flushed on
every append. Recovery is strict: any malformed line (including a truncated
final one) aborts with the file and line number rather than silently dropping
data.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from ..model_format import canonical_json

REGISTRY = "registry.jsonl"
SESSIONS = "sessions.jsonl"
ROUNDS = "rounds.jsonl"
FA_RESULTS = "fa_results.jsonl"

FILES = (REGISTRY, SESSIONS, ROUNDS, FA_RESULTS)


class StorageCorrupt(Exception):
    def __init__(self, file: str, line_no: int, reason: str):
        super().__init__(f"{file}:{line_no}: {reason}")
        self.file = file
        self.line_no = line_no
        self.reason = reason


class JsonlStore:
    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._locks = {name: threading.Lock() for name in FILES}

    def _path(self, name: str) -> Path:
        return self.data_dir / name

    def append(self, name: str, obj: dict) -> None:
        line = canonical_json(obj) + "\n"
        with self._locks[name]:
            with open(self._path(name), "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()

    def read_all(self, name: str) -> list[dict]:
        path = self._path(name)
        if not path.exists():
            return []
        entries = []
        with open(path, "rb") as fh:
            raw = fh.read()
        if not raw:
            return []
        # a file not ending in a newline has a truncated final line; the strict
        # parse below will reject it with its line number
        for line_no, line in enumerate(raw.split(b"\n")[:-1] if raw.endswith(b"\n") else raw.split(b"\n"), 1):
            try:
                obj = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise StorageCorrupt(name, line_no, f"unparseable line: {exc}") from exc
            if not isinstance(obj, dict):
                raise StorageCorrupt(name, line_no, "line is not a JSON object")
            entries.append(obj)
        return entries
