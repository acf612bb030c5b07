"""Content-addressed on-disk cache of operator output tables.

Layout: `<root>/<digest-hex>/rows.jsonl.gz` plus `<root>/index`, a JSON
file mapping digest -> {bytes, last_access}. Eviction is LRU on a logical
clock so traces are deterministic. Concurrent readers are fine; writers
land via atomic rename, one writer per key.
"""

from __future__ import annotations

import gzip
import json
import os
import threading
from pathlib import Path

from .model import Document

ROWS_FILENAME = "rows.jsonl.gz"
INDEX_FILENAME = "index"


class DiskCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.reads = 0
        self.hits = 0
        self.writes = 0
        self._index: dict[str, dict[str, int]] = {}
        self._clock = 0
        self._load_index()

    def _index_path(self) -> Path:
        return self.root / INDEX_FILENAME

    def _load_index(self) -> None:
        try:
            data = json.loads(self._index_path().read_text(encoding="utf-8"))
            self._index = data.get("entries", {})
            self._clock = data.get("clock", 0)
        except (FileNotFoundError, json.JSONDecodeError):
            self._index = {}
            self._clock = 0

    def _save_index(self) -> None:
        tmp = self._index_path().with_suffix(".tmp")
        tmp.write_text(json.dumps({"clock": self._clock, "entries": self._index}),
                       encoding="utf-8")
        os.replace(tmp, self._index_path())

    def _touch(self, digest: str) -> None:
        self._clock += 1
        self._index[digest]["last_access"] = self._clock

    def get(self, digest: str) -> list[Document] | None:
        with self._lock:
            self.reads += 1
            path = self.root / digest / ROWS_FILENAME
            if digest not in self._index or not path.exists():
                return None
            self.hits += 1
            self._touch(digest)
            self._save_index()
        with gzip.open(path, "rt", encoding="utf-8") as f:
            docs = []
            for line in f:
                obj = json.loads(line)
                docs.append(Document(obj["id"], obj["attrs"]))
            return docs

    def put(self, digest: str, docs: list[Document]) -> None:
        entry_dir = self.root / digest
        entry_dir.mkdir(parents=True, exist_ok=True)
        tmp = entry_dir / (ROWS_FILENAME + ".tmp")
        with gzip.open(tmp, "wt", encoding="utf-8") as f:
            for doc in docs:
                f.write(json.dumps({"id": doc.id, "attrs": doc.attrs},
                                   ensure_ascii=False))
                f.write("\n")
        os.replace(tmp, entry_dir / ROWS_FILENAME)
        size = (entry_dir / ROWS_FILENAME).stat().st_size
        with self._lock:
            self.writes += 1
            self._index[digest] = {"bytes": size, "last_access": 0}
            self._touch(digest)
            self._save_index()

    def total_bytes(self) -> int:
        with self._lock:
            return sum(e["bytes"] for e in self._index.values())

    def gc(self, max_bytes: int, protected: set[str] | None = None) -> int:
        """Evict least-recently-used entries until under budget. Entries in
        `protected` (currently-running runs) are never evicted."""
        protected = protected or set()
        evicted = 0
        with self._lock:
            total = sum(e["bytes"] for e in self._index.values())
            victims = sorted(self._index.items(), key=lambda kv: kv[1]["last_access"])
            for digest, entry in victims:
                if total <= max_bytes:
                    break
                if digest in protected:
                    continue
                total -= entry["bytes"]
                del self._index[digest]
                evicted += 1
                rows = self.root / digest / ROWS_FILENAME
                try:
                    rows.unlink()
                    (self.root / digest).rmdir()
                except OSError:
                    pass
            self._save_index()
        return evicted

    def reset_counters(self) -> None:
        with self._lock:
            self.reads = 0
            self.hits = 0
            self.writes = 0
