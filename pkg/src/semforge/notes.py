"""In-situ user notes: persisted, searchable, filterable.

A note binds an observation to an operation and attribute, optionally to a
specific row, with a color tag. Notes outlive pipeline edits and runs; the
store is an append-friendly JSONL file plus an in-memory index.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any

TAGS = ("red", "green", "yellow", "blue")


class NoteValidationError(ValueError):
    pass


@dataclass
class Note:
    id: str
    operation_id: str
    attribute: str
    comment: str
    tag: str | None = None
    row_ref: str | None = None
    created_at: float = 0.0

    def to_obj(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "operation_id": self.operation_id,
            "attribute": self.attribute,
            "comment": self.comment,
            "tag": self.tag,
            "row_ref": self.row_ref,
            "created_at": self.created_at,
        }

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "Note":
        return cls(obj["id"], obj["operation_id"], obj["attribute"], obj["comment"],
                   obj.get("tag"), obj.get("row_ref"), obj.get("created_at", 0.0))


class NoteStore:
    """Single-writer append log with concurrent readers."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._notes: list[Note] = []
        self._seq = 0
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._notes.append(Note.from_obj(json.loads(line)))
            self._seq = len(self._notes)

    def add(self, operation_id: str, attribute: str, comment: str,
            tag: str | None = None, row_ref: str | None = None,
            note_id: str | None = None, created_at: float | None = None) -> Note:
        if not comment or not comment.strip():
            raise NoteValidationError("comment must be nonempty")
        if tag is not None and tag not in TAGS:
            raise NoteValidationError(f"tag must be one of {TAGS}")
        with self._lock:
            self._seq += 1
            note = Note(
                id=note_id or uuid.uuid4().hex,
                operation_id=operation_id,
                attribute=attribute,
                comment=comment,
                tag=tag,
                row_ref=row_ref,
                created_at=created_at if created_at is not None else time.time(),
            )
            self._notes.append(note)
            if self.path:
                with self.path.open("a", encoding="utf-8") as f:
                    f.write(json.dumps(note.to_obj(), ensure_ascii=False) + "\n")
        return note

    def get(self, note_id: str) -> Note | None:
        with self._lock:
            for n in self._notes:
                if n.id == note_id:
                    return n
        return None

    def delete(self, note_id: str) -> bool:
        with self._lock:
            before = len(self._notes)
            self._notes = [n for n in self._notes if n.id != note_id]
            if len(self._notes) == before:
                return False
            if self.path:
                tmp = self.path.with_suffix(".tmp")
                with tmp.open("w", encoding="utf-8") as f:
                    for n in self._notes:
                        f.write(json.dumps(n.to_obj(), ensure_ascii=False) + "\n")
                tmp.replace(self.path)
        return True

    def query(self, operation_id: str | None = None, attribute: str | None = None,
              tag: str | None = None, text_query: str | None = None) -> list[Note]:
        """Conjunctive filters; text search is a case-insensitive substring
        over the comment; newest first."""
        with self._lock:
            snapshot = list(self._notes)
        out = []
        for n in snapshot:
            if operation_id is not None and n.operation_id != operation_id:
                continue
            if attribute is not None and n.attribute != attribute:
                continue
            if tag is not None and n.tag != tag:
                continue
            if text_query is not None and text_query.lower() not in n.comment.lower():
                continue
            out.append(n)
        # stable: equal timestamps keep reverse insertion order
        indexed = list(enumerate(out))
        indexed.sort(key=lambda pair: (-pair[1].created_at, -pair[0]))
        return [n for _, n in indexed]

    def all(self) -> list[Note]:
        return self.query()
