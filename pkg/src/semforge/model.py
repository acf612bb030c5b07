"""Documents, datasets, attribute-kind inference, and corpus statistics.

A Document is an ordered key-value record: original keys first, keys added
by operators appended in execution order. Values are JSON-shaped (null,
bool, number, string, list, map) and round-trip losslessly through the
canonical serialization used for cache hashing.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

Value = Any  # null | bool | number | string | list[Value] | dict[str, Value]


class IngestError(ValueError):
    """Malformed dataset payload. Carries the offending row/line when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


def canonical_json(value: Value) -> str:
    """Deterministic JSON encoding: sorted keys, compact, shortest floats.

    Used everywhere a Value participates in a hash or an equality-by-bytes
    comparison (cache keys, group keys, dataset fingerprints). NaN/inf are
    rejected since they do not round-trip.
    """
    return json.dumps(value, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)


def canonical_bytes(value: Value) -> bytes:
    return canonical_json(value).encode("utf-8")


@dataclass
class Document:
    """One record flowing through the pipeline.

    `id` must be unique within a dataset and stable across runs; cache
    keying depends on it. `attrs` preserves insertion order.
    """

    id: str
    attrs: dict[str, Value] = field(default_factory=dict)

    def copy(self) -> "Document":
        return Document(self.id, dict(self.attrs))

    def to_json_obj(self) -> dict[str, Value]:
        obj: dict[str, Value] = {"id": self.id}
        obj.update(self.attrs)
        return obj

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_bytes(self.to_json_obj())).hexdigest()


@dataclass
class Dataset:
    id: str
    docs: list[Document]
    source_name: str = ""

    def attribute_names(self) -> list[str]:
        """Union of attribute names across docs, first-appearance order."""
        seen: dict[str, None] = {}
        for doc in self.docs:
            for k in doc.attrs:
                seen.setdefault(k)
        return list(seen)

    def fingerprint(self) -> str:
        """Hash of ordered document ids + per-doc content hashes."""
        h = hashlib.sha256()
        for doc in self.docs:
            h.update(doc.id.encode("utf-8"))
            h.update(b"\x00")
            h.update(doc.fingerprint().encode("ascii"))
            h.update(b"\x01")
        return h.hexdigest()


class AttributeKind(Enum):
    NUMERICAL = "numerical"
    BOOLEAN = "boolean"
    CATEGORICAL_STRING = "categorical_string"
    FREE_TEXT_MULTI_WORD = "free_text_multi_word"
    FREE_TEXT_SINGLE_WORD = "free_text_single_word"
    LIST_OF_VALUES = "list_of_values"
    OTHER = "other"


def derive_doc_id(payload: bytes, ordinal: int) -> str:
    """Stable id for ingested content: sha256(bytes)[:16] + "-" + ordinal.

    Stable across re-uploads of identical content, unique under duplicates
    thanks to the ordinal suffix.
    """
    return hashlib.sha256(payload).hexdigest()[:16] + "-" + str(ordinal)


def wrap_unstructured(text: str, key: str = "content", doc_id: str | None = None,
                      ordinal: int = 0) -> Document:
    """Wrap raw text as a single key-value document. Never alters the text."""
    if doc_id is None:
        doc_id = derive_doc_id(text.encode("utf-8"), ordinal)
    return Document(doc_id, {key: text})


def infer_attribute_kind(values: list[Value]) -> AttributeKind:
    """Classify one output column from its non-null values.

    All numbers -> numerical; all booleans -> boolean; all strings ->
    categorical when distinct/count < 0.5 (strict), otherwise multi-word
    vs single-word free text; all lists -> list-of-values; anything mixed
    or map-valued -> other. Deterministic and permutation-invariant.
    """
    nonnull = [v for v in values if v is not None]
    if not nonnull:
        return AttributeKind.OTHER
    # bool is a subclass of int in Python; check it before numbers.
    if all(isinstance(v, bool) for v in nonnull):
        return AttributeKind.BOOLEAN
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in nonnull):
        return AttributeKind.NUMERICAL
    if all(isinstance(v, str) for v in nonnull):
        if len(set(nonnull)) / len(nonnull) < 0.5:
            return AttributeKind.CATEGORICAL_STRING
        if any(len(v.split()) > 1 for v in nonnull):
            return AttributeKind.FREE_TEXT_MULTI_WORD
        return AttributeKind.FREE_TEXT_SINGLE_WORD
    if all(isinstance(v, list) for v in nonnull):
        return AttributeKind.LIST_OF_VALUES
    return AttributeKind.OTHER


def word_count(text: str) -> int:
    """Unicode-whitespace token count. No stemming, no normalization."""
    return len(text.split())


def dataset_stats(d: Dataset) -> dict[str, Any]:
    """Corpus overview: doc count, attribute list, word-count distributions.

    Word counts cover string-valued attributes only (whitespace tokens per
    document); each attribute also gets summary min/max/mean for display.
    """
    attrs = d.attribute_names()
    word_counts: dict[str, list[int]] = {}
    for name in attrs:
        counts = [word_count(doc.attrs[name]) for doc in d.docs
                  if isinstance(doc.attrs.get(name), str)]
        if counts:
            word_counts[name] = counts
    summary = {
        name: {
            "count": len(counts),
            "min": min(counts),
            "max": max(counts),
            "mean": sum(counts) / len(counts),
        }
        for name, counts in word_counts.items()
    }
    return {
        "doc_count": len(d.docs),
        "attributes": attrs,
        "word_counts": word_counts,
        "word_count_summary": summary,
    }


def _doc_from_obj(obj: Any, ordinal: int, line: int | None = None) -> Document:
    if not isinstance(obj, dict):
        raise IngestError(f"row {ordinal}: expected a JSON object, got {type(obj).__name__}", line)
    _check_value(obj, ordinal, line)
    raw_id = obj.get("id")
    if raw_id is not None and not isinstance(raw_id, str):
        raw_id = canonical_json(raw_id)
    attrs = {k: v for k, v in obj.items() if k != "id"}
    if not all(isinstance(k, str) and k for k in attrs):
        raise IngestError(f"row {ordinal}: attribute names must be nonempty strings", line)
    if raw_id is None:
        raw_id = derive_doc_id(canonical_bytes(obj), ordinal)
    return Document(raw_id, attrs)


def _check_value(v: Any, ordinal: int, line: int | None) -> None:
    if v is None or isinstance(v, (bool, int, str)):
        return
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            raise IngestError(f"row {ordinal}: non-finite number", line)
        return
    if isinstance(v, list):
        for item in v:
            _check_value(item, ordinal, line)
        return
    if isinstance(v, dict):
        for k, item in v.items():
            if not isinstance(k, str):
                raise IngestError(f"row {ordinal}: map keys must be strings", line)
            _check_value(item, ordinal, line)
        return
    raise IngestError(f"row {ordinal}: unsupported value type {type(v).__name__}", line)


def dataset_from_json_array(text: str, dataset_id: str, source_name: str = "") -> Dataset:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise IngestError(f"invalid JSON: {e}", e.lineno) from e
    if not isinstance(data, list):
        raise IngestError("expected a JSON array of objects")
    docs = [_doc_from_obj(obj, i) for i, obj in enumerate(data)]
    _check_unique_ids(docs)
    return Dataset(dataset_id, docs, source_name)


def dataset_from_jsonl(text: str, dataset_id: str, source_name: str = "") -> Dataset:
    docs = []
    ordinal = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise IngestError(f"line {lineno}: invalid JSON: {e}", lineno) from e
        docs.append(_doc_from_obj(obj, ordinal, lineno))
        ordinal += 1
    _check_unique_ids(docs)
    return Dataset(dataset_id, docs, source_name)


def dataset_from_texts(texts: list[str], dataset_id: str, source_name: str = "",
                       key: str = "content") -> Dataset:
    """One plain-text document per entry, ingestion order preserved."""
    docs = [wrap_unstructured(t, key=key, ordinal=i) for i, t in enumerate(texts)]
    _check_unique_ids(docs)
    return Dataset(dataset_id, docs, source_name)


def _check_unique_ids(docs: list[Document]) -> None:
    seen: set[str] = set()
    for doc in docs:
        if doc.id in seen:
            raise IngestError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)


def load_dataset(path: str | Path, dataset_id: str | None = None) -> Dataset:
    """Load a dataset file: .json array, .jsonl, or plain text (one doc).

    A directory loads every file inside as one plain-text document each,
    in sorted filename order.
    """
    p = Path(path)
    if dataset_id is None:
        dataset_id = p.stem
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.is_file())
        return dataset_from_texts([f.read_text(encoding="utf-8") for f in files],
                                  dataset_id, source_name=str(p))
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".jsonl":
        return dataset_from_jsonl(text, dataset_id, source_name=str(p))
    if p.suffix == ".json":
        return dataset_from_json_array(text, dataset_id, source_name=str(p))
    return dataset_from_texts([text], dataset_id, source_name=str(p))
