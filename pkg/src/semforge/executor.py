"""Pipeline execution: sampling, bounded parallelism, incremental caching,
streamed progress events.

Each enabled op's outputs are cached under a digest covering the dataset
fingerprint, the canonical bytes of the enabled-op prefix (models
resolved), the op's position, and the sample descriptor — so editing an op
invalidates it and everything downstream, nothing upstream.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .cache import DiskCache
from .gateway import Gateway, ModelProfile
from .model import Dataset, Document
from .operators import OpContext, OpError, run_operation
from .spec import PipelineSpec, op_to_obj


class RunAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleSpec:
    limit: int
    mode: str = "first_n"  # first_n | seeded_random
    seed: int = 0

    def descriptor(self) -> dict[str, Any]:
        d: dict[str, Any] = {"limit": self.limit, "mode": self.mode}
        if self.mode == "seeded_random":
            d["seed"] = self.seed
        return d


@dataclass(frozen=True)
class RunRequest:
    pipeline_id: str
    sample: SampleSpec | None = None
    fresh: bool = False


@dataclass
class ProgressEvent:
    run_id: str
    kind: str  # op_started | doc_done | op_done | op_cached | error | run_done
    #            (+ judge_verdict | optimize_log | optimize_done on the stream)
    op_name: str | None = None
    done: int = 0
    total: int = 0
    timestamp: float = 0.0
    payload: dict[str, Any] | None = None
    seq: int = -1

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "seq": self.seq,
            "run_id": self.run_id,
            "kind": self.kind,
            "op_name": self.op_name,
            "done": self.done,
            "total": self.total,
            "timestamp": self.timestamp,
        }
        if self.payload is not None:
            obj["payload"] = self.payload
        return obj


@dataclass
class OpStats:
    name: str
    input_count: int
    output_count: int
    cached: bool
    error_count: int = 0

    @property
    def selectivity(self) -> float:
        if self.input_count == 0:
            return 0.0
        return self.output_count / self.input_count

    def selectivity_display(self) -> str:
        """e.g. "10 in → 47 out, 4.70×"."""
        return f"{self.input_count} in → {self.output_count} out, {self.selectivity:.2f}×"


@dataclass
class RunResult:
    run_id: str
    pipeline_id: str
    tables: dict[str, list[Document]]  # per op name, disabled ops pass through
    input_docs: list[Document]
    op_stats: dict[str, OpStats]
    events: list[ProgressEvent] = field(default_factory=list)

    def final_docs(self) -> list[Document]:
        last = self.input_docs
        for docs in self.tables.values():
            last = docs
        return last


def sample_docs(docs: list[Document], sample: SampleSpec | None) -> list[Document]:
    if sample is None:
        return list(docs)
    limit = min(sample.limit, len(docs))
    if sample.mode == "seeded_random":
        rnd = random.Random(sample.seed)
        picked = sorted(rnd.sample(range(len(docs)), limit))
        return [docs[i] for i in picked]
    return list(docs[:limit])


def op_digest(dataset_fingerprint: str, pipeline: PipelineSpec, enabled_index: int,
              sample: SampleSpec | None) -> str:
    """Cache key for the output table of enabled op `enabled_index`."""
    enabled = pipeline.enabled_ops()
    prefix = []
    for op in enabled[:enabled_index + 1]:
        obj = op_to_obj(op)
        obj["model"] = op.model or pipeline.default_model
        prefix.append(obj)
    payload = {
        "dataset": dataset_fingerprint,
        "ops": prefix,
        "index": enabled_index,
        "sample": sample.descriptor() if sample else None,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def plan_recompute(old: PipelineSpec, new: PipelineSpec,
                   sample: SampleSpec | None = None) -> int:
    """First enabled-op index whose cache key differs; everything before it
    stays cached, everything at/after recomputes. len(new) when nothing
    changed."""
    old_ops, new_ops = old.enabled_ops(), new.enabled_ops()
    n = len(new_ops)
    for i in range(n):
        if i >= len(old_ops):
            return i
        if op_digest("", old, i, sample) != op_digest("", new, i, sample):
            return i
    return n


class Engine:
    """Owns the gateway, model profiles, and the disk cache."""

    def __init__(self, gateway: Gateway, cache_dir: str | Path | None = None,
                 profiles: dict[str, ModelProfile] | None = None,
                 max_parallel: int = 10, recheck_cache: bool = False):
        if cache_dir is None:
            cache_dir = os.environ.get("SEMFORGE_CACHE_DIR", ".semforge-cache")
        self.gateway = gateway
        self.cache = DiskCache(cache_dir)
        self.profiles = dict(profiles or {})
        self.max_parallel = max_parallel
        self.recheck_cache = recheck_cache
        self._running_digests: set[str] = set()
        self._lock = threading.Lock()

    def profile_for(self, model_name: str) -> ModelProfile:
        if model_name in self.profiles:
            return self.profiles[model_name]
        return ModelProfile(model_name)

    def register_profile(self, profile: ModelProfile) -> None:
        self.profiles[profile.model_name] = profile

    def execute(self, pipeline: PipelineSpec, dataset: Dataset,
                sample: SampleSpec | None = None, fresh: bool = False,
                run_id: str | None = None,
                event_sink: Callable[[ProgressEvent], None] | None = None,
                cancel: threading.Event | None = None) -> RunResult:
        run_id = run_id or uuid.uuid4().hex
        events: list[ProgressEvent] = []
        seq = 0
        emit_lock = threading.Lock()

        def emit(kind: str, op_name: str | None = None, done: int = 0, total: int = 0,
                 payload: dict[str, Any] | None = None) -> None:
            nonlocal seq
            with emit_lock:
                ev = ProgressEvent(run_id, kind, op_name, done, total, time.time(),
                                   payload, seq)
                seq += 1
                events.append(ev)
                if event_sink:
                    event_sink(ev)

        docs = sample_docs(dataset.docs, sample)
        fp = dataset.fingerprint()
        tables: dict[str, list[Document]] = {}
        op_stats: dict[str, OpStats] = {}
        current = docs
        enabled_index = -1
        run_digests: set[str] = set()
        try:
            for op in pipeline.ops:
                if cancel is not None and cancel.is_set():
                    raise RunAborted(run_id)
                if not op.enabled:
                    tables[op.name] = current
                    op_stats[op.name] = OpStats(op.name, len(current), len(current), False)
                    continue
                enabled_index += 1
                digest = op_digest(fp, pipeline, enabled_index, sample)
                run_digests.add(digest)
                with self._lock:
                    self._running_digests.add(digest)

                if not fresh:
                    cached = self.cache.get(digest)
                    if cached is not None:
                        if self.recheck_cache:
                            recomputed = self._compute_op(op, pipeline, current, emit, cancel)
                            if _table_bytes(recomputed) != _table_bytes(cached):
                                raise RuntimeError(
                                    f"cache soundness violation for op {op.name!r}")
                        emit("op_cached", op.name, len(cached), len(cached))
                        tables[op.name] = cached
                        op_stats[op.name] = OpStats(op.name, len(current), len(cached), True)
                        current = cached
                        continue

                emit("op_started", op.name, 0, len(current))
                outputs, errors = self._run_op(op, pipeline, current, emit, cancel)
                self.cache.put(digest, outputs)
                for err in errors:
                    emit("error", op.name, payload={"doc_id": err.doc_id,
                                                    "message": err.message})
                emit("op_done", op.name, len(outputs), len(outputs))
                tables[op.name] = outputs
                op_stats[op.name] = OpStats(op.name, len(current), len(outputs), False,
                                            error_count=len(errors))
                current = outputs
            emit("run_done", None, 0, 0)
        finally:
            with self._lock:
                self._running_digests -= run_digests
        return RunResult(run_id, pipeline.id, tables, docs, op_stats, events)

    def _run_op(self, op, pipeline, current, emit, cancel):
        def on_progress(done: int, total: int) -> None:
            if cancel is not None and cancel.is_set():
                raise RunAborted()
            emit("doc_done", op.name, done, total)

        ctx = OpContext(
            gateway=self.gateway,
            profile=self.profile_for(op.model or pipeline.default_model),
            max_parallel=self.max_parallel,
            on_progress=on_progress,
        )
        try:
            outputs = run_operation(op, current, ctx)
        except Exception as e:
            if isinstance(e, RunAborted):
                raise
            # op-level failure (e.g. resolve pair cap): pass docs through,
            # marked, and keep the run going
            marked = []
            for doc in current:
                d = doc.copy()
                d.attrs[f"_error.{op.name}"] = str(e)
                marked.append(d)
            return marked, [OpError("*", str(e))]
        return outputs, ctx.errors

    def _compute_op(self, op, pipeline, current, emit, cancel):
        outputs, _ = self._run_op(op, pipeline, current, lambda *a, **k: None, cancel)
        return outputs

    def cache_gc(self, max_bytes: int) -> int:
        with self._lock:
            protected = set(self._running_digests)
        return self.cache.gc(max_bytes, protected)


def _table_bytes(docs: list[Document]) -> bytes:
    lines = [json.dumps({"id": d.id, "attrs": d.attrs}, ensure_ascii=False) for d in docs]
    return ("\n".join(lines)).encode("utf-8")


def table_to_jsonl(docs: list[Document]) -> str:
    return "".join(json.dumps(d.to_json_obj(), ensure_ascii=False) + "\n" for d in docs)
