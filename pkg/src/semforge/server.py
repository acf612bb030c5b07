"""HTTP + streaming facade over the engine; one workspace per process.

Event frames are newline-delimited JSON, replayed from a per-run buffer and
live-tailed until the terminal event; a WebSocket endpoint carries the same
frames. Judge verdicts and decomposition logs ride the same stream.
"""

from __future__ import annotations

import asyncio
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import StreamingResponse

from . import decompose as decompose_mod
from . import refinement as refinement_mod
from .executor import Engine, ProgressEvent, RunResult, SampleSpec, plan_recompute
from .gateway import BudgetInfeasible, ChatMessage, ProviderError
from .judge import JudgeVerdict, judge_run_op
from .model import (Dataset, Document, IngestError, dataset_from_json_array,
                    dataset_from_jsonl, dataset_from_texts, dataset_stats,
                    infer_attribute_kind, AttributeKind)
from .notes import NoteStore, NoteValidationError
from .spec import (Diagnostic, PipelineSpec, SEMANTIC_KINDS, pipeline_from_obj,
                   pipeline_from_yaml, pipeline_to_obj, pipeline_to_yaml,
                   validate_pipeline)
from .templates import parse_template
from .viz import viz_specs_for_rows


class EventBuffer:
    """Ordered, append-only event log with blocking tail reads."""

    def __init__(self) -> None:
        self.events: list[ProgressEvent] = []
        self.cond = threading.Condition()
        self.closed = False

    def append(self, ev: ProgressEvent) -> None:
        with self.cond:
            ev.seq = len(self.events)
            self.events.append(ev)
            self.cond.notify_all()

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify_all()

    def read_from(self, index: int, wait: float = 30.0):
        """Yield events starting at `index`; blocks for live tails until the
        buffer closes."""
        while True:
            with self.cond:
                while len(self.events) <= index and not self.closed:
                    self.cond.wait(timeout=wait)
                batch = self.events[index:]
                closed = self.closed
            for ev in batch:
                yield ev
            index += len(batch)
            if closed and not batch:
                return
            if closed:
                with self.cond:
                    if index >= len(self.events):
                        return


@dataclass
class RunRecord:
    run_id: str
    pipeline_id: str
    kind: str  # pipeline | optimize
    buffer: EventBuffer = field(default_factory=EventBuffer)
    status: str = "running"  # running | done | error
    result: RunResult | None = None
    verdicts: list[JudgeVerdict] = field(default_factory=list)
    error: str | None = None


@dataclass
class OptimizeRecord:
    optimize_id: str
    pipeline_id: str
    op_name: str
    status: str = "running"
    selection: decompose_mod.PlanSelection | None = None
    error: str | None = None


class Workspace:
    """All server state: datasets, pipelines, notes, sessions, runs, cache."""

    def __init__(self, root: str | Path, engine: Engine,
                 assistant_model: str | None = None, judge_enabled: bool = True):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "datasets").mkdir(exist_ok=True)
        (self.root / "pipelines").mkdir(exist_ok=True)
        (self.root / "sessions").mkdir(exist_ok=True)
        self.engine = engine
        self.assistant_model = assistant_model
        self.judge_enabled = judge_enabled
        self.datasets: dict[str, Dataset] = {}
        self.pipelines: dict[str, PipelineSpec] = {}
        self.notes = NoteStore(self.root / "notes.jsonl")
        self.sessions: dict[str, refinement_mod.RefinementSession] = {}
        self.runs: dict[str, RunRecord] = {}
        self.optimizations: dict[str, OptimizeRecord] = {}
        self.mutate_lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        for f in sorted((self.root / "datasets").glob("*.json")):
            try:
                data = json.loads(f.read_text(encoding="utf-8"))
                docs = [Document(o["id"], o["attrs"]) for o in data["docs"]]
                self.datasets[data["id"]] = Dataset(data["id"], docs,
                                                    data.get("source_name", ""))
            except (KeyError, json.JSONDecodeError):
                continue
        for f in sorted((self.root / "pipelines").glob("*.yaml")):
            try:
                p = pipeline_from_yaml(f.read_text(encoding="utf-8"), pipeline_id=f.stem)
                self.pipelines[p.id] = p
            except Exception:
                continue
        for f in sorted((self.root / "sessions").glob("*.json")):
            try:
                s = refinement_mod.RefinementSession.from_obj(
                    json.loads(f.read_text(encoding="utf-8")))
                self.sessions[s.id] = s
            except (KeyError, json.JSONDecodeError):
                continue

    def save_dataset(self, d: Dataset) -> None:
        self.datasets[d.id] = d
        payload = {"id": d.id, "source_name": d.source_name,
                   "docs": [{"id": doc.id, "attrs": doc.attrs} for doc in d.docs]}
        (self.root / "datasets" / f"{d.id}.json").write_text(
            json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    def save_pipeline(self, p: PipelineSpec) -> None:
        self.pipelines[p.id] = p
        (self.root / "pipelines" / f"{p.id}.yaml").write_text(
            pipeline_to_yaml(p), encoding="utf-8")

    def save_session(self, s: refinement_mod.RefinementSession) -> None:
        self.sessions[s.id] = s
        (self.root / "sessions" / f"{s.id}.json").write_text(
            json.dumps(s.to_obj(), ensure_ascii=False), encoding="utf-8")

    def assistant_profile(self, pipeline: PipelineSpec):
        return self.engine.profile_for(self.assistant_model or pipeline.default_model)

    # --- run orchestration -------------------------------------------------

    def start_run(self, pipeline: PipelineSpec, dataset: Dataset,
                  sample: SampleSpec | None, fresh: bool) -> RunRecord:
        run_id = uuid.uuid4().hex
        record = RunRecord(run_id, pipeline.id, "pipeline")
        self.runs[run_id] = record
        held_done: list[ProgressEvent] = []

        def sink(ev: ProgressEvent) -> None:
            if ev.kind == "run_done":
                held_done.append(ev)
                return
            record.buffer.append(ev)

        def work() -> None:
            try:
                result = self.engine.execute(pipeline, dataset, sample=sample,
                                             fresh=fresh, run_id=run_id, event_sink=sink)
                record.result = result
                record.status = "done"
                if self.judge_enabled:
                    self._judge(record, pipeline, result)
            except Exception as e:  # surfaced on the stream, never silently lost
                record.status = "error"
                record.error = str(e)
                record.buffer.append(ProgressEvent(run_id, "error",
                                                   payload={"message": str(e)}))
            finally:
                done = held_done[0] if held_done else ProgressEvent(run_id, "run_done")
                record.buffer.append(done)
                record.buffer.close()

        threading.Thread(target=work, daemon=True).start()
        return record

    def _judge(self, record: RunRecord, pipeline: PipelineSpec, result: RunResult) -> None:
        profile = self.assistant_profile(pipeline)
        for op in pipeline.enabled_ops():
            if op.kind not in SEMANTIC_KINDS:
                continue
            rows = result.tables.get(op.name, [])
            if not rows:
                continue
            verdict = judge_run_op(record.run_id, op, rows, self.engine.gateway, profile)
            if verdict is None:
                continue
            record.verdicts.append(verdict)
            record.buffer.append(ProgressEvent(record.run_id, "judge_verdict", op.name,
                                               payload=verdict.to_obj()))

    def start_decompose(self, pipeline: PipelineSpec, dataset: Dataset, op_name: str,
                        sample_limit: int | None) -> tuple[OptimizeRecord, RunRecord]:
        optimize_id = uuid.uuid4().hex
        opt = OptimizeRecord(optimize_id, pipeline.id, op_name)
        self.optimizations[optimize_id] = opt
        record = RunRecord(optimize_id, pipeline.id, "optimize")
        self.runs[optimize_id] = record

        op_index = pipeline.op_index(op_name)
        upstream_inputs = self._op_input_docs(pipeline, dataset, op_name)
        sample = upstream_inputs[:sample_limit or 5]
        dataset_attrs = dataset.attribute_names()
        assistant = self.assistant_profile(pipeline)
        op = pipeline.op(op_name)
        op_profile = self.engine.profile_for(op.model or pipeline.default_model)

        def on_log(line: str) -> None:
            record.buffer.append(ProgressEvent(optimize_id, "optimize_log", op_name,
                                               payload={"line": line}))

        def work() -> None:
            try:
                candidates = decompose_mod.generate_candidates(
                    pipeline, op_name, dataset_attrs, self.engine.gateway,
                    assistant, op_profile, sample)
                selection = decompose_mod.select_plan(
                    pipeline, op_name, candidates, sample, self.engine.gateway,
                    assistant, self.engine.profile_for, on_log)
                opt.selection = selection
                opt.status = "done"
                record.status = "done"
                record.buffer.append(ProgressEvent(
                    optimize_id, "optimize_done", op_name,
                    payload={"optimize_id": optimize_id,
                             "winner": selection.winner.to_obj(),
                             "diff": selection.diff.to_obj()}))
            except Exception as e:
                opt.status = "error"
                opt.error = str(e)
                record.status = "error"
                record.error = str(e)
                record.buffer.append(ProgressEvent(optimize_id, "error", op_name,
                                                   payload={"message": str(e)}))
            finally:
                record.buffer.append(ProgressEvent(optimize_id, "run_done"))
                record.buffer.close()

        threading.Thread(target=work, daemon=True).start()
        return opt, record

    def _op_input_docs(self, pipeline: PipelineSpec, dataset: Dataset,
                       op_name: str) -> list[Document]:
        """Inputs feeding `op_name` in the latest finished run, else dataset docs."""
        latest: RunResult | None = None
        for record in self.runs.values():
            if record.kind == "pipeline" and record.pipeline_id == pipeline.id \
                    and record.result is not None:
                latest = record.result
        source = dataset.docs
        if latest is not None:
            current = latest.input_docs
            for op in pipeline.ops:
                if op.name == op_name:
                    return current
                current = latest.tables.get(op.name, current)
            return current
        i = pipeline.op_index(op_name)
        if i == 0:
            return source
        return source  # no run yet: the raw documents are the best sample

    def row_lookup(self, pipeline: PipelineSpec, dataset: Dataset) -> dict[str, Document]:
        lookup = {d.id: d for d in dataset.docs}
        for record in self.runs.values():
            if record.kind == "pipeline" and record.pipeline_id == pipeline.id \
                    and record.result is not None:
                for docs in record.result.tables.values():
                    for d in docs:
                        lookup[d.id] = d
        return lookup


# --- row table queries ---------------------------------------------------------

def _sort_rows(rows: list[dict[str, Any]], column: str, descending: bool) -> list[dict[str, Any]]:
    values = [r.get(column) for r in rows]
    kind = infer_attribute_kind(values)

    def key(row: dict[str, Any]):
        v = row.get(column)
        if v is None:
            return (1, "")
        if kind == AttributeKind.NUMERICAL:
            return (0, float(v))
        if kind == AttributeKind.BOOLEAN:
            return (0, bool(v))
        return (0, v if isinstance(v, str) else json.dumps(v, ensure_ascii=False))

    return sorted(rows, key=key, reverse=descending)  # stable within equal keys


def _filter_rows(rows: list[dict[str, Any]], attr: str, value: str, mode: str) -> list[dict[str, Any]]:
    out = []
    for row in rows:
        v = row.get(attr)
        text = v if isinstance(v, str) else json.dumps(v, ensure_ascii=False)
        if mode == "equals":
            if text == value or v == value:
                out.append(row)
        else:  # contains, case-insensitive
            if value.lower() in text.lower():
                out.append(row)
    return out


def _search_rows(rows: list[dict[str, Any]], query: str) -> list[dict[str, Any]]:
    q = query.lower()
    out = []
    for row in rows:
        for v in row.values():
            if isinstance(v, str) and q in v.lower():
                out.append(row)
                break
            if isinstance(v, list) and any(isinstance(x, str) and q in x.lower() for x in v):
                out.append(row)
                break
    return out


# --- app factory ----------------------------------------------------------------

def create_app(ws: Workspace) -> FastAPI:
    app = FastAPI(title="semforge", version="0.1.0")
    app.state.workspace = ws

    def _dataset_or_404(dataset_id: str) -> Dataset:
        if dataset_id not in ws.datasets:
            raise HTTPException(404, f"unknown dataset {dataset_id!r}")
        return ws.datasets[dataset_id]

    def _pipeline_or_404(pipeline_id: str) -> PipelineSpec:
        if pipeline_id not in ws.pipelines:
            raise HTTPException(404, f"unknown pipeline {pipeline_id!r}")
        return ws.pipelines[pipeline_id]

    def _run_or_404(run_id: str) -> RunRecord:
        if run_id not in ws.runs:
            raise HTTPException(404, f"unknown run {run_id!r}")
        return ws.runs[run_id]

    def _session_or_404(session_id: str) -> refinement_mod.RefinementSession:
        if session_id not in ws.sessions:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return ws.sessions[session_id]

    # --- datasets --------------------------------------------------------

    @app.post("/datasets", status_code=201)
    async def ingest_dataset(request: Request) -> dict[str, Any]:
        body = await request.json()
        dataset_id = body.get("id") or uuid.uuid4().hex[:12]
        try:
            if "texts" in body:
                d = dataset_from_texts(list(body["texts"]), dataset_id,
                                       body.get("source_name", "upload"))
            else:
                content = body.get("content")
                if not isinstance(content, str):
                    raise IngestError("body needs 'content' (string) or 'texts' (list)")
                fmt = body.get("format") or ("jsonl" if "\n{" in content or
                                             content.lstrip().startswith("{") else "json")
                if fmt == "json":
                    d = dataset_from_json_array(content, dataset_id, body.get("source_name", "upload"))
                elif fmt == "jsonl":
                    d = dataset_from_jsonl(content, dataset_id, body.get("source_name", "upload"))
                elif fmt == "text":
                    d = dataset_from_texts([content], dataset_id, body.get("source_name", "upload"))
                else:
                    raise IngestError(f"unknown format {fmt!r}")
        except IngestError as e:
            detail: dict[str, Any] = {"message": str(e)}
            if e.line is not None:
                detail["line"] = e.line
            raise HTTPException(400, detail)
        if not d.docs:
            raise HTTPException(400, {"message": "datasets must be nonempty"})
        with ws.mutate_lock:
            ws.save_dataset(d)
        return {"id": d.id, **dataset_stats(d)}

    @app.get("/datasets/{dataset_id}")
    def get_dataset(dataset_id: str, include_docs: bool = False) -> dict[str, Any]:
        d = _dataset_or_404(dataset_id)
        out: dict[str, Any] = {"id": d.id, "source_name": d.source_name, **dataset_stats(d)}
        if include_docs:
            out["docs"] = [doc.to_json_obj() for doc in d.docs]
        return out

    # --- pipelines --------------------------------------------------------

    def _parse_pipeline_body(body: dict[str, Any], pipeline_id: str) -> PipelineSpec:
        try:
            if "yaml" in body:
                return pipeline_from_yaml(body["yaml"], pipeline_id=pipeline_id)
            if "ops" in body:  # canonical object form
                body = dict(body)
                body["id"] = pipeline_id
                return pipeline_from_obj(body)
            # YAML-equivalent JSON structure
            import yaml as _yaml
            return pipeline_from_yaml(_yaml.safe_dump(body), pipeline_id=pipeline_id)
        except Exception as e:
            raise HTTPException(400, {"message": f"unparseable pipeline: {e}"})

    @app.put("/pipelines/{pipeline_id}")
    async def put_pipeline(pipeline_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        p = _parse_pipeline_body(body, pipeline_id)
        dataset = ws.datasets.get(p.dataset_id)
        diagnostics = validate_pipeline(p, dataset.attribute_names() if dataset else None)
        with ws.mutate_lock:
            old = ws.pipelines.get(pipeline_id)
            ws.save_pipeline(p)
        out = {"id": p.id, "pipeline": pipeline_to_obj(p),
               "diagnostics": [vars(d) for d in diagnostics]}
        if old is not None:
            out["recompute_from"] = plan_recompute(old, p)
        return out

    @app.get("/pipelines/{pipeline_id}")
    def get_pipeline(pipeline_id: str) -> dict[str, Any]:
        p = _pipeline_or_404(pipeline_id)
        dataset = ws.datasets.get(p.dataset_id)
        diagnostics = validate_pipeline(p, dataset.attribute_names() if dataset else None)
        return {"id": p.id, "pipeline": pipeline_to_obj(p), "yaml": pipeline_to_yaml(p),
                "diagnostics": [vars(d) for d in diagnostics]}

    # --- runs --------------------------------------------------------------

    @app.post("/pipelines/{pipeline_id}/runs", status_code=201)
    async def start_run(pipeline_id: str, request: Request) -> dict[str, Any]:
        body = await request.json() if await request.body() else {}
        p = _pipeline_or_404(pipeline_id)
        dataset = ws.datasets.get(p.dataset_id)
        if dataset is None:
            raise HTTPException(400, {"message": f"pipeline references unknown dataset {p.dataset_id!r}"})
        diagnostics = validate_pipeline(p, dataset.attribute_names())
        if diagnostics:
            raise HTTPException(400, {"message": "pipeline is invalid",
                                      "diagnostics": [vars(d) for d in diagnostics]})
        sample = None
        if body.get("sample"):
            s = body["sample"]
            sample = SampleSpec(int(s["limit"]), s.get("mode", "first_n"),
                                int(s.get("seed", 0)))
        record = ws.start_run(p, dataset, sample, bool(body.get("fresh", False)))
        return {"run_id": record.run_id}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str) -> dict[str, Any]:
        record = _run_or_404(run_id)
        out: dict[str, Any] = {"run_id": run_id, "kind": record.kind,
                               "status": record.status, "pipeline_id": record.pipeline_id}
        if record.error:
            out["error"] = record.error
        if record.result is not None:
            out["ops"] = {
                name: {"in": st.input_count, "out": st.output_count,
                       "cached": st.cached, "errors": st.error_count,
                       "selectivity": st.selectivity_display()}
                for name, st in record.result.op_stats.items()
            }
        out["judge_verdicts"] = [v.to_obj() for v in record.verdicts]
        return out

    @app.get("/runs/{run_id}/events")
    def stream_run_events(run_id: str, cursor: int | None = None) -> StreamingResponse:
        record = _run_or_404(run_id)
        start = (cursor + 1) if cursor is not None else 0

        def gen():
            for ev in record.buffer.read_from(start):
                yield json.dumps(ev.to_obj(), ensure_ascii=False) + "\n"

        return StreamingResponse(gen(), media_type="application/x-ndjson")

    @app.websocket("/runs/{run_id}/ws")
    async def stream_run_events_ws(websocket: WebSocket, run_id: str,
                                   cursor: int | None = None) -> None:
        await websocket.accept()
        if run_id not in ws.runs:
            await websocket.close(code=4404)
            return
        record = ws.runs[run_id]
        index = (cursor + 1) if cursor is not None else 0
        try:
            while True:
                with record.buffer.cond:
                    batch = record.buffer.events[index:]
                    closed = record.buffer.closed
                for ev in batch:
                    await websocket.send_text(json.dumps(ev.to_obj(), ensure_ascii=False))
                index += len(batch)
                if closed and not batch:
                    break
                if not batch:
                    await asyncio.sleep(0.05)
            await websocket.close()
        except WebSocketDisconnect:
            pass

    @app.get("/runs/{run_id}/ops/{op_name}/outputs")
    def query_outputs(run_id: str, op_name: str, page: int = 1, page_size: int = 50,
                      sort: str | None = None, order: str = "asc",
                      filter_attr: str | None = None, filter_value: str | None = None,
                      filter_mode: str = "contains", search: str | None = None,
                      with_prompts: bool = False) -> dict[str, Any]:
        record = _run_or_404(run_id)
        if record.result is None:
            raise HTTPException(404, "run has no results yet")
        if op_name not in record.result.tables:
            raise HTTPException(404, f"unknown op {op_name!r} in run")
        rows = [d.to_json_obj() for d in record.result.tables[op_name]]
        if filter_attr is not None and filter_value is not None:
            rows = _filter_rows(rows, filter_attr, filter_value, filter_mode)
        if search:
            rows = _search_rows(rows, search)
        if sort is not None:
            known = {k for row in rows for k in row}
            if rows and sort not in known:
                raise HTTPException(400, f"unknown sort column {sort!r}")
            rows = _sort_rows(rows, sort, order == "desc")
        viz = [v.to_obj() for v in viz_specs_for_rows(
            [{k: v for k, v in r.items() if k != "id"} for r in rows])]
        start = (page - 1) * page_size
        page_rows = rows[start:start + page_size]
        out: dict[str, Any] = {"total": len(rows), "page": page, "page_size": page_size,
                               "rows": page_rows, "viz": viz}
        if with_prompts:
            out["prompts"] = _rendered_prompts(ws, record, op_name, page_rows)
        return out

    def _rendered_prompts(ws: Workspace, record: RunRecord, op_name: str,
                          page_rows: list[dict[str, Any]]) -> list[str | None]:
        pipeline = ws.pipelines.get(record.pipeline_id)
        if pipeline is None:
            return [None] * len(page_rows)
        try:
            op = pipeline.op(op_name)
        except KeyError:
            return [None] * len(page_rows)
        if op.kind not in ("map", "filter") or not op.prompt:
            return [None] * len(page_rows)
        template = parse_template(op.prompt)
        prompts: list[str | None] = []
        for row in page_rows:
            attrs = {k: v for k, v in row.items() if k != "id"}
            try:
                prompts.append(template.render({"input": attrs}))
            except Exception:
                prompts.append(None)
        return prompts

    # --- notes ---------------------------------------------------------------

    @app.post("/notes", status_code=201)
    async def add_note(request: Request) -> dict[str, Any]:
        body = await request.json()
        try:
            note = ws.notes.add(
                operation_id=str(body.get("operation_id", "")),
                attribute=str(body.get("attribute", "")),
                comment=body.get("comment", ""),
                tag=body.get("tag"),
                row_ref=body.get("row_ref"),
            )
        except NoteValidationError as e:
            raise HTTPException(400, str(e))
        return note.to_obj()

    @app.get("/notes")
    def list_notes(operation_id: str | None = None, attribute: str | None = None,
                   tag: str | None = None, q: str | None = None) -> dict[str, Any]:
        notes = ws.notes.query(operation_id=operation_id, attribute=attribute,
                               tag=tag, text_query=q)
        known_ops = {op.name for p in ws.pipelines.values() for op in p.ops}
        out = []
        for n in notes:
            obj = n.to_obj()
            obj["orphaned"] = n.operation_id not in known_ops
            out.append(obj)
        return {"notes": out}

    @app.delete("/notes/{note_id}")
    def delete_note(note_id: str) -> dict[str, Any]:
        if not ws.notes.delete(note_id):
            raise HTTPException(404, f"unknown note {note_id!r}")
        return {"deleted": note_id}

    # --- refinement ------------------------------------------------------------

    @app.post("/pipelines/{pipeline_id}/ops/{op_name}/refine", status_code=201)
    async def start_refinement(pipeline_id: str, op_name: str, request: Request) -> dict[str, Any]:
        body = await request.json() if await request.body() else {}
        p = _pipeline_or_404(pipeline_id)
        dataset = ws.datasets.get(p.dataset_id)
        if dataset is None:
            raise HTTPException(400, {"message": f"unknown dataset {p.dataset_id!r}"})
        sample = ws._op_input_docs(p, dataset, op_name)[:refinement_mod.MAX_SAMPLE_DOCS]
        try:
            session = refinement_mod.start_session(
                p, op_name, sample, ws.notes.all(), ws.engine.gateway,
                ws.assistant_profile(p), row_lookup=ws.row_lookup(p, dataset),
                extra_instructions=body.get("extra_instructions"))
        except refinement_mod.NoSemanticOp as e:
            raise HTTPException(400, str(e))
        except refinement_mod.TagParseError as e:
            raise HTTPException(502, f"assistant reply unusable: {e}")
        except (ProviderError, BudgetInfeasible) as e:
            raise HTTPException(502, str(e))
        ws.save_session(session)
        return _session_obj(session)

    def _session_obj(session: refinement_mod.RefinementSession) -> dict[str, Any]:
        nodes = []
        for n in session.tree:
            obj = n.to_obj()
            if n.parent is not None:
                parent = session.node(n.parent)
                obj["diff"] = [{"op": op, "line": line}
                               for op, line in refinement_mod.line_diff(parent.prompt, n.prompt)]
            nodes.append(obj)
        return {"session_id": session.id, "pipeline_id": session.pipeline_id,
                "operation_id": session.operation_id, "active_node": session.active_node,
                "tree": nodes}

    @app.post("/refine/{session_id}/feedback")
    async def refine_feedback(session_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        session = _session_or_404(session_id)
        p = _pipeline_or_404(session.pipeline_id)
        try:
            node = refinement_mod.refine(session, str(body.get("feedback", "")),
                                         ws.engine.gateway, ws.assistant_profile(p))
        except refinement_mod.TagParseError as e:
            raise HTTPException(502, f"assistant reply unusable: {e}")
        except (ProviderError, BudgetInfeasible) as e:
            raise HTTPException(502, str(e))
        ws.save_session(session)
        return {"node": node.to_obj(), **_session_obj(session)}

    @app.post("/refine/{session_id}/edit")
    async def refine_edit(session_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        session = _session_or_404(session_id)
        node = refinement_mod.apply_manual_edit(session, str(body.get("prompt", "")))
        ws.save_session(session)
        return {"node": node.to_obj(), **_session_obj(session)}

    @app.post("/refine/{session_id}/checkout")
    async def refine_checkout(session_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        session = _session_or_404(session_id)
        try:
            refinement_mod.checkout(session, str(body.get("node_id", "")))
        except refinement_mod.UnknownNode as e:
            raise HTTPException(404, f"unknown node {e}")
        ws.save_session(session)
        return _session_obj(session)

    @app.post("/refine/{session_id}/accept")
    async def refine_accept(session_id: str, request: Request) -> dict[str, Any]:
        body = await request.json() if await request.body() else {}
        session = _session_or_404(session_id)
        p = _pipeline_or_404(session.pipeline_id)
        try:
            new_pipeline = refinement_mod.accept(session, p, body.get("node_id"))
        except refinement_mod.UnknownNode as e:
            raise HTTPException(404, f"unknown node {e}")
        with ws.mutate_lock:
            ws.save_pipeline(new_pipeline)
        return {"pipeline": pipeline_to_obj(new_pipeline),
                "recompute_from": plan_recompute(p, new_pipeline)}

    @app.get("/refine/{session_id}/tree")
    def refine_tree(session_id: str) -> dict[str, Any]:
        return _session_obj(_session_or_404(session_id))

    # --- decomposition -----------------------------------------------------------

    @app.post("/pipelines/{pipeline_id}/ops/{op_name}/decompose", status_code=202)
    async def start_decompose(pipeline_id: str, op_name: str, request: Request) -> dict[str, Any]:
        body = await request.json() if await request.body() else {}
        p = _pipeline_or_404(pipeline_id)
        try:
            p.op(op_name)
        except KeyError:
            raise HTTPException(404, f"unknown op {op_name!r}")
        dataset = ws.datasets.get(p.dataset_id)
        if dataset is None:
            raise HTTPException(400, {"message": f"unknown dataset {p.dataset_id!r}"})
        opt, record = ws.start_decompose(p, dataset, op_name, body.get("sample_limit"))
        return {"optimize_id": opt.optimize_id, "events_run_id": record.run_id}

    @app.get("/optimize/{optimize_id}")
    def get_optimize(optimize_id: str) -> dict[str, Any]:
        if optimize_id not in ws.optimizations:
            raise HTTPException(404, f"unknown optimization {optimize_id!r}")
        opt = ws.optimizations[optimize_id]
        out: dict[str, Any] = {"optimize_id": optimize_id, "status": opt.status,
                               "pipeline_id": opt.pipeline_id, "op_name": opt.op_name}
        if opt.error:
            out["error"] = opt.error
        if opt.selection is not None:
            out["winner"] = opt.selection.winner.to_obj()
            out["candidates"] = [c.to_obj() for c in opt.selection.candidates]
            out["diff"] = opt.selection.diff.to_obj()
            out["log"] = opt.selection.log
        return out

    @app.post("/pipelines/{pipeline_id}/accept-plan")
    async def accept_plan(pipeline_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        p = _pipeline_or_404(pipeline_id)
        optimize_id = body.get("optimize_id", "")
        opt = ws.optimizations.get(optimize_id)
        if opt is None or opt.pipeline_id != pipeline_id:
            raise HTTPException(404, f"unknown optimization {optimize_id!r}")
        if opt.selection is None:
            raise HTTPException(409, "optimization has no winning plan")
        new_pipeline = p.replace_op(opt.op_name, opt.selection.winner.replacement_ops)
        with ws.mutate_lock:
            ws.save_pipeline(new_pipeline)
        return {"pipeline": pipeline_to_obj(new_pipeline),
                "diff": opt.selection.diff.to_obj(),
                "recompute_from": plan_recompute(p, new_pipeline)}

    # --- assistant chat -------------------------------------------------------------

    @app.post("/assistant/chat")
    async def assistant_chat(request: Request) -> dict[str, Any]:
        body = await request.json()
        parts = ["You are the assistant inside a semantic data-processing workbench. "
                 "Help with prompts, template syntax, and pipeline structure.\n"]
        pipeline = ws.pipelines.get(body.get("pipeline_id", ""))
        if pipeline is not None:
            parts.append("\nCurrent pipeline:\n" + pipeline_to_yaml(pipeline))
        dataset = ws.datasets.get(body.get("dataset_id",
                                           pipeline.dataset_id if pipeline else ""))
        if dataset is not None:
            stats = dataset_stats(dataset)
            parts.append("\nDataset stats: " + json.dumps(
                {"doc_count": stats["doc_count"], "attributes": stats["attributes"],
                 "word_count_summary": stats["word_count_summary"]}))
        messages = [ChatMessage("system", "".join(parts))]
        for m in body.get("messages", []):
            messages.append(ChatMessage(m.get("role", "user"), str(m.get("content", ""))))
        if "message" in body:
            messages.append(ChatMessage("user", str(body["message"])))
        profile = ws.engine.profile_for(
            ws.assistant_model or (pipeline.default_model if pipeline else "mock-small"))
        try:
            fitted = ws.engine.gateway.fit_to_context(messages, [],
                                                      profile.context_limit_tokens, profile)
        except BudgetInfeasible as e:
            raise HTTPException(413, str(e))
        try:
            reply = ws.engine.gateway.complete_text(fitted, profile)
        except ProviderError as e:
            raise HTTPException(502, str(e))
        return {"reply": reply}

    # --- cache -----------------------------------------------------------------------

    @app.post("/cache/gc")
    async def cache_gc(request: Request) -> dict[str, Any]:
        body = await request.json()
        evicted = ws.engine.cache_gc(int(body.get("max_bytes", 0)))
        return {"evicted": evicted}

    return app
