// Typed client for every documented server endpoint. All mutations flow
// through here; no UI-only state affects execution.

import type {
  DatasetStats, DiffLine, Note, OptimizeResult, OutputsPage, PipelineObj,
  PipelineResponse, RefineSession, RevisionNode, RunEvent, RunStatus,
  SampleSpecBody,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public body: unknown) {
    super(`API error ${status}: ${JSON.stringify(body)}`);
  }
}

async function expectJson<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => null);
  if (!resp.ok) throw new ApiError(resp.status, body);
  return body as T;
}

export interface OutputsQuery {
  page?: number;
  pageSize?: number;
  sort?: string;
  order?: "asc" | "desc";
  filterAttr?: string;
  filterValue?: string;
  filterMode?: "equals" | "contains";
  search?: string;
  withPrompts?: boolean;
}

export function outputsQueryParams(q: OutputsQuery): URLSearchParams {
  const params = new URLSearchParams();
  if (q.page !== undefined) params.set("page", String(q.page));
  if (q.pageSize !== undefined) params.set("page_size", String(q.pageSize));
  if (q.sort) {
    params.set("sort", q.sort);
    params.set("order", q.order ?? "asc");
  }
  if (q.filterAttr !== undefined && q.filterValue !== undefined) {
    params.set("filter_attr", q.filterAttr);
    params.set("filter_value", q.filterValue);
    params.set("filter_mode", q.filterMode ?? "contains");
  }
  if (q.search) params.set("search", q.search);
  if (q.withPrompts) params.set("with_prompts", "true");
  return params;
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(this.url(path), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return expectJson<T>(resp);
  }

  private async get<T>(path: string): Promise<T> {
    return expectJson<T>(await fetch(this.url(path)));
  }

  // datasets
  ingestDataset(body: { id?: string; content?: string; format?: string; texts?: string[] }):
      Promise<DatasetStats> {
    return this.post("/datasets", body);
  }

  getDataset(id: string, includeDocs = false): Promise<DatasetStats> {
    return this.get(`/datasets/${id}${includeDocs ? "?include_docs=true" : ""}`);
  }

  // pipelines
  async savePipeline(id: string, body: {
    name: string; dataset_id: string; default_model: string; ops: unknown[];
  }): Promise<PipelineResponse> {
    const resp = await fetch(this.url(`/pipelines/${id}`), {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ...body, ops: body.ops }),
    });
    return expectJson<PipelineResponse>(resp);
  }

  getPipeline(id: string): Promise<PipelineResponse> {
    return this.get(`/pipelines/${id}`);
  }

  // runs
  startRun(pipelineId: string, opts: { sample?: SampleSpecBody; fresh?: boolean } = {}):
      Promise<{ run_id: string }> {
    return this.post(`/pipelines/${pipelineId}/runs`, opts);
  }

  getRun(runId: string): Promise<RunStatus> {
    return this.get(`/runs/${runId}`);
  }

  /** Stream NDJSON event frames; resolves once the stream closes. */
  async streamEvents(runId: string, onEvent: (ev: RunEvent) => void,
                     cursor?: number): Promise<RunEvent[]> {
    const suffix = cursor !== undefined ? `?cursor=${cursor}` : "";
    const resp = await fetch(this.url(`/runs/${runId}/events${suffix}`));
    if (!resp.ok || !resp.body) throw new ApiError(resp.status, await resp.text());
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    const events: RunEvent[] = [];
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (value) buffer += decoder.decode(value, { stream: true });
      let newline = buffer.indexOf("\n");
      while (newline >= 0) {
        const line = buffer.slice(0, newline).trim();
        buffer = buffer.slice(newline + 1);
        if (line) {
          const ev = JSON.parse(line) as RunEvent;
          events.push(ev);
          onEvent(ev);
        }
        newline = buffer.indexOf("\n");
      }
      if (done) break;
    }
    return events;
  }

  queryOutputs(runId: string, opName: string, params: URLSearchParams): Promise<OutputsPage> {
    const qs = params.toString();
    return this.get(`/runs/${runId}/ops/${opName}/outputs${qs ? "?" + qs : ""}`);
  }

  // notes
  addNote(body: { operation_id: string; attribute: string; comment: string;
                  tag?: string | null; row_ref?: string | null }): Promise<Note> {
    return this.post("/notes", body);
  }

  listNotes(filter: { operation_id?: string; attribute?: string; tag?: string;
                      q?: string } = {}): Promise<{ notes: Note[] }> {
    const params = new URLSearchParams();
    for (const [k, v] of Object.entries(filter)) {
      if (v !== undefined) params.set(k, v);
    }
    const qs = params.toString();
    return this.get(`/notes${qs ? "?" + qs : ""}`);
  }

  async deleteNote(id: string): Promise<{ deleted: string }> {
    const resp = await fetch(this.url(`/notes/${id}`), { method: "DELETE" });
    return expectJson<{ deleted: string }>(resp);
  }

  // refinement
  startRefine(pipelineId: string, opName: string, extraInstructions?: string):
      Promise<RefineSession> {
    return this.post(`/pipelines/${pipelineId}/ops/${opName}/refine`,
                     extraInstructions ? { extra_instructions: extraInstructions } : {});
  }

  refineFeedback(sessionId: string, feedback: string):
      Promise<RefineSession & { node: RevisionNode }> {
    return this.post(`/refine/${sessionId}/feedback`, { feedback });
  }

  refineEdit(sessionId: string, prompt: string):
      Promise<RefineSession & { node: RevisionNode }> {
    return this.post(`/refine/${sessionId}/edit`, { prompt });
  }

  refineCheckout(sessionId: string, nodeId: string): Promise<RefineSession> {
    return this.post(`/refine/${sessionId}/checkout`, { node_id: nodeId });
  }

  refineAccept(sessionId: string, nodeId?: string):
      Promise<{ pipeline: PipelineObj; recompute_from: number }> {
    return this.post(`/refine/${sessionId}/accept`, nodeId ? { node_id: nodeId } : {});
  }

  refineTree(sessionId: string): Promise<RefineSession> {
    return this.get(`/refine/${sessionId}/tree`);
  }

  // decomposition
  startDecompose(pipelineId: string, opName: string, sampleLimit?: number):
      Promise<{ optimize_id: string; events_run_id: string }> {
    return this.post(`/pipelines/${pipelineId}/ops/${opName}/decompose`,
                     sampleLimit ? { sample_limit: sampleLimit } : {});
  }

  getOptimize(optimizeId: string): Promise<OptimizeResult> {
    return this.get(`/optimize/${optimizeId}`);
  }

  acceptPlan(pipelineId: string, optimizeId: string):
      Promise<{ pipeline: PipelineObj; diff: DiffLine[]; recompute_from: number }> {
    return this.post(`/pipelines/${pipelineId}/accept-plan`, { optimize_id: optimizeId });
  }

  // assistant
  chat(body: { pipeline_id?: string; dataset_id?: string; message: string }):
      Promise<{ reply: string }> {
    return this.post("/assistant/chat", body);
  }
}
