// Wire types for the semforge server API. The UI holds no truth: every view
// derives from these shapes.

export type Value = null | boolean | number | string | Value[] | { [key: string]: Value };

export type OpKind =
  | "map" | "filter" | "reduce" | "resolve"
  | "unnest" | "split" | "gather"
  | "code_map" | "code_filter" | "code_reduce";

export const ALL_KINDS: OpKind[] = [
  "map", "filter", "reduce", "resolve", "unnest", "split", "gather",
  "code_map", "code_filter", "code_reduce",
];

export interface ResolveConfig {
  compare_prompt: string;
  resolution_prompt: string;
  target_attribute: string;
  blocking_threshold: number;
}

export interface SplitConfig {
  attribute: string;
  chunk_token_budget: number;
}

// Canonical op object, as stored and returned by the server.
export interface OpSpec {
  name: string;
  kind: OpKind;
  enabled: boolean;
  prompt?: string;
  output_schema?: [string, string][];
  reduce_key?: string;
  resolve_config?: ResolveConfig;
  unnest_attribute?: string;
  split_config?: SplitConfig;
  code_expr?: string;
  model?: string;
  sample_limit?: number;
}

export interface PipelineObj {
  id: string;
  name: string;
  dataset_id: string;
  default_model: string;
  ops: OpSpec[];
}

export interface Diagnostic {
  op: string;
  field: string;
  message: string;
}

export interface PipelineResponse {
  id: string;
  pipeline: PipelineObj;
  yaml?: string;
  diagnostics: Diagnostic[];
  recompute_from?: number;
}

export interface DatasetStats {
  id: string;
  doc_count: number;
  attributes: string[];
  word_counts: Record<string, number[]>;
  word_count_summary: Record<string, { count: number; min: number; max: number; mean: number }>;
  docs?: Row[];
}

export type Row = { id: string } & Record<string, Value>;

export interface VizBin {
  label: string;
  count: number;
}

export interface VizSpec {
  column: string;
  chart:
    | "histogram7" | "bar2_boolean" | "bar_top7_categories"
    | "histogram7_word_counts" | "histogram7_char_counts" | "none";
  bins: VizBin[];
  overflow_count: number;
}

export interface OutputsPage {
  total: number;
  page: number;
  page_size: number;
  rows: Row[];
  viz: VizSpec[];
  prompts?: (string | null)[];
}

export type EventKind =
  | "op_started" | "doc_done" | "op_done" | "op_cached" | "error"
  | "judge_verdict" | "optimize_log" | "optimize_done" | "run_done";

export interface RunEvent {
  seq: number;
  run_id: string;
  kind: EventKind;
  op_name: string | null;
  done: number;
  total: number;
  timestamp: number;
  payload?: Record<string, unknown>;
}

export interface OpRunStats {
  in: number;
  out: number;
  cached: boolean;
  errors: number;
  selectivity: string;
}

export interface JudgeVerdict {
  run_id: string;
  op_name: string;
  sampled_row_ids: string[];
  pass: boolean;
  reasons: string[];
  suggestions: { text: string; tag: "prompt_fix" | "decompose" }[];
}

export interface RunStatus {
  run_id: string;
  kind: "pipeline" | "optimize";
  status: "running" | "done" | "error";
  pipeline_id: string;
  error?: string;
  ops?: Record<string, OpRunStats>;
  judge_verdicts: JudgeVerdict[];
}

export interface Note {
  id: string;
  operation_id: string;
  attribute: string;
  comment: string;
  tag: "red" | "green" | "yellow" | "blue" | null;
  row_ref: string | null;
  created_at: number;
  orphaned?: boolean;
}

export interface DiffLine {
  op: "equal" | "delete" | "insert";
  line: string;
}

export interface RevisionNode {
  id: string;
  parent: string | null;
  prompt: string;
  schema_change: [string, string][] | null;
  origin: "original" | "ai_suggested" | "manual_edit" | "user_feedback";
  created_at: number;
  diff?: DiffLine[];
}

export interface RefineSession {
  session_id: string;
  pipeline_id: string;
  operation_id: string;
  active_node: string;
  tree: RevisionNode[];
}

export interface OpDiffEntry {
  name: string;
  status: "unchanged" | "edited" | "added" | "removed" | "reordered";
  fields: string[];
}

export interface CandidatePlanObj {
  id: string;
  directive: "chunk_map_unify" | "attribute_split" | "baseline";
  replacement_ops: OpSpec[];
  rationale: string;
  judge_pass_rate: number;
  llm_call_estimate: number;
}

export interface OptimizeResult {
  optimize_id: string;
  status: "running" | "done" | "error";
  pipeline_id: string;
  op_name: string;
  error?: string;
  winner?: CandidatePlanObj;
  candidates?: CandidatePlanObj[];
  diff?: OpDiffEntry[];
  log?: string[];
}

export interface SampleSpecBody {
  limit: number;
  mode?: "first_n" | "seeded_random";
  seed?: number;
}
