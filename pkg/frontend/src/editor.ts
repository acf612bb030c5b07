// Notebook-style pipeline editor state: operation cards that can be added,
// edited, dragged, and toggled. The card list is always a valid
// serialization target: schema types are structured drafts (never free
// text), so saving produces a parseable spec even while diagnostics exist.

import type { Diagnostic, OpKind, OpSpec, PipelineObj } from "./types.js";

export type ScalarBase = "string" | "integer" | "number" | "boolean";

export interface SchemaTypeDraft {
  base: ScalarBase | "enum" | "list" | "object_list";
  enumValues?: string[];           // base = enum
  item?: ScalarBase | { base: "enum"; enumValues: string[] };  // base = list
  fields?: { name: string; type: ScalarBase }[];               // base = object_list
}

export interface SchemaFieldDraft {
  name: string;
  type: SchemaTypeDraft;
}

/** Serialize a structured type draft into the server's type text. */
export function typeDraftToText(t: SchemaTypeDraft): string {
  switch (t.base) {
    case "enum": {
      const values = (t.enumValues ?? []).map((v) => v.trim()).filter(Boolean);
      return `enum(${values.join(", ")})`;
    }
    case "list": {
      const item = t.item ?? "string";
      if (typeof item === "string") return `list[${item}]`;
      return `list[enum(${item.enumValues.join(", ")})]`;
    }
    case "object_list": {
      const fields = (t.fields ?? []).map((f) => `${f.name}: ${f.type}`);
      return `list[{${fields.join(", ")}}]`;
    }
    default:
      return t.base;
  }
}

/** Parse the server's type text back into a draft (for loading pipelines). */
export function typeTextToDraft(text: string): SchemaTypeDraft {
  const s = text.trim();
  const scalar = s as ScalarBase;
  if (["string", "integer", "number", "boolean"].includes(s)) return { base: scalar };
  const enumMatch = s.match(/^enum\((.*)\)$/s);
  if (enumMatch) {
    return { base: "enum", enumValues: enumMatch[1].split(",").map((v) => v.trim()).filter(Boolean) };
  }
  const listMatch = s.match(/^list\[(.+)\]$/s);
  if (listMatch) {
    const inner = listMatch[1].trim();
    if (inner.startsWith("{") && inner.endsWith("}")) {
      const fields = inner.slice(1, -1).split(",").map((part) => {
        const [name, type] = part.split(":").map((x) => x.trim());
        return { name, type: type as ScalarBase };
      }).filter((f) => f.name);
      return { base: "object_list", fields };
    }
    const innerEnum = inner.match(/^enum\((.*)\)$/s);
    if (innerEnum) {
      return {
        base: "list",
        item: { base: "enum", enumValues: innerEnum[1].split(",").map((v) => v.trim()).filter(Boolean) },
      };
    }
    return { base: "list", item: inner as ScalarBase };
  }
  return { base: "string" };  // unreachable for server-produced text
}

export interface OpCard {
  name: string;
  kind: OpKind;
  enabled: boolean;
  prompt: string;
  schema: SchemaFieldDraft[];
  reduceKey: string;
  comparePrompt: string;
  resolutionPrompt: string;
  targetAttribute: string;
  blockingThreshold: number;
  unnestAttribute: string;
  splitAttribute: string;
  chunkTokenBudget: number;
  codeExpr: string;
  model: string;
  sampleLimit: number | null;
  collapsed: boolean;
}

const SEMANTIC: OpKind[] = ["map", "filter", "reduce", "resolve"];

export function defaultCard(kind: OpKind, name: string): OpCard {
  return {
    name,
    kind,
    enabled: true,
    prompt: kind === "map" || kind === "reduce" ? "{{ input.content }}" : "",
    schema: kind === "filter"
      ? [{ name: "keep", type: { base: "boolean" } }]
      : (kind === "map" || kind === "reduce"
        ? [{ name: "result", type: { base: "string" } }] : []),
    reduceKey: "",
    comparePrompt: "",
    resolutionPrompt: "",
    targetAttribute: "",
    blockingThreshold: 0,
    unnestAttribute: "",
    splitAttribute: "",
    chunkTokenBudget: 1000,
    codeExpr: "",
    model: "",
    sampleLimit: null,
    collapsed: false,
  };
}

export function cardToOpSpec(card: OpCard): OpSpec {
  const op: OpSpec = { name: card.name, kind: card.kind, enabled: card.enabled };
  const semantic = SEMANTIC.includes(card.kind);
  if (semantic && card.kind !== "resolve") op.prompt = card.prompt;
  if ((card.kind === "map" || card.kind === "filter" || card.kind === "reduce") &&
      card.schema.length) {
    op.output_schema = card.schema.map((f) => [f.name, typeDraftToText(f.type)]);
  }
  if (card.kind === "reduce" || card.kind === "code_reduce") op.reduce_key = card.reduceKey;
  if (card.kind === "resolve") {
    op.resolve_config = {
      compare_prompt: card.comparePrompt,
      resolution_prompt: card.resolutionPrompt,
      target_attribute: card.targetAttribute,
      blocking_threshold: card.blockingThreshold,
    };
  }
  if (card.kind === "unnest") op.unnest_attribute = card.unnestAttribute;
  if (card.kind === "split") {
    op.split_config = { attribute: card.splitAttribute, chunk_token_budget: card.chunkTokenBudget };
  }
  if (card.kind.startsWith("code_")) op.code_expr = card.codeExpr;
  if (card.model) op.model = card.model;
  if (card.sampleLimit !== null) op.sample_limit = card.sampleLimit;
  return op;
}

export function cardFromOpSpec(op: OpSpec): OpCard {
  const card = defaultCard(op.kind, op.name);
  card.enabled = op.enabled;
  card.prompt = op.prompt ?? "";
  card.schema = (op.output_schema ?? []).map(([name, type]) => ({
    name, type: typeTextToDraft(type),
  }));
  card.reduceKey = op.reduce_key ?? "";
  if (op.resolve_config) {
    card.comparePrompt = op.resolve_config.compare_prompt;
    card.resolutionPrompt = op.resolve_config.resolution_prompt;
    card.targetAttribute = op.resolve_config.target_attribute;
    card.blockingThreshold = op.resolve_config.blocking_threshold;
  }
  card.unnestAttribute = op.unnest_attribute ?? "";
  if (op.split_config) {
    card.splitAttribute = op.split_config.attribute;
    card.chunkTokenBudget = op.split_config.chunk_token_budget;
  }
  card.codeExpr = op.code_expr ?? "";
  card.model = op.model ?? "";
  card.sampleLimit = op.sample_limit ?? null;
  return card;
}

export interface SaveBody {
  name: string;
  dataset_id: string;
  default_model: string;
  ops: OpSpec[];
  [key: string]: unknown;
}

export class EditorState {
  pipelineId = "pipeline";
  pipelineName = "pipeline";
  datasetId = "";
  defaultModel = "mock-small";
  cards: OpCard[] = [];
  diagnostics: Diagnostic[] = [];
  sampleRun = true;
  sampleLimit = 10;
  dirty = false;

  addCard(kind: OpKind): OpCard {
    const base = kind.replace("code_", "code-");
    let n = this.cards.length + 1;
    let name = `${base}-${n}`;
    while (this.cards.some((c) => c.name === name)) name = `${base}-${++n}`;
    const card = defaultCard(kind, name);
    this.cards.push(card);
    this.dirty = true;
    return card;
  }

  removeCard(index: number): void {
    this.cards.splice(index, 1);
    this.dirty = true;
  }

  moveCard(from: number, to: number): void {
    if (from === to || from < 0 || from >= this.cards.length) return;
    const clamped = Math.max(0, Math.min(this.cards.length - 1, to));
    const [card] = this.cards.splice(from, 1);
    this.cards.splice(clamped, 0, card);
    this.dirty = true;
  }

  toggleCard(index: number): void {
    this.cards[index].enabled = !this.cards[index].enabled;
    this.dirty = true;
  }

  updateCard(index: number, patch: Partial<OpCard>): void {
    Object.assign(this.cards[index], patch);
    this.dirty = true;
  }

  diagnosticsFor(opName: string): Diagnostic[] {
    return this.diagnostics.filter((d) => d.op === opName);
  }

  toSaveBody(): SaveBody {
    return {
      name: this.pipelineName,
      dataset_id: this.datasetId,
      default_model: this.defaultModel,
      ops: this.cards.map(cardToOpSpec),
    };
  }

  loadFromServer(pipeline: PipelineObj, diagnostics: Diagnostic[] = []): void {
    this.pipelineId = pipeline.id;
    this.pipelineName = pipeline.name;
    this.datasetId = pipeline.dataset_id;
    this.defaultModel = pipeline.default_model;
    this.cards = pipeline.ops.map(cardFromOpSpec);
    this.diagnostics = diagnostics;
    this.dirty = false;
  }
}

/** Debounce helper for live validation on each edit. */
export class Debouncer {
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private readonly delayMs: number) {}

  schedule(fn: () => void): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      fn();
    }, this.delayMs);
  }

  cancel(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
  }
}
