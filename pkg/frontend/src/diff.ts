// Render server-provided line diffs (prompt revisions, plan diffs).

import { el } from "./dom.js";
import type { DiffLine, OpDiffEntry } from "./types.js";

export interface DiffSummary {
  inserted: number;
  deleted: number;
  unchanged: number;
}

export function summarizeDiff(lines: DiffLine[]): DiffSummary {
  return {
    inserted: lines.filter((l) => l.op === "insert").length,
    deleted: lines.filter((l) => l.op === "delete").length,
    unchanged: lines.filter((l) => l.op === "equal").length,
  };
}

export function renderLineDiff(lines: DiffLine[]): HTMLElement {
  const root = el("pre", { class: "line-diff" });
  for (const { op, line } of lines) {
    const prefix = op === "insert" ? "+ " : op === "delete" ? "- " : "  ";
    root.appendChild(el("div", { class: `diff-${op}` }, prefix + line));
  }
  return root;
}

export function renderPlanDiff(entries: OpDiffEntry[]): HTMLElement {
  const root = el("ul", { class: "plan-diff" });
  for (const entry of entries) {
    const detail = entry.status === "edited" && entry.fields.length
      ? ` (${entry.fields.join(", ")})` : "";
    root.appendChild(el("li", { class: `plan-${entry.status}` },
                        `${entry.status}: ${entry.name}${detail}`));
  }
  return root;
}
