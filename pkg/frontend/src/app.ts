// Workbench wiring: pipeline editor, run controls with streamed progress,
// output table, notes sidebar, inspector dialog, refinement dialog,
// decomposition toast. Every view reconstructs from server state.

import { ApiClient } from "./api.js";
import { renderChart } from "./charts.js";
import { DecomposeFlow } from "./decompose.js";
import { renderLineDiff, renderPlanDiff } from "./diff.js";
import { clear, el, stringifyCell } from "./dom.js";
import { Debouncer, EditorState, type OpCard } from "./editor.js";
import { InspectorState } from "./inspector.js";
import { RefineFlow } from "./refine.js";
import { buildTableModel } from "./table.js";
import { TableState } from "./tablestate.js";
import type { Note, OpKind, RunEvent, Row } from "./types.js";
import { ALL_KINDS } from "./types.js";

const api = new ApiClient("");
const editor = new EditorState();
const tableState = new TableState();
const refine = new RefineFlow();
const decompose = new DecomposeFlow();
const validateDebounce = new Debouncer(400);

let latestRows: Row[] = [];
let notes: Note[] = [];

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

// --- pipeline editor --------------------------------------------------------

function renderEditor(): void {
  const host = $("editor-cards");
  clear(host);
  editor.cards.forEach((card, index) => host.appendChild(renderCard(card, index)));
  const addRow = el("div", { class: "add-row" });
  const select = el("select", { id: "add-kind" });
  for (const kind of ALL_KINDS) select.appendChild(el("option", { value: kind }, kind));
  addRow.appendChild(select);
  addRow.appendChild(el("button", {
    onclick: () => {
      editor.addCard((select as HTMLSelectElement).value as OpKind);
      renderEditor();
      scheduleValidate();
    },
  }, "Add Operation"));
  host.appendChild(addRow);
}

function renderCard(card: OpCard, index: number): HTMLElement {
  const diags = editor.diagnosticsFor(card.name);
  const root = el("div", {
    class: `op-card${card.enabled ? "" : " disabled"}${diags.length ? " invalid" : ""}`,
    draggable: "true",
    ondragstart: (ev) => (ev as DragEvent).dataTransfer?.setData("text/plain", String(index)),
    ondragover: (ev) => ev.preventDefault(),
    ondrop: (ev) => {
      ev.preventDefault();
      const from = Number((ev as DragEvent).dataTransfer?.getData("text/plain"));
      editor.moveCard(from, index);
      renderEditor();
      scheduleValidate();
    },
  });
  const header = el("div", { class: "op-card-header" },
    el("span", { class: "op-kind" }, card.kind),
    el("input", {
      value: card.name,
      onchange: (ev) => {
        editor.updateCard(index, { name: (ev.target as HTMLInputElement).value });
        scheduleValidate();
      },
    }),
    el("label", {},
      el("input", {
        type: "checkbox", ...(card.enabled ? { checked: "" } : {}),
        onchange: () => { editor.toggleCard(index); renderEditor(); scheduleValidate(); },
      }), "on"),
    el("button", { onclick: () => { openRefineDialog(card.name); } }, "Improve"),
    el("button", { onclick: () => { editor.removeCard(index); renderEditor(); scheduleValidate(); } }, "✕"),
  );
  root.appendChild(header);

  const body = el("div", { class: "op-card-body" });
  const textArea = (value: string, field: keyof OpCard, placeholder: string) =>
    el("textarea", {
      placeholder,
      oninput: (ev) => {
        editor.updateCard(index, { [field]: (ev.target as HTMLTextAreaElement).value } as Partial<OpCard>);
        scheduleValidate();
      },
    }, value);

  if (["map", "filter", "reduce"].includes(card.kind)) {
    body.appendChild(textArea(card.prompt, "prompt", "prompt with {{ input.attr }}"));
    body.appendChild(renderSchemaEditor(card, index));
  }
  if (card.kind === "reduce" || card.kind === "code_reduce") {
    body.appendChild(labeled("group by", el("input", {
      value: card.reduceKey,
      onchange: (ev) => {
        editor.updateCard(index, { reduceKey: (ev.target as HTMLInputElement).value });
        scheduleValidate();
      },
    })));
  }
  if (card.kind === "resolve") {
    body.appendChild(labeled("target attribute", el("input", {
      value: card.targetAttribute,
      onchange: (ev) => {
        editor.updateCard(index, { targetAttribute: (ev.target as HTMLInputElement).value });
        scheduleValidate();
      },
    })));
    body.appendChild(textArea(card.comparePrompt, "comparePrompt",
                              "comparison prompt with {{ input1.attr }} / {{ input2.attr }}"));
    body.appendChild(textArea(card.resolutionPrompt, "resolutionPrompt",
                              "resolution prompt looping over inputs"));
  }
  if (card.kind === "unnest") {
    body.appendChild(labeled("attribute", el("input", {
      value: card.unnestAttribute,
      onchange: (ev) => {
        editor.updateCard(index, { unnestAttribute: (ev.target as HTMLInputElement).value });
        scheduleValidate();
      },
    })));
  }
  if (card.kind === "split") {
    body.appendChild(labeled("attribute", el("input", {
      value: card.splitAttribute,
      onchange: (ev) => {
        editor.updateCard(index, { splitAttribute: (ev.target as HTMLInputElement).value });
        scheduleValidate();
      },
    })));
    body.appendChild(labeled("chunk token budget", el("input", {
      type: "number", value: String(card.chunkTokenBudget),
      onchange: (ev) => {
        editor.updateCard(index, { chunkTokenBudget: Number((ev.target as HTMLInputElement).value) });
        scheduleValidate();
      },
    })));
  }
  if (card.kind.startsWith("code_")) {
    body.appendChild(textArea(card.codeExpr, "codeExpr", "expression, e.g. {n: length(input.xs)}"));
  }
  for (const d of diags) {
    body.appendChild(el("div", { class: "diag" }, `${d.field}: ${d.message}`));
  }
  root.appendChild(body);
  return root;
}

function renderSchemaEditor(card: OpCard, index: number): HTMLElement {
  const host = el("div", { class: "schema-editor" }, el("span", {}, "output schema"));
  card.schema.forEach((field, fi) => {
    const row = el("div", { class: "schema-row" });
    row.appendChild(el("input", {
      value: field.name,
      onchange: (ev) => {
        const schema = [...card.schema];
        schema[fi] = { ...schema[fi], name: (ev.target as HTMLInputElement).value };
        editor.updateCard(index, { schema });
        scheduleValidate();
      },
    }));
    const typeSelect = el("select", {
      onchange: (ev) => {
        const base = (ev.target as HTMLSelectElement).value;
        const schema = [...card.schema];
        schema[fi] = {
          ...schema[fi],
          type: base === "enum" ? { base: "enum", enumValues: ["low", "medium", "high"] }
            : base === "list" ? { base: "list", item: "string" }
            : { base: base as "string" },
        };
        editor.updateCard(index, { schema });
        scheduleValidate();
      },
    });
    for (const base of ["string", "integer", "number", "boolean", "enum", "list"]) {
      const opt = el("option", { value: base }, base);
      if (card.schema[fi].type.base === base) opt.setAttribute("selected", "");
      typeSelect.appendChild(opt);
    }
    row.appendChild(typeSelect);
    row.appendChild(el("button", {
      onclick: () => {
        editor.updateCard(index, { schema: card.schema.filter((_, i) => i !== fi) });
        renderEditor();
        scheduleValidate();
      },
    }, "−"));
    host.appendChild(row);
  });
  host.appendChild(el("button", {
    onclick: () => {
      editor.updateCard(index, {
        schema: [...card.schema, { name: `attr${card.schema.length + 1}`, type: { base: "string" } }],
      });
      renderEditor();
      scheduleValidate();
    },
  }, "+ attribute"));
  return host;
}

function labeled(text: string, input: HTMLElement): HTMLElement {
  return el("label", { class: "labeled" }, text + " ", input);
}

function scheduleValidate(): void {
  validateDebounce.schedule(() => { void saveAndValidate(); });
}

async function saveAndValidate(): Promise<void> {
  try {
    const resp = await api.savePipeline(editor.pipelineId, editor.toSaveBody());
    editor.diagnostics = resp.diagnostics;
    editor.dirty = false;
    renderEditor();
    setStatus(resp.diagnostics.length
      ? `${resp.diagnostics.length} diagnostic(s)` : "saved, valid");
  } catch (e) {
    setStatus(`save failed: ${e}`);
  }
}

// --- runs -------------------------------------------------------------------

async function runPipeline(fresh: boolean): Promise<void> {
  await saveAndValidate();
  if (editor.diagnostics.length) return;
  const sample = editor.sampleRun ? { limit: editor.sampleLimit } : undefined;
  try {
    const { run_id } = await api.startRun(editor.pipelineId, { sample, fresh });
    tableState.runId = run_id;
    setStatus(`run ${run_id} started`);
    await api.streamEvents(run_id, onRunEvent);
    const lastOp = editor.cards.filter((c) => c.enabled).at(-1);
    if (lastOp) {
      tableState.opName = lastOp.name;
      await refreshTable();
    }
    await refreshNotes();
  } catch (e) {
    setStatus(`run failed: ${e}`);
  }
}

function onRunEvent(ev: RunEvent): void {
  if (ev.kind === "doc_done" || ev.kind === "op_started") {
    setStatus(`${ev.op_name ?? ""}: ${ev.done}/${ev.total}`);
  } else if (ev.kind === "op_cached") {
    setStatus(`${ev.op_name}: cached`);
  } else if (ev.kind === "judge_verdict" && ev.payload) {
    const verdict = ev.payload as unknown as Parameters<DecomposeFlow["onJudgeVerdict"]>[0];
    if (decompose.onJudgeVerdict(verdict)) renderToast();
  } else if (ev.kind === "run_done") {
    setStatus("run done");
  }
}

// --- output table -----------------------------------------------------------

async function refreshTable(): Promise<void> {
  if (!tableState.runId || !tableState.opName) return;
  const page = await api.queryOutputs(tableState.runId, tableState.opName,
                                      tableState.toQuery(true));
  latestRows = page.rows;
  const model = buildTableModel(page, tableState.columnWidths);
  const host = $("table-host");
  clear(host);
  const table = el("table", { class: "outputs" });
  const headRow = el("tr", {});
  for (const col of model.columns) {
    const th = el("th", {});
    th.style.minWidth = `${col.widthPx}px`;
    const sortBtn = el("button", {
      class: "sort-btn",
      onclick: () => {
        if (tableState.sort === col.name) {
          tableState.order = tableState.order === "asc" ? "desc" : "asc";
        } else {
          tableState.sort = col.name;
          tableState.order = "asc";
        }
        void refreshTable();
      },
    }, col.name + (tableState.sort === col.name ? (tableState.order === "asc" ? " ↑" : " ↓") : ""));
    th.appendChild(sortBtn);
    if (col.chart) th.appendChild(renderChart(col.chart));
    headRow.appendChild(th);
  }
  headRow.appendChild(el("th", {}, "prompt"));
  table.appendChild(headRow);

  model.rows.forEach((row, ri) => {
    const tr = el("tr", {});
    for (const col of model.columns) {
      tr.appendChild(el("td", {
        onclick: () => openInspector(ri, col.name),
      }, stringifyCell(row[col.name])));
    }
    const prompt = model.prompts[ri];
    tr.appendChild(el("td", { class: "prompt-cell", title: prompt ?? "" },
                      prompt ? "👁" : ""));
    table.appendChild(tr);
  });
  host.appendChild(table);
  window.location.hash = tableState.toUrlHash();
}

// --- inspector --------------------------------------------------------------

function openInspector(rowIndex: number, column: string): void {
  const inspector = new InspectorState(latestRows, tableState.opName, column);
  inspector.index = rowIndex;
  const dialog = $("inspector");
  dialog.style.display = "block";

  const render = () => {
    clear(dialog);
    const row = inspector.current;
    if (!row) return;
    const panel = (r: Row) => {
      const body = el("div", { class: "inspect-panel" });
      for (const [key, value] of Object.entries(r)) {
        body.appendChild(el("div", { class: key === column ? "attr focus" : "attr" },
                            el("b", {}, key + ": "), stringifyCell(value)));
      }
      return body;
    };
    const panes = el("div", { class: "inspect-panes" }, panel(row));
    const compareRow = inspector.compare;
    if (compareRow) panes.appendChild(panel(compareRow));
    const noteInput = el("textarea", { placeholder: "add a note on this attribute…" });
    const tagSelect = el("select", {},
      el("option", { value: "" }, "no tag"),
      ...["red", "green", "yellow", "blue"].map((t) => el("option", { value: t }, t)));
    dialog.appendChild(el("div", { class: "inspect-head" },
      el("span", {}, `${inspector.index + 1}/${inspector.rows.length} — ${row.id}`),
      el("button", { onclick: () => { inspector.prev(); render(); } }, "◀"),
      el("button", { onclick: () => { inspector.next(); render(); } }, "▶"),
      el("button", { onclick: () => { inspector.toggleSplit(); render(); } }, "split"),
      el("button", { onclick: () => { dialog.style.display = "none"; } }, "close"),
    ));
    dialog.appendChild(panes);
    dialog.appendChild(el("div", { class: "note-entry" },
      noteInput, tagSelect,
      el("button", {
        onclick: async () => {
          const comment = (noteInput as HTMLTextAreaElement).value.trim();
          if (!comment) return;
          const tag = (tagSelect as HTMLSelectElement).value || null;
          await inspector.submitNote(api, inspector.noteDraft(comment, tag as never));
          (noteInput as HTMLTextAreaElement).value = "";
          await refreshNotes();
        },
      }, "Add note"),
    ));
  };
  dialog.onkeydown = (ev) => {
    if (inspector.handleKey(ev.key)) {
      ev.preventDefault();
      render();
    }
  };
  render();
}

// --- notes sidebar ------------------------------------------------------------

async function refreshNotes(): Promise<void> {
  const search = ($("note-search") as HTMLInputElement).value.trim();
  const resp = await api.listNotes(search ? { q: search } : {});
  notes = resp.notes;
  const host = $("notes-list");
  clear(host);
  for (const note of notes) {
    host.appendChild(el("div", { class: `note tag-${note.tag ?? "none"}` },
      el("b", {}, `${note.operation_id}.${note.attribute}`),
      note.orphaned ? el("span", { class: "orphan" }, " (orphaned)") : null,
      el("div", {}, note.comment),
      el("button", {
        class: "note-del",
        onclick: async () => { await api.deleteNote(note.id); await refreshNotes(); },
      }, "✕")));
  }
}

// --- refinement dialog ----------------------------------------------------------

function openRefineDialog(opName: string): void {
  const dialog = $("refine-dialog");
  dialog.style.display = "block";
  clear(dialog);
  dialog.appendChild(el("div", {}, `Starting refinement for ${opName}…`));
  refine.onChange = () => renderRefineDialog(opName);
  void refine.start(api, editor.pipelineId, opName);
}

function renderRefineDialog(opName: string): void {
  const dialog = $("refine-dialog");
  clear(dialog);
  if (refine.busy) {
    dialog.appendChild(el("div", {}, "assistant thinking…"));
    return;
  }
  if (refine.error) dialog.appendChild(el("div", { class: "diag" }, refine.error));
  const active = refine.activeNode;
  if (!refine.session || !active) return;

  dialog.appendChild(el("div", { class: "inspect-head" },
    el("b", {}, `Refine ${opName}`),
    el("button", { onclick: () => { $("refine-dialog").style.display = "none"; } }, "close")));
  dialog.appendChild(el("h4", {}, `suggestion (${active.origin})`));
  dialog.appendChild(el("pre", { class: "prompt-view" }, active.prompt));
  if (active.diff) dialog.appendChild(renderLineDiff(active.diff));

  const feedback = el("textarea", { placeholder: "instruct the AI to edit it…" });
  const editArea = el("textarea", { class: "manual-edit" }, active.prompt);
  dialog.appendChild(el("div", { class: "refine-actions" },
    feedback,
    el("button", {
      onclick: () => void refine.sendFeedback(api, (feedback as HTMLTextAreaElement).value),
    }, "Add Feedback"),
    editArea,
    el("button", {
      onclick: () => void refine.manualEdit(api, (editArea as HTMLTextAreaElement).value),
    }, "Save manual edit"),
    el("button", {
      onclick: async () => {
        const pipeline = await refine.accept(api);
        if (pipeline) {
          editor.loadFromServer(pipeline);
          renderEditor();
          $("refine-dialog").style.display = "none";
          setStatus("prompt accepted; downstream steps stale");
        }
      },
    }, "Accept"),
  ));

  const tree = el("div", { class: "revision-tree" }, el("h4", {}, "revision history"));
  for (const row of refine.treeRows()) {
    tree.appendChild(el("div", {
      class: `tree-node${row.active ? " active" : ""}`,
      onclick: () => void refine.checkout(api, row.node.id),
    }, `${"  ".repeat(row.depth)}${row.node.origin}: ${row.node.prompt.slice(0, 60)}`));
  }
  dialog.appendChild(tree);
}

// --- decomposition toast/dialog ----------------------------------------------------

function renderToast(): void {
  const host = $("toast");
  clear(host);
  decompose.onChange = renderDecompose;
  if (decompose.phase === "suggested" && decompose.verdict) {
    host.appendChild(el("div", { class: "toast-card" },
      el("b", {}, `Operation ${decompose.verdict.op_name} may be too complex`),
      el("div", {}, decompose.verdict.reasons[0] ?? ""),
      el("button", { onclick: () => { decompose.openDialog(); renderDecompose(); } }, "Review"),
      el("button", { onclick: () => { decompose.ignore(); renderToast(); } }, "Dismiss")));
  }
}

function renderDecompose(): void {
  const dialog = $("decompose-dialog");
  if (decompose.phase === "idle" || decompose.phase === "suggested" ||
      decompose.phase === "ignored") {
    dialog.style.display = "none";
    renderToast();
    return;
  }
  dialog.style.display = "block";
  clear(dialog);
  const verdict = decompose.verdict;
  dialog.appendChild(el("div", { class: "inspect-head" },
    el("b", {}, `Decompose ${verdict?.op_name ?? ""}?`),
    el("button", { onclick: () => { dialog.style.display = "none"; decompose.ignore(); } }, "close")));
  if (decompose.phase === "dialog" && verdict) {
    for (const reason of verdict.reasons) dialog.appendChild(el("div", {}, "• " + reason));
    dialog.appendChild(el("div", { class: "refine-actions" },
      el("button", { onclick: () => { dialog.style.display = "none"; decompose.ignore(); } }, "Ignore"),
      el("button", {
        onclick: () => void decompose.start(api, editor.pipelineId, verdict.op_name),
      }, "Automatically Decompose")));
  }
  if (decompose.phase === "optimizing" || decompose.phase === "plan_ready" ||
      decompose.phase === "failed") {
    const log = el("pre", { class: "optimize-log" }, decompose.logLines.join("\n"));
    dialog.appendChild(log);
  }
  if (decompose.phase === "plan_ready" && decompose.winner) {
    dialog.appendChild(el("h4", {}, `winning plan: ${decompose.winner.directive}`));
    dialog.appendChild(renderPlanDiff(decompose.planDiff));
    dialog.appendChild(el("button", {
      onclick: async () => {
        const pipeline = await decompose.accept(api, editor.pipelineId);
        editor.loadFromServer(pipeline);
        renderEditor();
        dialog.style.display = "none";
        setStatus("decomposed plan accepted");
      },
    }, "Accept plan"));
  }
  if (decompose.phase === "failed") {
    dialog.appendChild(el("div", { class: "diag" }, decompose.error ?? "failed"));
  }
}

// --- boot ---------------------------------------------------------------------

function setStatus(text: string): void {
  $("status").textContent = text;
}

async function boot(): Promise<void> {
  $("run-btn").addEventListener("click", () => void runPipeline(false));
  $("run-fresh-btn").addEventListener("click", () => void runPipeline(true));
  $("note-search").addEventListener("input", () => void refreshNotes());
  ($("sample-toggle") as HTMLInputElement).addEventListener("change", (ev) => {
    editor.sampleRun = (ev.target as HTMLInputElement).checked;
  });
  $("sample-limit").addEventListener("change", (ev) => {
    editor.sampleLimit = Number((ev.target as HTMLInputElement).value);
  });

  const fromHash = TableState.fromUrlHash(window.location.hash);
  const params = new URLSearchParams(window.location.search);
  const pipelineId = params.get("pipeline") ?? "pipeline";
  editor.pipelineId = pipelineId;
  try {
    const resp = await api.getPipeline(pipelineId);
    editor.loadFromServer(resp.pipeline, resp.diagnostics);
    const stats = await api.getDataset(resp.pipeline.dataset_id).catch(() => null);
    if (stats) {
      $("dataset-panel").textContent =
        `${stats.id}: ${stats.doc_count} documents, attributes: ${stats.attributes.join(", ")}`;
    }
  } catch {
    setStatus("no pipeline yet; add operations and save");
  }
  renderEditor();
  await refreshNotes().catch(() => undefined);
  if (fromHash) {
    Object.assign(tableState, fromHash);
    await refreshTable().catch(() => undefined);
  }
}

if (typeof document !== "undefined" && document.getElementById("editor-cards")) {
  void boot();
}
