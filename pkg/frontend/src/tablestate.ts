// Spreadsheet-viewer state. The whole state reconstructs from the URL hash
// plus server queries, so any table view is deep-linkable.

import { outputsQueryParams, type OutputsQuery } from "./api.js";

export interface CellRef {
  row: number;
  column: string;
}

export class TableState {
  runId = "";
  opName = "";
  page = 1;
  pageSize = 50;
  sort: string | null = null;
  order: "asc" | "desc" = "asc";
  filterAttr: string | null = null;
  filterValue: string | null = null;
  filterMode: "equals" | "contains" = "contains";
  search = "";
  columnWidths: Record<string, number> = {};
  selected: CellRef | null = null;

  toQuery(withPrompts = false): URLSearchParams {
    const q: OutputsQuery = {
      page: this.page,
      pageSize: this.pageSize,
      withPrompts,
    };
    if (this.sort) {
      q.sort = this.sort;
      q.order = this.order;
    }
    if (this.filterAttr !== null && this.filterValue !== null) {
      q.filterAttr = this.filterAttr;
      q.filterValue = this.filterValue;
      q.filterMode = this.filterMode;
    }
    if (this.search) q.search = this.search;
    return outputsQueryParams(q);
  }

  toUrlHash(): string {
    const params = new URLSearchParams();
    params.set("run", this.runId);
    params.set("op", this.opName);
    if (this.page !== 1) params.set("page", String(this.page));
    if (this.pageSize !== 50) params.set("page_size", String(this.pageSize));
    if (this.sort) {
      params.set("sort", this.sort);
      if (this.order !== "asc") params.set("order", this.order);
    }
    if (this.filterAttr !== null && this.filterValue !== null) {
      params.set("fattr", this.filterAttr);
      params.set("fval", this.filterValue);
      if (this.filterMode !== "contains") params.set("fmode", this.filterMode);
    }
    if (this.search) params.set("q", this.search);
    const widths = Object.entries(this.columnWidths)
      .map(([col, px]) => `${encodeURIComponent(col)}:${px}`).join(",");
    if (widths) params.set("w", widths);
    if (this.selected) params.set("sel", `${this.selected.row}:${encodeURIComponent(this.selected.column)}`);
    return "#table/" + params.toString();
  }

  static fromUrlHash(hash: string): TableState | null {
    if (!hash.startsWith("#table/")) return null;
    const params = new URLSearchParams(hash.slice("#table/".length));
    const state = new TableState();
    state.runId = params.get("run") ?? "";
    state.opName = params.get("op") ?? "";
    if (!state.runId || !state.opName) return null;
    state.page = Number(params.get("page") ?? 1);
    state.pageSize = Number(params.get("page_size") ?? 50);
    state.sort = params.get("sort");
    state.order = (params.get("order") ?? "asc") as "asc" | "desc";
    state.filterAttr = params.get("fattr");
    state.filterValue = params.get("fval");
    state.filterMode = (params.get("fmode") ?? "contains") as "equals" | "contains";
    state.search = params.get("q") ?? "";
    const widths = params.get("w");
    if (widths) {
      for (const pair of widths.split(",")) {
        const i = pair.lastIndexOf(":");
        if (i > 0) {
          state.columnWidths[decodeURIComponent(pair.slice(0, i))] = Number(pair.slice(i + 1));
        }
      }
    }
    const sel = params.get("sel");
    if (sel) {
      const i = sel.indexOf(":");
      state.selected = { row: Number(sel.slice(0, i)), column: decodeURIComponent(sel.slice(i + 1)) };
    }
    return state;
  }
}

export interface VirtualWindow {
  start: number;       // first rendered row index
  end: number;         // exclusive
  padTopPx: number;    // spacer above
  padBottomPx: number; // spacer below
}

/** Window of rows to materialize for a virtualized table. */
export function virtualWindow(scrollTop: number, viewportPx: number, rowPx: number,
                              total: number, overscan = 5): VirtualWindow {
  if (total === 0 || rowPx <= 0) return { start: 0, end: 0, padTopPx: 0, padBottomPx: 0 };
  const first = Math.floor(Math.max(0, scrollTop) / rowPx);
  const visible = Math.ceil(viewportPx / rowPx) + 1;
  const start = Math.max(0, first - overscan);
  const end = Math.min(total, first + visible + overscan);
  return {
    start,
    end,
    padTopPx: start * rowPx,
    padBottomPx: (total - end) * rowPx,
  };
}
