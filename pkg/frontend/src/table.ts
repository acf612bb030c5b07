// Output table model: column list from the rows' first-appearance order,
// one server VizSpec per header, virtualized body.

import { buildChartModel, type ChartModel } from "./charts.js";
import type { OutputsPage, Row } from "./types.js";

export interface ColumnModel {
  name: string;
  widthPx: number;
  chart: ChartModel | null;
}

export interface TableModel {
  columns: ColumnModel[];
  rows: Row[];
  prompts: (string | null)[];
  total: number;
  page: number;
  pageSize: number;
}

const DEFAULT_WIDTH = 180;

export function buildTableModel(page: OutputsPage,
                                columnWidths: Record<string, number> = {}): TableModel {
  const names: string[] = [];
  for (const row of page.rows) {
    for (const key of Object.keys(row)) {
      if (key !== "id" && !names.includes(key)) names.push(key);
    }
  }
  const vizByColumn = new Map(page.viz.map((v) => [v.column, v]));
  const columns = names.map((name) => ({
    name,
    widthPx: columnWidths[name] ?? DEFAULT_WIDTH,
    chart: vizByColumn.has(name) ? buildChartModel(vizByColumn.get(name)!) : null,
  }));
  return {
    columns,
    rows: page.rows,
    prompts: page.prompts ?? page.rows.map(() => null),
    total: page.total,
    page: page.page,
    pageSize: page.page_size,
  };
}
