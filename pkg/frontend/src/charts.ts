// Column-header charts. Bars come straight from the server's VizSpec,
// never recomputed client-side, so the CLI and UI agree bin-for-bin.

import { el } from "./dom.js";
import type { VizSpec } from "./types.js";

export interface ChartBar {
  label: string;
  count: number;
  fraction: number;  // of the tallest bar, for bar heights
}

export interface ChartModel {
  column: string;
  chart: VizSpec["chart"];
  bars: ChartBar[];
  overflowCount: number;
  totalCount: number;
}

export function buildChartModel(spec: VizSpec): ChartModel {
  const peak = Math.max(1, ...spec.bins.map((b) => b.count));
  return {
    column: spec.column,
    chart: spec.chart,
    bars: spec.bins.map((b) => ({ label: b.label, count: b.count, fraction: b.count / peak })),
    overflowCount: spec.overflow_count,
    totalCount: spec.bins.reduce((acc, b) => acc + b.count, 0) + spec.overflow_count,
  };
}

export function renderChart(model: ChartModel, heightPx = 36): HTMLElement {
  const root = el("div", { class: "col-chart", title: chartTitle(model) });
  if (model.chart === "none" || model.bars.length === 0) {
    root.classList.add("col-chart-empty");
    return root;
  }
  for (const bar of model.bars) {
    const barEl = el("div", {
      class: "col-chart-bar",
      title: `${bar.label}: ${bar.count}`,
    });
    barEl.style.height = `${Math.max(2, Math.round(bar.fraction * heightPx))}px`;
    root.appendChild(barEl);
  }
  if (model.overflowCount > 0) {
    root.appendChild(el("span", { class: "col-chart-overflow" }, `+${model.overflowCount}`));
  }
  return root;
}

function chartTitle(model: ChartModel): string {
  const kind = model.chart.replace(/_/g, " ");
  const lines = model.bars.map((b) => `${b.label}: ${b.count}`);
  if (model.overflowCount > 0) lines.push(`(other): ${model.overflowCount}`);
  return `${model.column} — ${kind}\n${lines.join("\n")}`;
}
