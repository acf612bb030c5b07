"""Deterministic visualization specs for output columns.

Dispatch follows the attribute kind: numbers get 7 equal-width bins,
booleans 2 bars, categorical strings the top-7 values, free text a 7-bin
histogram of word counts (multi-word) or character counts (single-word),
lists a histogram of lengths. Mixed columns get no chart.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .model import AttributeKind, infer_attribute_kind, word_count


@dataclass
class VizBin:
    label: str
    count: int


@dataclass
class VizSpec:
    column: str
    chart: str  # histogram7 | bar2_boolean | bar_top7_categories |
    #             histogram7_word_counts | histogram7_char_counts | none
    bins: list[VizBin] = field(default_factory=list)
    overflow_count: int = 0

    def to_obj(self) -> dict[str, Any]:
        return {
            "column": self.column,
            "chart": self.chart,
            "bins": [{"label": b.label, "count": b.count} for b in self.bins],
            "overflow_count": self.overflow_count,
        }


def _format_edge(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return f"{x:.4g}"


def _histogram7(values: list[float], chart: str, column: str) -> VizSpec:
    lo, hi = min(values), max(values)
    if lo == hi:
        return VizSpec(column, chart, [VizBin(f"[{_format_edge(lo)}, {_format_edge(hi)}]", len(values))])
    width = (hi - lo) / 7
    counts = [0] * 7
    for v in values:
        # values exactly on an internal edge belong to the higher bin;
        # the maximum lands in the last bin
        idx = min(6, math.floor((v - lo) / width))
        counts[idx] += 1
    bins = []
    for i in range(7):
        left = lo + i * width
        right = lo + (i + 1) * width
        closer = "]" if i == 6 else ")"
        bins.append(VizBin(f"[{_format_edge(left)}, {_format_edge(right)}{closer}", counts[i]))
    return VizSpec(column, chart, bins)


def viz_spec_for_column(column: str, values: list[Any]) -> VizSpec:
    nonnull = [v for v in values if v is not None]
    kind = infer_attribute_kind(values)
    if kind == AttributeKind.NUMERICAL:
        return _histogram7([float(v) for v in nonnull], "histogram7", column)
    if kind == AttributeKind.BOOLEAN:
        true_n = sum(1 for v in nonnull if v)
        return VizSpec(column, "bar2_boolean",
                       [VizBin("true", true_n), VizBin("false", len(nonnull) - true_n)])
    if kind == AttributeKind.CATEGORICAL_STRING:
        counts = Counter(nonnull)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        top = ranked[:7]
        overflow = sum(c for _, c in ranked[7:])
        return VizSpec(column, "bar_top7_categories",
                       [VizBin(label, c) for label, c in top], overflow_count=overflow)
    if kind == AttributeKind.FREE_TEXT_MULTI_WORD:
        return _histogram7([float(word_count(v)) for v in nonnull],
                           "histogram7_word_counts", column)
    if kind == AttributeKind.FREE_TEXT_SINGLE_WORD:
        return _histogram7([float(len(v)) for v in nonnull],
                           "histogram7_char_counts", column)
    if kind == AttributeKind.LIST_OF_VALUES:
        return _histogram7([float(len(v)) for v in nonnull], "histogram7", column)
    return VizSpec(column, "none")


def viz_specs_for_rows(rows: list[dict[str, Any]]) -> list[VizSpec]:
    """One spec per column, first-appearance column order."""
    columns: dict[str, None] = {}
    for row in rows:
        for k in row:
            columns.setdefault(k)
    return [viz_spec_for_column(col, [row.get(col) for row in rows]) for col in columns]


def render_text_chart(spec: VizSpec, width: int = 40) -> str:
    """Unicode bar rendering for the CLI."""
    if spec.chart == "none" or not spec.bins:
        return f"{spec.column}: (no chart)"
    peak = max(b.count for b in spec.bins) or 1
    lines = [f"{spec.column} [{spec.chart}]"]
    for b in spec.bins:
        bar = "█" * max(0, round(b.count / peak * width))
        lines.append(f"  {b.label:>24} | {bar} {b.count}")
    if spec.overflow_count:
        lines.append(f"  {'(other)':>24} | {spec.overflow_count}")
    return "\n".join(lines)
