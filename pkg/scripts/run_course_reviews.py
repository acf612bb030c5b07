#!/usr/bin/env python3
"""Run the course-review pipeline end to end on the mock provider.

Shows the full engine loop offline: map extracts complaint themes, resolve
canonicalizes near-duplicate themes, reduce writes one summary per theme.
Run it twice to watch every op come back from the cache.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

from semforge.executor import Engine
from semforge.gateway import Gateway, MockProvider, load_mock_rules
from semforge.model import load_dataset
from semforge.spec import pipeline_from_yaml, validate_pipeline
from semforge.viz import render_text_chart, viz_specs_for_rows

FIXTURE = ROOT / "fixtures" / "course_reviews"


def main() -> int:
    gateway = Gateway(MockProvider(load_mock_rules(FIXTURE / "mock_rules.yaml")))
    pipeline = pipeline_from_yaml((FIXTURE / "pipeline.yaml").read_text())
    dataset = load_dataset(FIXTURE / "reviews.json", dataset_id="reviews")

    diagnostics = validate_pipeline(pipeline, dataset.attribute_names())
    if diagnostics:
        for d in diagnostics:
            print(d, file=sys.stderr)
        return 1

    engine = Engine(gateway, cache_dir=ROOT / ".semforge-cache")
    result = engine.execute(pipeline, dataset)

    print(f"run {result.run_id}: {len(dataset.docs)} reviews")
    for name, st in result.op_stats.items():
        cached = " (cached)" if st.cached else ""
        print(f"  {name}: {st.selectivity_display()}{cached}")
    print(f"provider calls: {gateway.provider.call_count}")

    print("\nper-theme summaries:")
    for doc in result.tables["summarize_by_theme"]:
        print(f"  {doc.attrs['themes']}: {doc.attrs['summary']}")

    print("\ntheme distribution after resolve:")
    rows = [d.attrs for d in result.tables["dedupe_themes"]]
    for spec in viz_specs_for_rows(rows):
        if spec.column == "themes":
            print(render_text_chart(spec))
    return 0


if __name__ == "__main__":
    sys.exit(main())
