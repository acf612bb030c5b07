#!/usr/bin/env python3
"""Walk the decomposition loop on the medical fixture.

The mock judge fails the monolithic extract-everything map and passes the
chunked plan, so the selection streams its reasoning and lands on
split -> map-per-chunk -> unify-reduce.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

from semforge.decompose import generate_candidates, select_plan
from semforge.gateway import Gateway, MockProvider, ModelProfile, load_mock_rules
from semforge.model import load_dataset
from semforge.spec import pipeline_from_yaml, validate_pipeline

FIXTURE = ROOT / "fixtures" / "medical"
PROFILE = ModelProfile("mock-small")


def main() -> int:
    gateway = Gateway(MockProvider(load_mock_rules(FIXTURE / "mock_rules.yaml")))
    pipeline = pipeline_from_yaml((FIXTURE / "pipeline.yaml").read_text())
    dataset = load_dataset(FIXTURE / "transcripts.json", dataset_id="transcripts")
    sample = dataset.docs[:5]

    candidates = generate_candidates(pipeline, "extract_discomfort",
                                     dataset.attribute_names(), gateway,
                                     PROFILE, PROFILE, sample)
    print(f"{len(candidates)} candidate plan(s):")
    for cand in candidates:
        ops = " -> ".join(op.kind for op in cand.replacement_ops)
        print(f"  {cand.id} [{cand.directive}] {ops} "
              f"(~{cand.llm_call_estimate} LLM calls)")

    print("\noptimization log:")
    selection = select_plan(pipeline, "extract_discomfort", candidates, sample,
                            gateway, PROFILE, lambda model: PROFILE,
                            on_log=lambda line: print(f"  | {line}"))

    print(f"\nwinner: {selection.winner.directive}")
    print("plan diff:")
    for entry in selection.diff.entries:
        print(f"  {entry.status:>9}  {entry.name}")
    assert validate_pipeline(selection.substituted, dataset.attribute_names()) == []
    print("substituted pipeline validates cleanly")
    return 0


if __name__ == "__main__":
    sys.exit(main())
