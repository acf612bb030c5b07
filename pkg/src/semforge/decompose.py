"""Operation decomposition: generate candidate rewrites of a failing map,
evaluate them with the judge on a sample, return the best plan.

Two directives plus the unchanged baseline: chunk_map_unify (split the
source text, run the original map per chunk, unify per parent with a
reduce) and attribute_split (one map per output attribute plus a code_map
merge). Evaluation touches only sampled documents and never the main
cache; acceptance is always an explicit user action.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable

from .gateway import ChatMessage, Gateway, ModelProfile, ProviderError
from .judge import judge_outputs
from .model import Document
from .operators import OpContext, run_operation, split_text
from .refinement import TagParseError, extract_tagged
from .spec import (OperationSpec, OutputSchema, PipelineSpec, PlanDiff, SplitConfig,
                   diff_pipelines, validate_pipeline)
from .templates import parse_template


class AllCandidatesFailed(RuntimeError):
    pass


@dataclass
class CandidatePlan:
    id: str
    directive: str  # chunk_map_unify | attribute_split | baseline
    replacement_ops: list[OperationSpec]
    rationale: str
    judge_pass_rate: float = 0.0
    llm_call_estimate: int = 0
    errored: bool = False

    def to_obj(self) -> dict[str, Any]:
        from .spec import op_to_obj
        return {
            "id": self.id,
            "directive": self.directive,
            "replacement_ops": [op_to_obj(op) for op in self.replacement_ops],
            "rationale": self.rationale,
            "judge_pass_rate": self.judge_pass_rate,
            "llm_call_estimate": self.llm_call_estimate,
        }


def _source_attribute(op: OperationSpec) -> str | None:
    """First input.X path in the op's prompt: the attribute holding the text
    the op reads."""
    try:
        template = parse_template(op.prompt or "")
    except Exception:
        return None
    for path in template.referenced_paths():
        if path[0] == "input" and len(path) > 1 and path[1] != "[]":
            return path[1]
    return None


def _builtin_unify_prompt(op: OperationSpec) -> str:
    lines = ["These are partial results from processing chunks of one document.",
             "Combine them into one final result for the whole document, merging "
             "duplicates and keeping every distinct finding.", ""]
    for name, _ in (op.output_schema.attrs if op.output_schema else ()):
        lines.append(f"Partial {name} values:")
        lines.append("{% for item in inputs %}- {{ item." + name + " }}\n{% endfor %}")
    return "\n".join(lines)


def _draft_unify_prompt(op: OperationSpec, gateway: Gateway,
                        assistant_profile: ModelProfile) -> str:
    """Ask the assistant for a unify prompt; unusable replies fall back to
    the built-in, provider failures propagate (the candidate is omitted)."""
    schema_desc = ", ".join(op.output_schema.names()) if op.output_schema else ""
    ask = (
        "A map operation over long documents is being decomposed: documents are split "
        "into chunks, the original operation runs per chunk, and a reduce unifies the "
        "chunk results per document.\n\n"
        f"Original operation prompt:\n{op.prompt}\n\n"
        f"Output attributes: {schema_desc}\n\n"
        "Draft the reduce's unify prompt. It must use the template binding `inputs` "
        "(the list of chunk results) and may loop with "
        "{% for item in inputs %}...{% endfor %}. Return it between <prompt> and "
        "</prompt> tags."
    )
    reply = gateway.complete_text([ChatMessage("user", ask)], assistant_profile)
    try:
        parsed = extract_tagged(reply)
        drafted = parsed["prompt"]
    except TagParseError:
        return _builtin_unify_prompt(op)
    if not drafted:
        return _builtin_unify_prompt(op)
    try:
        t = parse_template(drafted)
        roots = {p[0] for p in t.referenced_paths()}
        if roots - {"inputs", "reduce_key", "accumulated"}:
            return _builtin_unify_prompt(op)
    except Exception:
        return _builtin_unify_prompt(op)
    return drafted


def _draft_attribute_prompt(op: OperationSpec, attr: str, source_attr: str | None,
                            gateway: Gateway, assistant_profile: ModelProfile) -> str:
    fallback = (op.prompt or "") + f"\n\nProduce ONLY the attribute '{attr}'; ignore the others."
    ask = (
        "A map operation extracting several attributes at once is being split into one "
        "operation per attribute.\n\n"
        f"Original prompt:\n{op.prompt}\n\n"
        f"Draft a focused prompt that extracts only '{attr}'. Keep every document "
        "reference (the {{ input.* }} template expressions) intact. Return it between "
        "<prompt> and </prompt> tags."
    )
    reply = gateway.complete_text([ChatMessage("user", ask)], assistant_profile)
    try:
        parsed = extract_tagged(reply)
        drafted = parsed["prompt"]
    except TagParseError:
        return fallback
    if not drafted:
        return fallback
    try:
        t = parse_template(drafted)
        if any(p[0] != "input" for p in t.referenced_paths()):
            return fallback
        if source_attr and not any(len(p) > 1 and p[1] == source_attr
                                   for p in t.referenced_paths()):
            return fallback
    except Exception:
        return fallback
    return drafted


def generate_candidates(pipeline: PipelineSpec, op_name: str,
                        dataset_attrs: list[str], gateway: Gateway,
                        assistant_profile: ModelProfile, op_profile: ModelProfile,
                        sample_docs: list[Document] | None = None) -> list[CandidatePlan]:
    """Up to three candidates: chunked, attribute-split, baseline. Candidates
    whose substituted pipeline fails validation are dropped."""
    op = pipeline.op(op_name)
    if op.kind != "map":
        return []
    candidates: list[CandidatePlan] = []
    source_attr = _source_attribute(op)
    docs = sample_docs or []

    if source_attr is not None:
        budget = max(1, op_profile.context_limit_tokens // 2)
        try:
            unify_prompt = _draft_unify_prompt(op, gateway, assistant_profile)
        except ProviderError:
            unify_prompt = None  # drafting failed: omit this candidate
        if unify_prompt is not None:
            split_op = OperationSpec(name=f"{op.name}_split", kind="split",
                                     split_config=SplitConfig(source_attr, budget))
            chunk_map = OperationSpec(name=f"{op.name}_chunks", kind="map", prompt=op.prompt,
                                      output_schema=op.output_schema, model=op.model)
            unify = OperationSpec(name=f"{op.name}_unify", kind="reduce", prompt=unify_prompt,
                                  output_schema=op.output_schema, reduce_key="_parent_id",
                                  model=op.model)
            chunk_calls = 0
            for doc in docs:
                text = doc.attrs.get(source_attr)
                if isinstance(text, str):
                    chunk_calls += len(split_text(
                        text, budget, lambda t: gateway.count_tokens(t, op_profile)))
                else:
                    chunk_calls += 1
            candidates.append(CandidatePlan(
                id=f"cand-{len(candidates)}",
                directive="chunk_map_unify",
                replacement_ops=[split_op, chunk_map, unify],
                rationale=("Documents may exceed what one call handles reliably: split "
                           f"'{source_attr}' into chunks of at most {budget} tokens, run the "
                           "original operation per chunk, then unify per document."),
                llm_call_estimate=chunk_calls + len(docs),
            ))

    schema = op.output_schema
    if schema is not None and len(schema.attrs) >= 2:
        maps: list[OperationSpec] | None = []
        for attr, stype in schema.attrs:
            try:
                prompt = _draft_attribute_prompt(op, attr, source_attr, gateway,
                                                 assistant_profile)
            except ProviderError:
                maps = None  # drafting failed: omit this candidate
                break
            maps.append(OperationSpec(
                name=f"{op.name}_{attr}", kind="map", prompt=prompt,
                output_schema=OutputSchema(((attr, stype),)), model=op.model))
        if maps is not None:
            merge_expr = "{" + ", ".join(f"{n}: input.{n}" for n in schema.names()) + "}"
            merge = OperationSpec(name=f"{op.name}_merge", kind="code_map",
                                  code_expr=merge_expr)
            candidates.append(CandidatePlan(
                id=f"cand-{len(candidates)}",
                directive="attribute_split",
                replacement_ops=maps + [merge],
                rationale=("Simultaneous extraction of several attributes can degrade "
                           "accuracy: extract each attribute with its own focused "
                           "operation, then merge."),
                llm_call_estimate=len(docs) * len(schema.attrs),
            ))

    candidates.append(CandidatePlan(
        id=f"cand-{len(candidates)}",
        directive="baseline",
        replacement_ops=[OperationSpec(name=op.name, kind=op.kind, prompt=op.prompt,
                                       output_schema=op.output_schema, model=op.model,
                                       sample_limit=op.sample_limit)],
        rationale="The operation unchanged, as the comparison baseline.",
        llm_call_estimate=len(docs),
    ))

    valid = []
    for cand in candidates:
        substituted = pipeline.replace_op(op_name, cand.replacement_ops)
        if not validate_pipeline(substituted, dataset_attrs):
            valid.append(cand)
    return valid


@dataclass
class PlanSelection:
    winner: CandidatePlan
    substituted: PipelineSpec
    diff: PlanDiff
    candidates: list[CandidatePlan]
    log: list[str] = field(default_factory=list)


def select_plan(pipeline: PipelineSpec, op_name: str, candidates: list[CandidatePlan],
                sample_docs: list[Document], gateway: Gateway,
                judge_profile: ModelProfile,
                profile_for: Callable[[str], ModelProfile],
                on_log: Callable[[str], None] | None = None,
                max_parallel: int = 4) -> PlanSelection:
    """Run every candidate on the sample, judge each against the original
    op's instruction, pick the highest pass rate (ties: fewer estimated LLM
    calls, then candidate order). Streams its reasoning as log lines."""
    if not candidates:
        raise AllCandidatesFailed("no candidates to evaluate")
    original_op = pipeline.op(op_name)
    sample = sample_docs[:5]
    log: list[str] = []
    log_lock = threading.Lock()

    def emit(line: str) -> None:
        with log_lock:
            log.append(line)
            if on_log:
                on_log(line)

    emit(f"evaluating {len(candidates)} candidate plan(s) on {len(sample)} sampled document(s)")

    def evaluate(cand: CandidatePlan) -> CandidatePlan:
        emit(f"{cand.id} [{cand.directive}]: {cand.rationale}")
        try:
            docs = [d.copy() for d in sample]
            for op in cand.replacement_ops:
                ctx = OpContext(gateway=gateway,
                                profile=profile_for(op.model or pipeline.default_model),
                                max_parallel=1)
                docs = run_operation(op, docs, ctx)
            verdict = judge_outputs(f"optimize:{cand.id}", original_op, docs,
                                    gateway, judge_profile)
            if verdict is None:
                cand.errored = True
                cand.judge_pass_rate = 0.0
                emit(f"{cand.id}: judge verdict unavailable")
            else:
                cand.judge_pass_rate = 1.0 if verdict.passed else 0.0
                emit(f"{cand.id}: judge pass rate {cand.judge_pass_rate:.2f} "
                     f"over {len(verdict.sampled_row_ids)} rows "
                     f"(estimated {cand.llm_call_estimate} LLM calls)")
        except Exception as e:
            cand.errored = True
            cand.judge_pass_rate = 0.0
            emit(f"{cand.id}: failed ({e})")
        return cand

    with ThreadPoolExecutor(max_workers=min(max_parallel, len(candidates))) as pool:
        futures = [pool.submit(evaluate, c) for c in candidates]
        for fut in as_completed(futures):
            fut.result()

    if all(c.errored for c in candidates):
        emit("every candidate failed; keeping the original pipeline")
        raise AllCandidatesFailed("every candidate errored out")

    order = {c.id: i for i, c in enumerate(candidates)}
    winner = min((c for c in candidates if not c.errored),
                 key=lambda c: (-c.judge_pass_rate, c.llm_call_estimate, order[c.id]))
    substituted = pipeline.replace_op(op_name, winner.replacement_ops)
    diff = diff_pipelines(pipeline, substituted)
    emit(f"winner: {winner.id} [{winner.directive}] with pass rate "
         f"{winner.judge_pass_rate:.2f}")
    return PlanSelection(winner, substituted, diff, candidates, log)
