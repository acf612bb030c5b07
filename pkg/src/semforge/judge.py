"""Background LLM-as-judge: validate op outputs on a small sample and
diagnose failures.

One verdict call per op (a single prompt over five sampled rows, answered
True/False), and for failures exactly one diagnosis call returning failure
reasons plus suggestions routed as prompt_fix or decompose. Judging never
mutates run outputs or the cache.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any

from .gateway import ChatMessage, Gateway, ModelProfile, ProviderError
from .model import Document
from .spec import OperationSpec
from .templates import stringify

SAMPLE_SIZE = 5
EXCERPT_CHARS = 400

GENERIC_FAILURE_NOTE = ("The outputs for this operation may not satisfy its "
                        "instruction; review a few rows by hand.")


@dataclass
class JudgeVerdict:
    run_id: str
    op_name: str
    sampled_row_ids: list[str]
    passed: bool
    reasons: list[str] = field(default_factory=list)
    suggestions: list[dict[str, str]] = field(default_factory=list)  # {text, tag}

    def to_obj(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "op_name": self.op_name,
            "sampled_row_ids": self.sampled_row_ids,
            "pass": self.passed,
            "reasons": self.reasons,
            "suggestions": self.suggestions,
        }


def sample_rows(run_id: str, rows: list[Document], k: int = SAMPLE_SIZE) -> list[Document]:
    """Deterministic per run id: same run, same sampled rows."""
    if len(rows) <= k:
        return list(rows)
    rnd = random.Random(f"{run_id}:judge")
    picked = sorted(rnd.sample(range(len(rows)), k))
    return [rows[i] for i in picked]


def _excerpt(value: Any) -> str:
    text = stringify(value)
    if len(text) > EXCERPT_CHARS:
        return text[:EXCERPT_CHARS] + " …"
    return text


def _row_block(op: OperationSpec, row: Document, index: int) -> str:
    schema_names = set(op.output_schema.names()) if op.output_schema else set()
    inputs = {k: v for k, v in row.attrs.items()
              if k not in schema_names and not k.startswith("_error.")}
    outputs = {k: v for k, v in row.attrs.items() if k in schema_names}
    lines = [f"--- Row {index + 1} (id {row.id}) ---", "Input excerpt:"]
    lines += [f"  {k}: {_excerpt(v)}" for k, v in inputs.items()]
    lines.append("Output:")
    lines += [f"  {k}: {_excerpt(v)}" for k, v in outputs.items()]
    return "\n".join(lines)


def _verdict_prompt(op: OperationSpec, sampled: list[Document]) -> str:
    schema = json.dumps({n: t.to_text() for n, t in op.output_schema.attrs}) \
        if op.output_schema else "(none)"
    blocks = "\n\n".join(_row_block(op, row, i) for i, row in enumerate(sampled))
    return (
        "You are judging the outputs of one semantic data-processing operation.\n\n"
        f"Operation instruction prompt:\n{op.prompt}\n\n"
        f"Output schema: {schema}\n\n"
        f"Sampled results:\n\n{blocks}\n\n"
        "Do these outputs faithfully satisfy the instruction for their inputs? "
        "Answer with a single word: True or False."
    )


def parse_leading_bool(reply: str) -> bool | None:
    token = reply.strip().split()[0] if reply.strip() else ""
    token = token.strip(".,!:;`'\"").lower()
    if token == "true":
        return True
    if token == "false":
        return False
    return None


def judge_outputs(run_id: str, op: OperationSpec, rows: list[Document],
                  gateway: Gateway, profile: ModelProfile) -> JudgeVerdict | None:
    """Verdict for one op's outputs, or None when the provider fails or the
    reply stays unparseable after one re-ask. Never fabricates a pass/fail."""
    if not rows:
        return None
    sampled = sample_rows(run_id, rows)
    prompt = _verdict_prompt(op, sampled)
    messages = [ChatMessage("user", prompt)]
    try:
        reply = gateway.complete_text(messages, profile)
        verdict = parse_leading_bool(reply)
        if verdict is None:
            retry = messages + [
                ChatMessage("assistant", reply),
                ChatMessage("user", "Answer with exactly one word: True or False."),
            ]
            reply = gateway.complete_text(retry, profile)
            verdict = parse_leading_bool(reply)
        if verdict is None:
            return None
    except ProviderError:
        return None
    return JudgeVerdict(run_id, op.name, [r.id for r in sampled], verdict)


_VALID_TAGS = ("prompt_fix", "decompose")


def _coerce_suggestion(item: Any) -> dict[str, str] | None:
    if isinstance(item, str):
        text, tag = item, ""
    elif isinstance(item, dict):
        text = str(item.get("text", "")).strip()
        tag = str(item.get("tag", "")).strip().lower()
    else:
        return None
    if not text:
        return None
    if tag not in _VALID_TAGS:
        lowered = text.lower()
        tag = "decompose" if any(w in lowered for w in ("decompos", "split", "chunk")) \
            else "prompt_fix"
    return {"text": text, "tag": tag}


def diagnose_failure(run_id: str, op: OperationSpec, verdict: JudgeVerdict,
                     gateway: Gateway, profile: ModelProfile) -> JudgeVerdict:
    """Second judge call filling in reasons and suggestions for a failed
    verdict. Provider errors leave reasons empty; the caller still raises a
    notification with a generic message."""
    assert not verdict.passed
    prompt = (
        "The outputs of this semantic operation were judged as not satisfying its "
        "instruction.\n\n"
        f"Operation instruction prompt:\n{op.prompt}\n\n"
        "List the specific failure reasons and improvement suggestions. Reply with one "
        "JSON object: {\"reasons\": [\"...\"], \"suggestions\": [{\"text\": \"...\", "
        "\"tag\": \"prompt_fix\" | \"decompose\"}]}. Use the decompose tag when the "
        "operation is too complex or the documents too long for one call."
    )
    try:
        reply = gateway.complete_text([ChatMessage("user", prompt)], profile)
    except ProviderError:
        return verdict
    reasons: list[str] = []
    suggestions: list[dict[str, str]] = []
    try:
        start, end = reply.find("{"), reply.rfind("}")
        obj = json.loads(reply[start:end + 1]) if start != -1 and end > start else {}
        reasons = [str(r) for r in obj.get("reasons", []) if str(r).strip()]
        for item in obj.get("suggestions", []):
            coerced = _coerce_suggestion(item)
            if coerced:
                suggestions.append(coerced)
    except (json.JSONDecodeError, TypeError, AttributeError):
        pass
    if not reasons:
        reasons = [GENERIC_FAILURE_NOTE]
    if not suggestions:
        suggestions = [{"text": "Tighten the prompt with explicit criteria and examples.",
                        "tag": "prompt_fix"}]
    verdict.reasons = reasons
    verdict.suggestions = suggestions
    return verdict


def judge_run_op(run_id: str, op: OperationSpec, rows: list[Document],
                 gateway: Gateway, profile: ModelProfile) -> JudgeVerdict | None:
    """Verdict + (on failure) diagnosis: at most two judge calls per op."""
    verdict = judge_outputs(run_id, op, rows, gateway, profile)
    if verdict is None or verdict.passed:
        return verdict
    return diagnose_failure(run_id, op, verdict, gateway, profile)
