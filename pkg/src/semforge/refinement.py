"""LLM-assisted prompt refinement: branching revision trees over a
background conversation.

A session seeds the assistant with the op's prompt, schema, sample
documents, and the user's relevant notes; replies carry the new prompt in
<prompt> tags (and optionally a schema in <schema> tags). Every refine,
manual edit, or checkout grows or repoints a single-rooted tree, and
accepting a node rewrites exactly one op in the pipeline.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from typing import Any

from .gateway import ChatMessage, Gateway, ModelProfile
from .model import Document
from .notes import Note
from .spec import OperationSpec, OutputSchema, PipelineSpec, SEMANTIC_KINDS
from .templates import stringify

GUIDELINES = (
    "When suggesting a prompt: be clear, unambiguous, and provide few-shot "
    "examples if possible. Return the full improved prompt between <prompt> and "
    "</prompt> tags. If the output schema should change, return the new schema as "
    "a JSON object of attribute-name to type between <schema> and </schema> tags."
)

MAX_SAMPLE_DOCS = 5


class NoSemanticOp(ValueError):
    pass


class UnknownNode(KeyError):
    pass


class TagParseError(ValueError):
    def __init__(self, which_tag: str, reason: str):
        super().__init__(f"<{which_tag}> tags: {reason}")
        self.which_tag = which_tag


@dataclass
class RevisionNode:
    id: str
    parent: str | None
    prompt: str
    schema_change: OutputSchema | None = None
    origin: str = "ai_suggested"  # original | ai_suggested | manual_edit | user_feedback
    created_at: float = 0.0

    def to_obj(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "parent": self.parent,
            "prompt": self.prompt,
            "schema_change": self.schema_change.to_obj() if self.schema_change else None,
            "origin": self.origin,
            "created_at": self.created_at,
        }


@dataclass
class RefinementSession:
    id: str
    pipeline_id: str
    operation_id: str
    conversation: list[ChatMessage]
    tree: list[RevisionNode]
    active_node: str
    seed_spans: list[tuple[int, int, int]] = field(default_factory=list)
    _counter: int = 0

    def node(self, node_id: str) -> RevisionNode:
        for n in self.tree:
            if n.id == node_id:
                return n
        raise UnknownNode(node_id)

    def root(self) -> RevisionNode:
        return self.tree[0]

    def children(self, node_id: str) -> list[RevisionNode]:
        return [n for n in self.tree if n.parent == node_id]

    def next_node_id(self) -> str:
        nid = f"n{self._counter}"
        self._counter += 1
        return nid

    def to_obj(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "pipeline_id": self.pipeline_id,
            "operation_id": self.operation_id,
            "conversation": [m.to_obj() for m in self.conversation],
            "tree": [n.to_obj() for n in self.tree],
            "active_node": self.active_node,
            "seed_spans": [list(s) for s in self.seed_spans],
            "counter": self._counter,
        }

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "RefinementSession":
        nodes = []
        for n in obj["tree"]:
            nodes.append(RevisionNode(
                n["id"], n["parent"], n["prompt"],
                OutputSchema.from_obj(n["schema_change"]) if n.get("schema_change") else None,
                n.get("origin", "ai_suggested"), n.get("created_at", 0.0)))
        return cls(
            id=obj["id"],
            pipeline_id=obj["pipeline_id"],
            operation_id=obj["operation_id"],
            conversation=[ChatMessage(m["role"], m["content"]) for m in obj["conversation"]],
            tree=nodes,
            active_node=obj["active_node"],
            seed_spans=[tuple(s) for s in obj.get("seed_spans", [])],
            _counter=obj.get("counter", len(nodes)),
        )


# --- tag extraction -----------------------------------------------------------

def _extract_between(reply: str, tag: str) -> str | None:
    open_tag, close_tag = f"<{tag}>", f"</{tag}>"
    first_open = reply.find(open_tag)
    first_close = reply.find(close_tag)
    if first_open == -1 and first_close == -1:
        return None
    if first_open == -1:
        raise TagParseError(tag, "closing tag without an opener")
    if first_close == -1:
        raise TagParseError(tag, "unclosed tag")
    if first_close < first_open:
        raise TagParseError(tag, "closing tag before opener")
    inner = reply[first_open + len(open_tag):first_close]
    if open_tag in inner:
        raise TagParseError(tag, "nested opener")
    return inner.strip()


def extract_tagged(reply: str) -> dict[str, Any]:
    """Pull the <prompt> and <schema> payloads out of an assistant reply.

    Absent tags yield None fields; unbalanced or nested tags raise
    TagParseError naming the offending tag.
    """
    prompt = _extract_between(reply, "prompt")
    schema_text = _extract_between(reply, "schema")
    schema = None
    if schema_text is not None:
        try:
            obj = json.loads(schema_text)
            if not isinstance(obj, dict) or not obj:
                raise ValueError("schema must be a nonempty JSON object")
            schema = OutputSchema.of({k: str(v) for k, v in obj.items()})
        except (ValueError, TypeError) as e:
            raise TagParseError("schema", f"unparseable schema payload: {e}") from e
    return {"prompt": prompt, "schema": schema}


# --- seed message --------------------------------------------------------------

def _format_schema(schema: OutputSchema | None) -> str:
    if schema is None:
        return "(none)"
    return json.dumps({n: t.to_text() for n, t in schema.attrs}, indent=2)


def relevant_notes(notes: list[Note], op: OperationSpec) -> list[Note]:
    """Notes on this op, plus attribute-level notes on its output attributes."""
    schema_attrs = set(op.output_schema.names()) if op.output_schema else set()
    return [n for n in notes
            if n.operation_id == op.name or n.attribute in schema_attrs]


def build_seed_message(op: OperationSpec, sample_docs: list[Document],
                       notes: list[Note], row_lookup: dict[str, Document],
                       extra_instructions: str | None = None
                       ) -> tuple[str, list[tuple[int, int, int]]]:
    """Compose the seeding context message; returns (text, sample-doc spans)
    so context fitting can shrink exactly the embedded documents."""
    parts: list[str] = []
    spans: list[tuple[int, int, int]] = []

    def add(text: str) -> None:
        parts.append(text)

    def add_doc(label: str, doc: Document) -> None:
        add(f"{label}:\n")
        body = "\n".join(f"{k}: {stringify(v)}" for k, v in doc.attrs.items())
        start = sum(len(p) for p in parts)
        spans.append((0, start, start + len(body)))
        add(body)
        add("\n\n")

    add("You are helping improve one operation of a semantic data-processing pipeline.\n\n")
    add(f"Current prompt for operation '{op.name}' (kind {op.kind}):\n{op.prompt}\n\n")
    add(f"Output schema:\n{_format_schema(op.output_schema)}\n\n")

    picked = sample_docs[:MAX_SAMPLE_DOCS]
    if picked:
        add("Sample documents:\n\n")
        for i, doc in enumerate(picked):
            add_doc(f"Document {i + 1} (id {doc.id})", doc)

    rel = notes
    if rel:
        add("User notes on this operation:\n")
        for n in rel:
            tag = f" [{n.tag}]" if n.tag else ""
            add(f"- ({n.attribute}){tag} {n.comment}\n")
        add("\n")
        referenced = [row_lookup[n.row_ref] for n in rel
                      if n.row_ref and n.row_ref in row_lookup]
        deduped: list[Document] = []
        seen: set[str] = set()
        for doc in referenced:
            if doc.id not in seen:
                seen.add(doc.id)
                deduped.append(doc)
        for i, doc in enumerate(deduped[:MAX_SAMPLE_DOCS]):
            add_doc(f"Document referenced by a note (id {doc.id})", doc)

    add(GUIDELINES)
    if extra_instructions:
        add(f"\n\nAdditional instructions from the user:\n{extra_instructions}")
    return "".join(parts), spans


# --- session operations --------------------------------------------------------

def start_session(pipeline: PipelineSpec, op_id: str, sample_docs: list[Document],
                  notes: list[Note], gateway: Gateway, profile: ModelProfile,
                  row_lookup: dict[str, Document] | None = None,
                  extra_instructions: str | None = None,
                  session_id: str | None = None) -> RefinementSession:
    op = pipeline.op(op_id)
    if op.kind not in SEMANTIC_KINDS or op.prompt is None:
        raise NoSemanticOp(f"operation {op_id!r} has no refinable prompt")
    rel = relevant_notes(notes, op)
    seed_text, spans = build_seed_message(op, sample_docs, rel, row_lookup or {},
                                          extra_instructions)
    session = RefinementSession(
        id=session_id or uuid.uuid4().hex,
        pipeline_id=pipeline.id,
        operation_id=op_id,
        conversation=[ChatMessage("user", seed_text)],
        tree=[],
        active_node="",
        seed_spans=spans,
    )
    root = RevisionNode(session.next_node_id(), None, op.prompt, None, "original",
                        time.time())
    session.tree.append(root)
    session.active_node = root.id

    reply = _ask(session, gateway, profile)
    parsed = extract_tagged(reply)
    if parsed["prompt"] is None:
        raise TagParseError("prompt", "assistant reply carried no <prompt> payload")
    child = RevisionNode(session.next_node_id(), root.id, parsed["prompt"],
                         parsed["schema"], "ai_suggested", time.time())
    session.tree.append(child)
    session.active_node = child.id
    return session


def _ask(session: RefinementSession, gateway: Gateway, profile: ModelProfile) -> str:
    fitted = gateway.fit_to_context(session.conversation, session.seed_spans,
                                    profile.context_limit_tokens, profile)
    reply = gateway.complete_text(fitted, profile)
    session.conversation.append(ChatMessage("assistant", reply))
    return reply


def refine(session: RefinementSession, user_feedback: str, gateway: Gateway,
           profile: ModelProfile) -> RevisionNode:
    """Feedback goes into the conversation; the reply becomes a child of the
    active node and the session advances to it."""
    session.conversation.append(ChatMessage("user", user_feedback))
    reply = _ask(session, gateway, profile)
    parsed = extract_tagged(reply)
    if parsed["prompt"] is None:
        raise TagParseError("prompt", "assistant reply carried no <prompt> payload")
    node = RevisionNode(session.next_node_id(), session.active_node, parsed["prompt"],
                        parsed["schema"], "user_feedback", time.time())
    session.tree.append(node)
    session.active_node = node.id
    return node


def apply_manual_edit(session: RefinementSession, edited_prompt: str) -> RevisionNode:
    """Record a direct edit: canonical change message in the conversation,
    manual_edit child in the tree."""
    old = session.node(session.active_node).prompt
    session.conversation.append(ChatMessage(
        "user",
        f"I manually edited the prompt. It changed from:\n{old}\n\nto:\n{edited_prompt}"))
    node = RevisionNode(session.next_node_id(), session.active_node, edited_prompt,
                        None, "manual_edit", time.time())
    session.tree.append(node)
    session.active_node = node.id
    return node


def checkout(session: RefinementSession, node_id: str) -> RevisionNode:
    """Point the session at an earlier revision; the tree is untouched and
    the next refine/edit branches from here."""
    node = session.node(node_id)
    session.active_node = node.id
    return node


def accept(session: RefinementSession, pipeline: PipelineSpec,
           node_id: str | None = None) -> PipelineSpec:
    """Write the node's prompt (and schema, when present) back into the op;
    exactly one op changes."""
    node = session.node(node_id or session.active_node)
    op = pipeline.op(session.operation_id)
    new_op = op.with_prompt(node.prompt, node.schema_change)
    return pipeline.replace_op(session.operation_id, [new_op])


def tree_is_wellformed(session: RefinementSession) -> bool:
    """Exactly one root, no cycles, every node reachable from the root."""
    roots = [n for n in session.tree if n.parent is None]
    if len(roots) != 1:
        return False
    ids = {n.id for n in session.tree}
    if len(ids) != len(session.tree):
        return False
    children: dict[str, list[str]] = {}
    for n in session.tree:
        if n.parent is not None and n.parent not in ids:
            return False
        children.setdefault(n.parent, []).append(n.id)
    reached: set[str] = set()
    stack = [roots[0].id]
    while stack:
        cur = stack.pop()
        if cur in reached:
            return False  # cycle
        reached.add(cur)
        stack.extend(children.get(cur, []))
    return reached == ids


# --- prompt diff ----------------------------------------------------------------

def line_diff(old: str, new: str) -> list[tuple[str, str]]:
    """Line-based LCS diff: (op, line) with op in {equal, delete, insert}."""
    a, b = old.splitlines(), new.splitlines()
    m, n = len(a), len(b)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            if a[i] == b[j]:
                dp[i][j] = dp[i + 1][j + 1] + 1
            else:
                dp[i][j] = max(dp[i + 1][j], dp[i][j + 1])
    out: list[tuple[str, str]] = []
    i = j = 0
    while i < m and j < n:
        if a[i] == b[j]:
            out.append(("equal", a[i]))
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            out.append(("delete", a[i]))
            i += 1
        else:
            out.append(("insert", b[j]))
            j += 1
    out.extend(("delete", line) for line in a[i:])
    out.extend(("insert", line) for line in b[j:])
    return out
