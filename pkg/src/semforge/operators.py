"""Operator semantics: map, filter, reduce, resolve, unnest, split, gather,
and the code-based variants.

Every operator is order-preserving over its input enumeration and, with a
deterministic provider, a pure function of (spec, docs). Per-document
failures never abort an operation: the document is marked with an
`_error.<opname>` attribute and the run continues (filters fail open).
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable

from . import codexpr
from .gateway import Gateway, ModelProfile, ProviderError, SchemaViolation, ChatMessage
from .model import Document, canonical_json
from .spec import OperationSpec, OutputSchema
from .templates import RenderError, Template, parse_template

MAX_RESOLVE_COMPARISONS = 10_000

_BOOL_SCHEMA = OutputSchema.of({"match": "boolean"})


class ResolveTooManyPairs(ValueError):
    def __init__(self, pairs: int):
        super().__init__(
            f"resolve would need {pairs} pairwise comparisons (cap {MAX_RESOLVE_COMPARISONS}); "
            "raise blocking_threshold to prune candidate pairs")
        self.pairs = pairs


@dataclass
class OpError:
    doc_id: str
    message: str


@dataclass
class OpContext:
    gateway: Gateway
    profile: ModelProfile
    max_parallel: int = 1
    on_progress: Callable[[int, int], None] | None = None
    errors: list[OpError] = field(default_factory=list)

    def _tick(self, done: int, total: int) -> None:
        if self.on_progress:
            self.on_progress(done, total)


def _error_key(op: OperationSpec) -> str:
    return f"_error.{op.name}"


def _mark_error(doc: Document, op: OperationSpec, message: str, ctx: OpContext) -> Document:
    out = doc.copy()
    out.attrs[_error_key(op)] = message
    ctx.errors.append(OpError(doc.id, message))
    return out


def _map_parallel(fn: Callable[[int], Any], total: int, ctx: OpContext) -> list[Any]:
    """Apply fn over range(total) with bounded workers; results input-ordered,
    progress reported as completions land."""
    if total == 0:
        return []
    results: list[Any] = [None] * total
    if ctx.max_parallel <= 1:
        for i in range(total):
            results[i] = fn(i)
            ctx._tick(i + 1, total)
        return results
    done = 0
    with ThreadPoolExecutor(max_workers=ctx.max_parallel) as pool:
        futures = {pool.submit(fn, i): i for i in range(total)}
        for fut in as_completed(futures):
            i = futures[fut]
            results[i] = fut.result()
            done += 1
            ctx._tick(done, total)
    return results


# --- semantic operators ------------------------------------------------------

def run_map(op: OperationSpec, docs: list[Document], ctx: OpContext) -> list[Document]:
    template = parse_template(op.prompt or "")

    def one(i: int) -> Document:
        doc = docs[i]
        try:
            prompt = template.render({"input": doc.attrs})
            result = ctx.gateway.complete_structured(
                [ChatMessage("user", prompt)], op.output_schema, ctx.profile)
        except (RenderError, ProviderError, SchemaViolation) as e:
            return _mark_error(doc, op, str(e), ctx)
        out = doc.copy()
        out.attrs.update(result)
        return out

    return _map_parallel(one, len(docs), ctx)


def run_filter(op: OperationSpec, docs: list[Document], ctx: OpContext) -> list[Document]:
    template = parse_template(op.prompt or "")
    decision_attr = op.output_schema.attrs[0][0]
    schema = OutputSchema.of({decision_attr: "boolean"})

    def one(i: int) -> tuple[bool, Document]:
        doc = docs[i]
        try:
            prompt = template.render({"input": doc.attrs})
            result = ctx.gateway.complete_structured(
                [ChatMessage("user", prompt)], schema, ctx.profile)
            return bool(result[decision_attr]), doc
        except (RenderError, ProviderError, SchemaViolation) as e:
            # fail open: dropping data on a transient error is worse
            return True, _mark_error(doc, op, str(e), ctx)

    decided = _map_parallel(one, len(docs), ctx)
    return [doc for keep, doc in decided if keep]


def _group_docs(docs: list[Document], key: str) -> list[tuple[Any, list[Document]]]:
    """Partition by canonical group-key bytes, first-appearance order."""
    groups: dict[str, tuple[Any, list[Document]]] = {}
    for doc in docs:
        value = doc.attrs.get(key)
        ck = canonical_json(value)
        if ck not in groups:
            groups[ck] = (value, [])
        groups[ck][1].append(doc)
    return list(groups.values())


def _group_doc_id(op: OperationSpec, key_value: Any) -> str:
    digest = hashlib.sha256(canonical_json(key_value).encode("utf-8")).hexdigest()[:16]
    return f"{op.name}:{digest}"


def _render_reduce_prompt(template: Template, inputs: list[dict[str, Any]],
                          key_value: Any, accumulated: dict[str, Any] | None) -> str:
    rendered = template.render({
        "inputs": inputs,
        "reduce_key": key_value,
        "accumulated": accumulated,
    })
    if accumulated is not None and not template.references_root("accumulated"):
        rendered += "\n\nPreviously accumulated output: " + canonical_json(accumulated)
    return rendered


def run_reduce(op: OperationSpec, docs: list[Document], ctx: OpContext) -> list[Document]:
    template = parse_template(op.prompt or "")
    out: list[Document] = []
    groups = _group_docs(docs, op.reduce_key)
    for gi, (key_value, group) in enumerate(groups):
        try:
            result = _reduce_group(op, template, key_value, group, ctx)
            attrs: dict[str, Any] = {op.reduce_key: key_value}
            attrs.update(result)
            out.append(Document(_group_doc_id(op, key_value), attrs))
        except (RenderError, ProviderError, SchemaViolation) as e:
            doc = Document(_group_doc_id(op, key_value), {op.reduce_key: key_value})
            out.append(_mark_error(doc, op, str(e), ctx))
        ctx._tick(gi + 1, len(groups))
    return out


def _reduce_group(op: OperationSpec, template: Template, key_value: Any,
                  group: list[Document], ctx: OpContext) -> dict[str, Any]:
    limit = ctx.profile.context_limit_tokens
    inputs = [doc.attrs for doc in group]

    def fits(batch: list[dict[str, Any]], acc: dict[str, Any] | None) -> bool:
        rendered = _render_reduce_prompt(template, batch, key_value, acc)
        return ctx.gateway.count_tokens(rendered, ctx.profile) <= limit

    def ask(batch: list[dict[str, Any]], acc: dict[str, Any] | None) -> dict[str, Any]:
        rendered = _render_reduce_prompt(template, batch, key_value, acc)
        return ctx.gateway.complete_structured(
            [ChatMessage("user", rendered)], op.output_schema, ctx.profile)

    if fits(inputs, None):
        return ask(inputs, None)

    # fold: max-size prefix batches that fit, accumulator threaded through
    acc: dict[str, Any] | None = None
    remaining = inputs
    while remaining:
        lo, hi = 1, len(remaining)
        best = 1
        while lo <= hi:
            mid = (lo + hi) // 2
            if fits(remaining[:mid], acc):
                best = mid
                lo = mid + 1
            else:
                hi = mid - 1
        acc = ask(remaining[:best], acc)
        remaining = remaining[best:]
    return acc or {}


def predicted_reduce_batches(op: OperationSpec, group: list[Document], ctx: OpContext,
                             probe_output: dict[str, Any] | None = None) -> int:
    """Independent count of fold batches (used by tests and call estimates).

    `probe_output` stands in for the accumulator when sizing later batches;
    defaults to an empty map, matching schema-shaped small outputs.
    """
    template = parse_template(op.prompt or "")
    limit = ctx.profile.context_limit_tokens
    key_value = group[0].attrs.get(op.reduce_key) if group else None
    inputs = [doc.attrs for doc in group]
    rendered = _render_reduce_prompt(template, inputs, key_value, None)
    if ctx.gateway.count_tokens(rendered, ctx.profile) <= limit:
        return 1
    acc = probe_output if probe_output is not None else {}
    batches = 0
    remaining = inputs
    current_acc: dict[str, Any] | None = None
    while remaining:
        lo, hi = 1, len(remaining)
        best = 1
        while lo <= hi:
            mid = (lo + hi) // 2
            text = _render_reduce_prompt(template, remaining[:mid], key_value, current_acc)
            if ctx.gateway.count_tokens(text, ctx.profile) <= limit:
                best = mid
                lo = mid + 1
            else:
                hi = mid - 1
        batches += 1
        remaining = remaining[best:]
        current_acc = acc
    return batches


# --- resolve -----------------------------------------------------------------

def _token_set(value: str) -> frozenset[str]:
    import re as _re
    return frozenset(_re.findall(r"[a-z0-9]+", value.lower()))


def jaccard(a: str, b: str) -> float:
    ta, tb = _token_set(a), _token_set(b)
    if not ta and not tb:
        return 1.0
    union = ta | tb
    return len(ta & tb) / len(union)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller index as root so cluster order is stable
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


def cluster_by_matches(n: int, matches: list[tuple[int, int]]) -> list[list[int]]:
    """Transitive closure of accepted pairs; clusters ordered by first member."""
    uf = _UnionFind(n)
    for a, b in matches:
        uf.union(a, b)
    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(uf.find(i), []).append(i)
    return [clusters[root] for root in sorted(clusters)]


def run_resolve(op: OperationSpec, docs: list[Document], ctx: OpContext) -> list[Document]:
    rc = op.resolve_config
    target = rc.target_attribute
    compare_t = parse_template(rc.compare_prompt)
    resolution_t = parse_template(rc.resolution_prompt)

    # element-wise over list-valued targets: resolve the multiset of values
    values: list[str] = []
    seen: set[str] = set()
    for doc in docs:
        v = doc.attrs.get(target)
        elements = v if isinstance(v, list) else [v]
        for el in elements:
            if el is None:
                continue
            s = el if isinstance(el, str) else canonical_json(el)
            if s not in seen:
                seen.add(s)
                values.append(s)

    if len(values) < 2:
        ctx._tick(len(docs), len(docs))
        return [doc.copy() for doc in docs]

    pairs = [(i, j) for i in range(len(values)) for j in range(i + 1, len(values))
             if jaccard(values[i], values[j]) >= rc.blocking_threshold]
    if len(pairs) > MAX_RESOLVE_COMPARISONS:
        raise ResolveTooManyPairs(len(pairs))

    def compare(k: int) -> bool:
        i, j = pairs[k]
        try:
            prompt = compare_t.render({"input1": {target: values[i]},
                                       "input2": {target: values[j]}})
            result = ctx.gateway.complete_structured(
                [ChatMessage("user", prompt)], _BOOL_SCHEMA, ctx.profile)
            return bool(result["match"])
        except (RenderError, ProviderError, SchemaViolation):
            return False  # comparison errors count as non-match

    accepted = _map_parallel(compare, len(pairs), ctx)
    matches = [pairs[k] for k in range(len(pairs)) if accepted[k]]
    clusters = cluster_by_matches(len(values), matches)

    canonical: dict[str, str] = {}
    failed_values: set[str] = set()
    for cluster in clusters:
        if len(cluster) < 2:
            continue
        members = [values[i] for i in cluster]
        try:
            prompt = resolution_t.render({"inputs": [{target: m} for m in members]})
            result = ctx.gateway.complete_structured(
                [ChatMessage("user", prompt)], OutputSchema.of({target: "string"}), ctx.profile)
            for m in members:
                canonical[m] = result[target]
        except (RenderError, ProviderError, SchemaViolation):
            failed_values.update(members)  # leave values unchanged, mark docs

    out = []
    for doc in docs:
        v = doc.attrs.get(target)
        new = doc.copy()
        touched_failure = False
        if isinstance(v, list):
            rewritten = []
            for el in v:
                s = el if isinstance(el, str) else canonical_json(el)
                if s in failed_values:
                    touched_failure = True
                rewritten.append(canonical.get(s, el))
            new.attrs[target] = rewritten
        elif v is not None:
            s = v if isinstance(v, str) else canonical_json(v)
            if s in failed_values:
                touched_failure = True
            new.attrs[target] = canonical.get(s, v)
        if touched_failure:
            new.attrs[_error_key(op)] = "resolution call failed for this value's cluster"
            ctx.errors.append(OpError(doc.id, "resolution call failed"))
        out.append(new)
    return out


# --- structural operators ----------------------------------------------------

def run_unnest(op: OperationSpec, docs: list[Document]) -> list[Document]:
    attr = op.unnest_attribute
    out = []
    for doc in docs:
        v = doc.attrs.get(attr)
        elements = v if isinstance(v, list) else ([v] if v is not None else [])
        for i, el in enumerate(elements):
            child = Document(f"{doc.id}#{i}", dict(doc.attrs))
            child.attrs[attr] = el
            out.append(child)
    return out


def split_text(text: str, budget: int, count_tokens: Callable[[str], int]) -> list[str]:
    """Partition text into chunks of at most `budget` tokens, breaking at the
    nearest whitespace at or before the budget. Concatenation is exact."""
    if count_tokens(text) <= budget:
        return [text]
    chunks = []
    remaining = text
    while remaining:
        if count_tokens(remaining) <= budget:
            chunks.append(remaining)
            break
        lo, hi = 1, len(remaining)
        best = 1
        while lo <= hi:
            mid = (lo + hi) // 2
            if count_tokens(remaining[:mid]) <= budget:
                best = mid
                lo = mid + 1
            else:
                hi = mid - 1
        cut = best
        ws = -1
        for i in range(best - 1, -1, -1):
            if remaining[i].isspace():
                ws = i
                break
        if ws > 0:
            cut = ws + 1  # include the boundary whitespace in this chunk
        chunks.append(remaining[:cut])
        remaining = remaining[cut:]
    return chunks


def run_split(op: OperationSpec, docs: list[Document], ctx: OpContext) -> list[Document]:
    sc = op.split_config
    out = []
    for doc in docs:
        text = doc.attrs.get(sc.attribute)
        if not isinstance(text, str):
            text = "" if text is None else canonical_json(text)
        chunks = split_text(text, sc.chunk_token_budget,
                            lambda t: ctx.gateway.count_tokens(t, ctx.profile))
        for i, chunk in enumerate(chunks):
            child = Document(f"{doc.id}#{i}", dict(doc.attrs))
            child.attrs[sc.attribute] = chunk
            child.attrs["_chunk_index"] = i
            child.attrs["_parent_id"] = doc.id
            out.append(child)
    return out


def run_gather(docs: list[Document]) -> list[Document]:
    """Regroup chunk docs by _parent_id (first-appearance parent order,
    chunk order within), readying them for a reduce keyed on _parent_id."""
    order: dict[Any, list[Document]] = {}
    for doc in docs:
        parent = doc.attrs.get("_parent_id", doc.id)
        order.setdefault(parent, []).append(doc)
    out = []
    for parent, group in order.items():
        out.extend(sorted(group, key=lambda d: d.attrs.get("_chunk_index", 0)))
    return out


# --- code operators ----------------------------------------------------------

def run_code_op(op: OperationSpec, docs: list[Document], ctx: OpContext) -> list[Document]:
    expr = codexpr.parse(op.code_expr or "")
    if op.kind == "code_map":
        out = []
        for i, doc in enumerate(docs):
            try:
                result = codexpr.evaluate(expr, {"input": doc.attrs})
                if not isinstance(result, dict):
                    raise codexpr.CodeEvalError("code_map expression must produce a map")
                new = doc.copy()
                new.attrs.update(result)
                out.append(new)
            except codexpr.CodeEvalError as e:
                out.append(_mark_error(doc, op, str(e), ctx))
            ctx._tick(i + 1, len(docs))
        return out
    if op.kind == "code_filter":
        out = []
        for i, doc in enumerate(docs):
            try:
                keep = codexpr.evaluate(expr, {"input": doc.attrs})
                if not isinstance(keep, bool):
                    raise codexpr.CodeEvalError("code_filter expression must produce a boolean")
                if keep:
                    out.append(doc.copy())
            except codexpr.CodeEvalError as e:
                out.append(_mark_error(doc, op, str(e), ctx))  # fail open
            ctx._tick(i + 1, len(docs))
        return out
    if op.kind == "code_reduce":
        out = []
        groups = _group_docs(docs, op.reduce_key)
        for gi, (key_value, group) in enumerate(groups):
            try:
                result = codexpr.evaluate(expr, {
                    "inputs": [d.attrs for d in group],
                    "reduce_key": key_value,
                })
                if not isinstance(result, dict):
                    raise codexpr.CodeEvalError("code_reduce expression must produce a map")
                attrs: dict[str, Any] = {op.reduce_key: key_value}
                attrs.update(result)
                out.append(Document(_group_doc_id(op, key_value), attrs))
            except codexpr.CodeEvalError as e:
                doc = Document(_group_doc_id(op, key_value), {op.reduce_key: key_value})
                out.append(_mark_error(doc, op, str(e), ctx))
            ctx._tick(gi + 1, len(groups))
        return out
    raise ValueError(f"not a code op kind: {op.kind}")


# --- dispatcher --------------------------------------------------------------

def run_operation(op: OperationSpec, docs: list[Document], ctx: OpContext) -> list[Document]:
    if op.sample_limit is not None:
        docs = docs[:op.sample_limit]
    if op.kind == "map":
        return run_map(op, docs, ctx)
    if op.kind == "filter":
        return run_filter(op, docs, ctx)
    if op.kind == "reduce":
        return run_reduce(op, docs, ctx)
    if op.kind == "resolve":
        return run_resolve(op, docs, ctx)
    if op.kind == "unnest":
        return run_unnest(op, docs)
    if op.kind == "split":
        return run_split(op, docs, ctx)
    if op.kind == "gather":
        return run_gather(docs)
    if op.kind in ("code_map", "code_filter", "code_reduce"):
        return run_code_op(op, docs, ctx)
    raise ValueError(f"unknown op kind {op.kind!r}")
