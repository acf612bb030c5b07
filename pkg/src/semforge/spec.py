"""Declarative pipeline representation, validation, canonical bytes, diffing.

The human-authored surface is YAML; the hash surface is a canonical
sorted-key JSON encoding (order-sensitive parts encoded as arrays). Both
round-trip through the same dataclasses.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from . import codexpr
from .templates import Template, TemplateSyntaxError, parse_template

SEMANTIC_KINDS = ("map", "filter", "reduce", "resolve")
STRUCTURAL_KINDS = ("unnest", "split", "gather")
CODE_KINDS = ("code_map", "code_filter", "code_reduce")
ALL_KINDS = SEMANTIC_KINDS + STRUCTURAL_KINDS + CODE_KINDS

SCALAR_TYPES = ("string", "integer", "number", "boolean")


class PipelineFormatError(ValueError):
    """Raised when a pipeline file cannot be parsed into a PipelineSpec."""


@dataclass(frozen=True)
class SchemaType:
    kind: str  # scalar name | "enum" | "list" | "object_list"
    enum_values: tuple[str, ...] = ()
    item: "SchemaType | None" = None
    fields: tuple[tuple[str, "SchemaType"], ...] = ()

    def to_text(self) -> str:
        if self.kind == "enum":
            return "enum(" + ", ".join(self.enum_values) + ")"
        if self.kind == "list":
            return f"list[{self.item.to_text()}]"
        if self.kind == "object_list":
            inner = ", ".join(f"{n}: {t.to_text()}" for n, t in self.fields)
            return "list[{" + inner + "}]"
        return self.kind


def parse_schema_type(text: str) -> SchemaType:
    s = text.strip()
    if s in SCALAR_TYPES:
        return SchemaType(s)
    m = re.fullmatch(r"enum\((.*)\)", s, re.DOTALL)
    if m:
        values = tuple(v.strip() for v in m.group(1).split(",")) if m.group(1).strip() else ()
        return SchemaType("enum", enum_values=values)
    m = re.fullmatch(r"list\[(.+)\]", s, re.DOTALL)
    if m:
        inner = m.group(1).strip()
        if inner.startswith("{") and inner.endswith("}"):
            fields = []
            body = inner[1:-1].strip()
            if body:
                for part in body.split(","):
                    if ":" not in part:
                        raise PipelineFormatError(f"bad object field {part!r} in {text!r}")
                    fname, ftype = part.split(":", 1)
                    ft = parse_schema_type(ftype)
                    if ft.kind not in SCALAR_TYPES and ft.kind != "enum":
                        raise PipelineFormatError(f"object fields must be scalar, got {ftype.strip()!r}")
                    fields.append((fname.strip(), ft))
            return SchemaType("object_list", fields=tuple(fields))
        item = parse_schema_type(inner)
        if item.kind not in SCALAR_TYPES and item.kind != "enum":
            raise PipelineFormatError(f"list items must be scalar, got {inner!r}")
        return SchemaType("list", item=item)
    raise PipelineFormatError(f"unknown schema type {text!r}")


@dataclass(frozen=True)
class OutputSchema:
    """Ordered attribute-name -> SchemaType map."""

    attrs: tuple[tuple[str, SchemaType], ...]

    @classmethod
    def of(cls, mapping: dict[str, str | SchemaType]) -> "OutputSchema":
        out = []
        for name, t in mapping.items():
            out.append((name, t if isinstance(t, SchemaType) else parse_schema_type(t)))
        return cls(tuple(out))

    def names(self) -> list[str]:
        return [n for n, _ in self.attrs]

    def get(self, name: str) -> SchemaType | None:
        for n, t in self.attrs:
            if n == name:
                return t
        return None

    def to_obj(self) -> list[list[str]]:
        return [[n, t.to_text()] for n, t in self.attrs]

    @classmethod
    def from_obj(cls, obj: Any) -> "OutputSchema":
        if isinstance(obj, dict):
            return cls.of({k: str(v) for k, v in obj.items()})
        return cls(tuple((n, parse_schema_type(t)) for n, t in obj))


@dataclass(frozen=True)
class ResolveConfig:
    compare_prompt: str
    resolution_prompt: str
    target_attribute: str
    blocking_threshold: float = 0.0


@dataclass(frozen=True)
class SplitConfig:
    attribute: str
    chunk_token_budget: int


@dataclass
class OperationSpec:
    name: str
    kind: str
    prompt: str | None = None
    output_schema: OutputSchema | None = None
    reduce_key: str | None = None
    resolve_config: ResolveConfig | None = None
    unnest_attribute: str | None = None
    split_config: SplitConfig | None = None
    code_expr: str | None = None
    model: str | None = None
    enabled: bool = True
    sample_limit: int | None = None

    def with_prompt(self, prompt: str, schema: OutputSchema | None = None) -> "OperationSpec":
        op = replace(self, prompt=prompt)
        if schema is not None:
            op.output_schema = schema
        return op


@dataclass
class PipelineSpec:
    id: str
    name: str
    dataset_id: str
    ops: list[OperationSpec]
    default_model: str = "mock-small"

    def op(self, name: str) -> OperationSpec:
        for op in self.ops:
            if op.name == name:
                return op
        raise KeyError(name)

    def op_index(self, name: str) -> int:
        for i, op in enumerate(self.ops):
            if op.name == name:
                return i
        raise KeyError(name)

    def enabled_ops(self) -> list[OperationSpec]:
        return [op for op in self.ops if op.enabled]

    def replace_op(self, name: str, replacement: list[OperationSpec]) -> "PipelineSpec":
        """New spec with `name` substituted by the given op sequence."""
        i = self.op_index(name)
        new_ops = self.ops[:i] + list(replacement) + self.ops[i + 1:]
        return replace(self, ops=new_ops)


@dataclass(frozen=True)
class Diagnostic:
    op: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.op}.{self.field}: {self.message}"


# --- serialization -----------------------------------------------------------

def op_to_obj(op: OperationSpec) -> dict[str, Any]:
    obj: dict[str, Any] = {"name": op.name, "kind": op.kind, "enabled": op.enabled}
    if op.prompt is not None:
        obj["prompt"] = op.prompt
    if op.output_schema is not None:
        obj["output_schema"] = op.output_schema.to_obj()
    if op.reduce_key is not None:
        obj["reduce_key"] = op.reduce_key
    if op.resolve_config is not None:
        rc = op.resolve_config
        obj["resolve_config"] = {
            "compare_prompt": rc.compare_prompt,
            "resolution_prompt": rc.resolution_prompt,
            "target_attribute": rc.target_attribute,
            "blocking_threshold": rc.blocking_threshold,
        }
    if op.unnest_attribute is not None:
        obj["unnest_attribute"] = op.unnest_attribute
    if op.split_config is not None:
        obj["split_config"] = {"attribute": op.split_config.attribute,
                               "chunk_token_budget": op.split_config.chunk_token_budget}
    if op.code_expr is not None:
        obj["code_expr"] = op.code_expr
    if op.model is not None:
        obj["model"] = op.model
    if op.sample_limit is not None:
        obj["sample_limit"] = op.sample_limit
    return obj


def op_from_obj(obj: dict[str, Any]) -> OperationSpec:
    rc = obj.get("resolve_config")
    sc = obj.get("split_config")
    return OperationSpec(
        name=obj["name"],
        kind=obj["kind"],
        prompt=obj.get("prompt"),
        output_schema=OutputSchema.from_obj(obj["output_schema"]) if obj.get("output_schema") else None,
        reduce_key=obj.get("reduce_key"),
        resolve_config=ResolveConfig(rc["compare_prompt"], rc["resolution_prompt"],
                                     rc["target_attribute"],
                                     float(rc.get("blocking_threshold", 0.0))) if rc else None,
        unnest_attribute=obj.get("unnest_attribute"),
        split_config=SplitConfig(sc["attribute"], int(sc["chunk_token_budget"])) if sc else None,
        code_expr=obj.get("code_expr"),
        model=obj.get("model"),
        enabled=bool(obj.get("enabled", True)),
        sample_limit=obj.get("sample_limit"),
    )


def pipeline_to_obj(p: PipelineSpec) -> dict[str, Any]:
    return {
        "id": p.id,
        "name": p.name,
        "dataset_id": p.dataset_id,
        "default_model": p.default_model,
        "ops": [op_to_obj(op) for op in p.ops],
    }


def pipeline_from_obj(obj: dict[str, Any]) -> PipelineSpec:
    return PipelineSpec(
        id=obj["id"],
        name=obj["name"],
        dataset_id=obj["dataset_id"],
        ops=[op_from_obj(o) for o in obj["ops"]],
        default_model=obj.get("default_model", "mock-small"),
    )


def canonical_serialize(p: PipelineSpec) -> bytes:
    """Deterministic byte encoding; parse(canonical_serialize(p)) == p."""
    return json.dumps(pipeline_to_obj(p), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False).encode("utf-8")


def canonical_parse(data: bytes) -> PipelineSpec:
    return pipeline_from_obj(json.loads(data.decode("utf-8")))


# --- YAML file format --------------------------------------------------------

def pipeline_from_yaml(text: str, pipeline_id: str | None = None) -> PipelineSpec:
    """Parse the human-authored YAML format (see docs/pipeline-format.md)."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise PipelineFormatError(f"invalid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise PipelineFormatError("pipeline file must be a YAML mapping")
    for key in ("name", "dataset", "operations"):
        if key not in doc:
            raise PipelineFormatError(f"missing top-level key {key!r}")
    ops = []
    raw_ops = doc["operations"]
    if not isinstance(raw_ops, list):
        raise PipelineFormatError("'operations' must be a list")
    for i, raw in enumerate(raw_ops):
        if not isinstance(raw, dict) or "name" not in raw or "type" not in raw:
            raise PipelineFormatError(f"operation {i}: needs 'name' and 'type'")
        kind = raw["type"]
        if kind not in ALL_KINDS:
            raise PipelineFormatError(f"operation {raw['name']!r}: unknown type {kind!r}")
        schema = None
        if isinstance(raw.get("output"), dict) and isinstance(raw["output"].get("schema"), dict):
            schema = OutputSchema.of({k: str(v) for k, v in raw["output"]["schema"].items()})
        resolve_config = None
        if kind == "resolve":
            missing = [k for k in ("comparison_prompt", "resolution_prompt", "target") if k not in raw]
            if missing:
                raise PipelineFormatError(f"operation {raw['name']!r}: resolve needs {missing}")
            resolve_config = ResolveConfig(
                compare_prompt=raw["comparison_prompt"],
                resolution_prompt=raw["resolution_prompt"],
                target_attribute=raw["target"],
                blocking_threshold=float(raw.get("blocking_threshold", 0.0)),
            )
        split_config = None
        if kind == "split":
            if "attribute" not in raw or "chunk_token_budget" not in raw:
                raise PipelineFormatError(f"operation {raw['name']!r}: split needs 'attribute' and 'chunk_token_budget'")
            split_config = SplitConfig(raw["attribute"], int(raw["chunk_token_budget"]))
        ops.append(OperationSpec(
            name=str(raw["name"]),
            kind=kind,
            prompt=raw.get("prompt"),
            output_schema=schema,
            reduce_key=raw.get("reduce_key"),
            resolve_config=resolve_config,
            unnest_attribute=raw.get("attribute") if kind == "unnest" else None,
            split_config=split_config,
            code_expr=raw.get("expr"),
            model=raw.get("model"),
            enabled=bool(raw.get("enabled", True)),
            sample_limit=raw.get("sample_limit"),
        ))
    name = str(doc["name"])
    return PipelineSpec(
        id=pipeline_id or str(doc.get("id", name)),
        name=name,
        dataset_id=str(doc["dataset"]),
        ops=ops,
        default_model=str(doc.get("default_model", "mock-small")),
    )


def pipeline_to_yaml(p: PipelineSpec) -> str:
    doc: dict[str, Any] = {
        "name": p.name,
        "dataset": p.dataset_id,
        "default_model": p.default_model,
        "operations": [],
    }
    if p.id != p.name:
        doc["id"] = p.id
    for op in p.ops:
        raw: dict[str, Any] = {"name": op.name, "type": op.kind}
        if op.prompt is not None:
            raw["prompt"] = op.prompt
        if op.output_schema is not None:
            raw["output"] = {"schema": {n: t.to_text() for n, t in op.output_schema.attrs}}
        if op.reduce_key is not None:
            raw["reduce_key"] = op.reduce_key
        if op.resolve_config is not None:
            raw["comparison_prompt"] = op.resolve_config.compare_prompt
            raw["resolution_prompt"] = op.resolve_config.resolution_prompt
            raw["target"] = op.resolve_config.target_attribute
            raw["blocking_threshold"] = op.resolve_config.blocking_threshold
        if op.unnest_attribute is not None:
            raw["attribute"] = op.unnest_attribute
        if op.split_config is not None:
            raw["attribute"] = op.split_config.attribute
            raw["chunk_token_budget"] = op.split_config.chunk_token_budget
        if op.code_expr is not None:
            raw["expr"] = op.code_expr
        if op.model is not None:
            raw["model"] = op.model
        if not op.enabled:
            raw["enabled"] = False
        if op.sample_limit is not None:
            raw["sample_limit"] = op.sample_limit
        doc["operations"].append(raw)
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True, width=100)


# --- validation --------------------------------------------------------------

_REQUIRED: dict[str, tuple[str, ...]] = {
    "map": ("prompt", "output_schema"),
    "filter": ("prompt", "output_schema"),
    "reduce": ("prompt", "output_schema", "reduce_key"),
    "resolve": ("resolve_config",),
    "unnest": ("unnest_attribute",),
    "split": ("split_config",),
    "gather": (),
    "code_map": ("code_expr",),
    "code_filter": ("code_expr",),
    "code_reduce": ("code_expr", "reduce_key"),
}
_OPTIONAL_EVERYWHERE = ("model", "enabled", "sample_limit", "name", "kind")


def _check_schema(op: OperationSpec, out: list[Diagnostic]) -> None:
    schema = op.output_schema
    if schema is None:
        return
    if not schema.attrs:
        out.append(Diagnostic(op.name, "output_schema", "schema must declare at least one attribute"))
    seen: set[str] = set()
    for n, t in schema.attrs:
        if not n:
            out.append(Diagnostic(op.name, "output_schema", "attribute names must be nonempty"))
        if n in seen:
            out.append(Diagnostic(op.name, "output_schema", f"duplicate attribute {n!r}"))
        seen.add(n)
        for st in _walk_types(t):
            if st.kind == "enum":
                if not st.enum_values:
                    out.append(Diagnostic(op.name, "output_schema", f"{n}: enum needs at least one literal"))
                if len(set(st.enum_values)) != len(st.enum_values):
                    out.append(Diagnostic(op.name, "output_schema", f"{n}: duplicate enum literals"))
    if op.kind == "filter":
        if len(schema.attrs) != 1 or schema.attrs[0][1].kind != "boolean":
            out.append(Diagnostic(op.name, "output_schema",
                                  "filter schema must be exactly one boolean attribute"))


def _walk_types(t: SchemaType):
    yield t
    if t.item is not None:
        yield from _walk_types(t.item)
    for _, ft in t.fields:
        yield from _walk_types(ft)


def _parse_or_diag(source: str, op: str, fld: str, out: list[Diagnostic]) -> Template | None:
    try:
        return parse_template(source)
    except TemplateSyntaxError as e:
        out.append(Diagnostic(op, fld, f"template syntax error at {e.line}:{e.col}: {e.message}"))
        return None


def _check_refs(t: Template, op: OperationSpec, fld: str, allowed_roots: dict[str, set[str] | None],
                out: list[Diagnostic]) -> None:
    """allowed_roots maps binding name -> attribute set reachable under it
    (None means any path is fine)."""
    for path in t.referenced_paths():
        root = path[0]
        if root not in allowed_roots:
            out.append(Diagnostic(op.name, fld,
                                  f"unknown binding {root!r} (allowed: {', '.join(sorted(allowed_roots))})"))
            continue
        attrs = allowed_roots[root]
        if attrs is None:
            continue
        # first attribute segment after the root (skipping the [] marker)
        tail = [seg for seg in path[1:] if seg != "[]"]
        if tail and tail[0] not in attrs:
            out.append(Diagnostic(op.name, fld, f"unknown attribute {tail[0]!r} in {'.'.join(path)}"))


def _code_paths_ok(expr: codexpr.Expr, op: OperationSpec, allowed_roots: dict[str, set[str] | None],
                   out: list[Diagnostic]) -> None:
    for path in codexpr.referenced_paths(expr):
        root = path[0]
        if root not in allowed_roots:
            out.append(Diagnostic(op.name, "code_expr", f"unknown binding {root!r}"))
            continue
        attrs = allowed_roots[root]
        if attrs is not None and len(path) > 1 and path[1] not in attrs:
            out.append(Diagnostic(op.name, "code_expr", f"unknown attribute {path[1]!r}"))


def validate_pipeline(p: PipelineSpec, dataset_attrs: list[str] | None) -> list[Diagnostic]:
    """Full static check; empty result means the executor will not hit an
    unknown-attribute error on schema-conforming documents.

    `dataset_attrs` None skips attribute-existence checks (schema unknown).
    """
    out: list[Diagnostic] = []
    seen_names: set[str] = set()
    for op in p.ops:
        if not op.name:
            out.append(Diagnostic(op.name, "name", "operation name must be nonempty"))
        if op.name in seen_names:
            out.append(Diagnostic(op.name, "name", "duplicate operation name"))
        seen_names.add(op.name)
        if op.kind not in ALL_KINDS:
            out.append(Diagnostic(op.name, "kind", f"unknown kind {op.kind!r}"))
            continue
        required = _REQUIRED[op.kind]
        for fld in required:
            if getattr(op, fld) is None:
                out.append(Diagnostic(op.name, fld, f"{op.kind} requires {fld}"))
        for fld in ("prompt", "output_schema", "reduce_key", "resolve_config",
                    "unnest_attribute", "split_config", "code_expr"):
            if fld not in required and getattr(op, fld) is not None:
                out.append(Diagnostic(op.name, fld, f"{fld} is not valid on a {op.kind} op"))
        _check_schema(op, out)

    # attribute-flow analysis over enabled ops only
    track = dataset_attrs is not None
    available: set[str] = set(dataset_attrs or ())

    def avail() -> set[str] | None:
        return available if track else None

    for op in p.enabled_ops():
        if op.kind in ("map", "filter"):
            if op.prompt is not None:
                t = _parse_or_diag(op.prompt, op.name, "prompt", out)
                if t:
                    _check_refs(t, op, "prompt", {"input": avail()}, out)
            if track and op.kind == "map" and op.output_schema:
                available = available | set(op.output_schema.names())
        elif op.kind == "reduce":
            if op.prompt is not None:
                t = _parse_or_diag(op.prompt, op.name, "prompt", out)
                if t:
                    _check_refs(t, op, "prompt",
                                {"inputs": avail(), "reduce_key": None,
                                 "accumulated": set(op.output_schema.names()) if op.output_schema else None},
                                out)
            if track and op.reduce_key is not None and op.reduce_key not in available:
                out.append(Diagnostic(op.name, "reduce_key",
                                      f"unknown attribute {op.reduce_key!r}"))
            if track:
                available = set(op.output_schema.names() if op.output_schema else [])
                if op.reduce_key:
                    available.add(op.reduce_key)
        elif op.kind == "resolve":
            rc = op.resolve_config
            if rc is not None:
                if track and rc.target_attribute not in available:
                    out.append(Diagnostic(op.name, "resolve_config",
                                          f"unknown attribute {rc.target_attribute!r}"))
                if not (0.0 <= rc.blocking_threshold <= 1.0):
                    out.append(Diagnostic(op.name, "resolve_config",
                                          "blocking_threshold must be in [0,1]"))
                target = {rc.target_attribute}
                t = _parse_or_diag(rc.compare_prompt, op.name, "resolve_config.compare_prompt", out)
                if t:
                    _check_refs(t, op, "resolve_config.compare_prompt",
                                {"input1": target, "input2": target}, out)
                t = _parse_or_diag(rc.resolution_prompt, op.name, "resolve_config.resolution_prompt", out)
                if t:
                    _check_refs(t, op, "resolve_config.resolution_prompt", {"inputs": target}, out)
        elif op.kind == "unnest":
            if track and op.unnest_attribute is not None and op.unnest_attribute not in available:
                out.append(Diagnostic(op.name, "unnest_attribute",
                                      f"unknown attribute {op.unnest_attribute!r}"))
        elif op.kind == "split":
            sc = op.split_config
            if sc is not None:
                if track and sc.attribute not in available:
                    out.append(Diagnostic(op.name, "split_config",
                                          f"unknown attribute {sc.attribute!r}"))
                if sc.chunk_token_budget <= 0:
                    out.append(Diagnostic(op.name, "split_config",
                                          "chunk_token_budget must be > 0"))
                if track:
                    available = available | {"_chunk_index", "_parent_id"}
        elif op.kind == "gather":
            if track and "_parent_id" not in available:
                out.append(Diagnostic(op.name, "kind",
                                      "gather needs _parent_id (run a split upstream)"))
        elif op.kind in CODE_KINDS:
            if op.code_expr is None:
                continue
            try:
                expr = codexpr.parse(op.code_expr)
            except codexpr.CodeExprError as e:
                out.append(Diagnostic(op.name, "code_expr", str(e)))
                continue
            if op.kind in ("code_map", "code_reduce") and not isinstance(expr, codexpr.MapLiteral):
                out.append(Diagnostic(op.name, "code_expr",
                                      f"{op.kind} expression must be a map literal {{name: expr, ...}}"))
                continue
            if op.kind == "code_map":
                _code_paths_ok(expr, op, {"input": avail()}, out)
                if track:
                    available = available | set(k for k, _ in expr.entries)
            elif op.kind == "code_filter":
                _code_paths_ok(expr, op, {"input": avail()}, out)
            else:  # code_reduce
                _code_paths_ok(expr, op, {"inputs": avail(), "reduce_key": None}, out)
                if track and op.reduce_key is not None and op.reduce_key not in available:
                    out.append(Diagnostic(op.name, "reduce_key",
                                          f"unknown attribute {op.reduce_key!r}"))
                if track:
                    available = set(k for k, _ in expr.entries)
                    if op.reduce_key:
                        available.add(op.reduce_key)
    return out


def attributes_after(p: PipelineSpec, dataset_attrs: list[str], upto: int | None = None) -> set[str]:
    """Attribute set available after running enabled ops [0..upto) (all if None)."""
    available = set(dataset_attrs)
    ops = p.enabled_ops()
    if upto is not None:
        ops = ops[:upto]
    for op in ops:
        if op.kind == "map" and op.output_schema:
            available |= set(op.output_schema.names())
        elif op.kind in ("reduce", "code_reduce"):
            if op.kind == "reduce":
                available = set(op.output_schema.names() if op.output_schema else [])
            else:
                try:
                    expr = codexpr.parse(op.code_expr or "")
                    available = set(k for k, _ in expr.entries) if isinstance(expr, codexpr.MapLiteral) else set()
                except codexpr.CodeExprError:
                    available = set()
            if op.reduce_key:
                available.add(op.reduce_key)
        elif op.kind == "split":
            available |= {"_chunk_index", "_parent_id"}
        elif op.kind == "code_map":
            try:
                expr = codexpr.parse(op.code_expr or "")
                if isinstance(expr, codexpr.MapLiteral):
                    available |= set(k for k, _ in expr.entries)
            except codexpr.CodeExprError:
                pass
    return available


# --- diffing -----------------------------------------------------------------

_DIFF_FIELDS = ("kind", "prompt", "output_schema", "reduce_key", "resolve_config",
                "unnest_attribute", "split_config", "code_expr", "model", "enabled",
                "sample_limit")


@dataclass(frozen=True)
class OpDiff:
    name: str
    status: str  # unchanged | edited | added | removed | reordered
    fields: tuple[str, ...] = ()


@dataclass
class PlanDiff:
    entries: list[OpDiff]

    def count(self, status: str) -> int:
        return sum(1 for e in self.entries if e.status == status)

    def to_obj(self) -> list[dict[str, Any]]:
        return [{"name": e.name, "status": e.status, "fields": list(e.fields)}
                for e in self.entries]


def _lcs(a: list[str], b: list[str]) -> set[str]:
    """Names on one longest common subsequence of a and b."""
    m, n = len(a), len(b)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            if a[i] == b[j]:
                dp[i][j] = dp[i + 1][j + 1] + 1
            else:
                dp[i][j] = max(dp[i + 1][j], dp[i][j + 1])
    keep: set[str] = set()
    i = j = 0
    while i < m and j < n:
        if a[i] == b[j]:
            keep.add(a[i])
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            i += 1
        else:
            j += 1
    return keep


def diff_pipelines(a: PipelineSpec, b: PipelineSpec) -> PlanDiff:
    """Per-op status comparing a (old) to b (new), in b's order with
    removed ops appended."""
    a_names = [op.name for op in a.ops]
    b_names = [op.name for op in b.ops]
    a_by_name = {op.name: op for op in a.ops}
    b_by_name = {op.name: op for op in b.ops}
    common = set(a_names) & set(b_names)
    stable = _lcs([n for n in a_names if n in common], [n for n in b_names if n in common])

    entries: list[OpDiff] = []
    for name in b_names:
        if name not in common:
            entries.append(OpDiff(name, "added"))
            continue
        old, new = a_by_name[name], b_by_name[name]
        changed = tuple(f for f in _DIFF_FIELDS if getattr(old, f) != getattr(new, f))
        if changed:
            entries.append(OpDiff(name, "edited", changed))
        elif name not in stable:
            entries.append(OpDiff(name, "reordered"))
        else:
            entries.append(OpDiff(name, "unchanged"))
    for name in a_names:
        if name not in common:
            entries.append(OpDiff(name, "removed"))
    return PlanDiff(entries)
