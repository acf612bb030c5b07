"""Prompt-template language: `{{ path }}` interpolation and `{% for %}` loops.

Deliberately minimal so static validation can be exact: dot-separated paths
rooted at a binding, plus for-loops over list-valued paths (nestable once).
No filters, no conditionals, no arithmetic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


class TemplateSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class RenderError(ValueError):
    pass


class MissingPath(RenderError):
    def __init__(self, path: str):
        super().__init__(f"missing path: {path}")
        self.path = path


class NotIterable(RenderError):
    def __init__(self, path: str):
        super().__init__(f"for-loop target is not a list: {path}")
        self.path = path


@dataclass
class Literal:
    text: str


@dataclass
class Interp:
    path: list[str]


@dataclass
class ForLoop:
    var: str
    iterable: list[str]
    body: list[Any]


@dataclass
class Template:
    source: str
    nodes: list[Any] = field(default_factory=list)

    def render(self, bindings: dict[str, Any]) -> str:
        out: list[str] = []
        _render_nodes(self.nodes, bindings, out)
        return "".join(out)

    def referenced_paths(self) -> list[tuple[str, ...]]:
        """Statically resolved paths, loop variables substituted.

        A path under a loop variable comes back as the iterable path plus
        an `[]` marker plus the tail, e.g. ("inputs", "[]", "theme").
        """
        found: list[tuple[str, ...]] = []
        _collect_paths(self.nodes, {}, found)
        return found

    def references_root(self, name: str) -> bool:
        return any(p[0] == name for p in self.referenced_paths())


def _pos(source: str, offset: int) -> tuple[int, int]:
    line = source.count("\n", 0, offset) + 1
    col = offset - (source.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _parse_path(expr: str, source: str, offset: int) -> list[str]:
    parts = [p.strip() for p in expr.strip().split(".")]
    if not parts or any(not _IDENT.match(p) for p in parts):
        line, col = _pos(source, offset)
        raise TemplateSyntaxError(f"invalid path {expr.strip()!r}", line, col)
    return parts


def parse_template(source: str) -> Template:
    """Parse or raise TemplateSyntaxError with line/column."""
    nodes, end, closer = _parse_block(source, 0, depth=0)
    if closer is not None:
        line, col = _pos(source, end)
        raise TemplateSyntaxError("unexpected {% endfor %}", line, col)
    return Template(source, nodes)


def _parse_block(source: str, i: int, depth: int) -> tuple[list[Any], int, str | None]:
    """Parse until end-of-source or an {% endfor %} tag (returned as closer)."""
    nodes: list[Any] = []
    n = len(source)
    while i < n:
        brace = source.find("{{", i)
        tag = source.find("{%", i)
        nxt = min(x for x in (brace, tag, n) if x != -1)
        if nxt > i:
            nodes.append(Literal(source[i:nxt]))
            i = nxt
            continue
        if i == n:
            break
        if i == brace:
            close = source.find("}}", i + 2)
            if close == -1:
                line, col = _pos(source, i)
                raise TemplateSyntaxError("unclosed {{", line, col)
            inner = source[i + 2:close]
            if "{{" in inner or "{%" in inner:
                line, col = _pos(source, i)
                raise TemplateSyntaxError("unclosed {{", line, col)
            nodes.append(Interp(_parse_path(inner, source, i + 2)))
            i = close + 2
        else:
            close = source.find("%}", i + 2)
            if close == -1:
                line, col = _pos(source, i)
                raise TemplateSyntaxError("unclosed {%", line, col)
            stmt = source[i + 2:close].strip()
            after = close + 2
            if stmt == "endfor":
                return nodes, after, "endfor"
            m = re.match(r"for\s+([A-Za-z_][A-Za-z0-9_]*)\s+in\s+(.+)$", stmt)
            if not m:
                line, col = _pos(source, i)
                raise TemplateSyntaxError(f"expected 'for <ident> in <path>' or 'endfor', got {stmt!r}",
                                          line, col)
            if depth >= 2:
                line, col = _pos(source, i)
                raise TemplateSyntaxError("for-loops nest at most once", line, col)
            var = m.group(1)
            iterable = _parse_path(m.group(2), source, i + 2 + m.start(2))
            body, i, closer = _parse_block(source, after, depth + 1)
            if closer != "endfor":
                line, col = _pos(source, after - 2)
                raise TemplateSyntaxError("missing {% endfor %}", line, col)
            nodes.append(ForLoop(var, iterable, body))
    return nodes, i, None


def stringify(value: Any) -> str:
    """Interpolation rules: strings verbatim, booleans lowercase, numbers
    shortest round-trip, lists/maps compact JSON, null as "null"."""
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return repr(value)
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


def _lookup(path: list[str], bindings: dict[str, Any]) -> Any:
    dotted = ".".join(path)
    if path[0] not in bindings:
        raise MissingPath(dotted)
    value = bindings[path[0]]
    for part in path[1:]:
        if isinstance(value, dict) and part in value:
            value = value[part]
        else:
            raise MissingPath(dotted)
    return value


def _render_nodes(nodes: list[Any], bindings: dict[str, Any], out: list[str]) -> None:
    for node in nodes:
        if isinstance(node, Literal):
            out.append(node.text)
        elif isinstance(node, Interp):
            out.append(stringify(_lookup(node.path, bindings)))
        else:
            seq = _lookup(node.iterable, bindings)
            if not isinstance(seq, list):
                raise NotIterable(".".join(node.iterable))
            for item in seq:
                _render_nodes(node.body, {**bindings, node.var: item}, out)


def _collect_paths(nodes: list[Any], env: dict[str, tuple[str, ...]],
                   found: list[tuple[str, ...]]) -> None:
    for node in nodes:
        if isinstance(node, Literal):
            continue
        if isinstance(node, Interp):
            found.append(_resolve(tuple(node.path), env))
        else:
            it = _resolve(tuple(node.iterable), env)
            found.append(it)
            _collect_paths(node.body, {**env, node.var: it + ("[]",)}, found)


def _resolve(path: tuple[str, ...], env: dict[str, tuple[str, ...]]) -> tuple[str, ...]:
    if path[0] in env:
        return env[path[0]] + path[1:]
    return path
