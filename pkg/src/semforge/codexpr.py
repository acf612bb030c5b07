"""Sandboxed expression language for code-based operators.

Expressions operate over document attributes only: arithmetic, string ops,
comparisons, list/map literals, indexing, a conditional expression, and a
fixed builtin set (length, lower, trim, split, contains, count, distinct,
concat). No attribute assignment, no loops, no host access.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any


class CodeExprError(ValueError):
    """Parse-time error, positioned by character offset."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"at {pos}: {message}")
        self.pos = pos


class CodeEvalError(ValueError):
    """Runtime evaluation error (missing attribute, type mismatch, ...)."""


# --- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    value: Any


@dataclass(frozen=True)
class Path:
    parts: tuple[str, ...]


@dataclass(frozen=True)
class ListLiteral:
    items: tuple[Any, ...]


@dataclass(frozen=True)
class MapLiteral:
    entries: tuple[tuple[str, Any], ...]


@dataclass(frozen=True)
class Unary:
    op: str
    operand: Any


@dataclass(frozen=True)
class Binary:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class Index:
    target: Any
    index: Any


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple[Any, ...]


@dataclass(frozen=True)
class Conditional:
    then: Any
    cond: Any
    otherwise: Any


Expr = Any

BUILTINS = ("length", "lower", "trim", "split", "contains", "count", "distinct", "concat")

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d+|\d+)
  | (?P<str>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>==|!=|<=|>=|[-+*/%<>()\[\]{},.:])
""", re.VERBOSE)

_KEYWORDS = ("and", "or", "not", "if", "else", "true", "false", "null")


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(source):
        m = _TOKEN.match(source, i)
        if not m:
            raise CodeExprError(f"unexpected character {source[i]!r}", i)
        i = m.end()
        if m.lastgroup == "ws":
            continue
        tokens.append(_Token(m.lastgroup, m.group(), m.start()))
    tokens.append(_Token("eof", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise CodeExprError(f"expected {text!r}, got {tok.text or 'end of input'!r}", tok.pos)
        return tok

    def at(self, text: str) -> bool:
        return self.peek().text == text

    # conditional := or_expr ("if" or_expr "else" conditional)?
    def conditional(self) -> Expr:
        value = self.or_expr()
        if self.peek().kind == "ident" and self.at("if"):
            self.next()
            cond = self.or_expr()
            self.expect("else")
            otherwise = self.conditional()
            return Conditional(value, cond, otherwise)
        return value

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.peek().kind == "ident" and self.at("or"):
            self.next()
            left = Binary("or", left, self.and_expr())
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.peek().kind == "ident" and self.at("and"):
            self.next()
            left = Binary("and", left, self.not_expr())
        return left

    def not_expr(self) -> Expr:
        if self.peek().kind == "ident" and self.at("not"):
            self.next()
            return Unary("not", self.not_expr())
        return self.comparison()

    def comparison(self) -> Expr:
        left = self.additive()
        if self.peek().text in ("==", "!=", "<", "<=", ">", ">="):
            op = self.next().text
            return Binary(op, left, self.additive())
        return left

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            left = Binary(op, left, self.multiplicative())
        return left

    def multiplicative(self) -> Expr:
        left = self.unary()
        while self.peek().text in ("*", "/", "%"):
            op = self.next().text
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.at("-"):
            pos = self.next().pos
            return Unary("-", self.unary())
        return self.postfix()

    def postfix(self) -> Expr:
        value = self.primary()
        while True:
            if self.at("["):
                self.next()
                idx = self.conditional()
                self.expect("]")
                value = Index(value, idx)
            elif self.at("."):
                # attribute access after indexing, e.g. inputs[0].x
                self.next()
                part = self.next()
                if part.kind != "ident":
                    raise CodeExprError("expected identifier after '.'", part.pos)
                value = Index(value, Lit(part.text))
            else:
                return value

    def primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "num":
            self.next()
            return Lit(float(tok.text) if "." in tok.text else int(tok.text))
        if tok.kind == "str":
            self.next()
            body = tok.text[1:-1]
            return Lit(re.sub(r"\\(.)", r"\1", body))
        if tok.text == "(":
            self.next()
            value = self.conditional()
            self.expect(")")
            return value
        if tok.text == "[":
            self.next()
            items = []
            if not self.at("]"):
                items.append(self.conditional())
                while self.at(","):
                    self.next()
                    items.append(self.conditional())
            self.expect("]")
            return ListLiteral(tuple(items))
        if tok.text == "{":
            self.next()
            entries = []
            if not self.at("}"):
                entries.append(self._map_entry())
                while self.at(","):
                    self.next()
                    entries.append(self._map_entry())
            self.expect("}")
            names = [k for k, _ in entries]
            if len(set(names)) != len(names):
                raise CodeExprError("duplicate map keys", tok.pos)
            return MapLiteral(tuple(entries))
        if tok.kind == "ident":
            if tok.text in ("true", "false"):
                self.next()
                return Lit(tok.text == "true")
            if tok.text == "null":
                self.next()
                return Lit(None)
            if tok.text in _KEYWORDS:
                raise CodeExprError(f"unexpected keyword {tok.text!r}", tok.pos)
            self.next()
            if self.at("("):
                if tok.text not in BUILTINS:
                    raise CodeExprError(f"unknown function {tok.text!r}", tok.pos)
                self.next()
                args = []
                if not self.at(")"):
                    args.append(self.conditional())
                    while self.at(","):
                        self.next()
                        args.append(self.conditional())
                self.expect(")")
                return Call(tok.text, tuple(args))
            parts = [tok.text]
            while self.at("."):
                self.next()
                part = self.next()
                if part.kind != "ident":
                    raise CodeExprError("expected identifier after '.'", part.pos)
                parts.append(part.text)
            return Path(tuple(parts))
        raise CodeExprError(f"unexpected token {tok.text or 'end of input'!r}", tok.pos)

    def _map_entry(self) -> tuple[str, Expr]:
        key = self.next()
        if key.kind == "str":
            name = re.sub(r"\\(.)", r"\1", key.text[1:-1])
        elif key.kind == "ident" and key.text not in _KEYWORDS:
            name = key.text
        else:
            raise CodeExprError("expected map key", key.pos)
        self.expect(":")
        return name, self.conditional()


def parse(source: str) -> Expr:
    parser = _Parser(source)
    expr = parser.conditional()
    tok = parser.peek()
    if tok.kind != "eof":
        raise CodeExprError(f"trailing input {tok.text!r}", tok.pos)
    return expr


def referenced_paths(expr: Expr) -> list[tuple[str, ...]]:
    found: list[tuple[str, ...]] = []

    def walk(e: Expr) -> None:
        if isinstance(e, Path):
            found.append(e.parts)
        elif isinstance(e, ListLiteral):
            for item in e.items:
                walk(item)
        elif isinstance(e, MapLiteral):
            for _, v in e.entries:
                walk(v)
        elif isinstance(e, Unary):
            walk(e.operand)
        elif isinstance(e, Binary):
            walk(e.left)
            walk(e.right)
        elif isinstance(e, Index):
            walk(e.target)
            walk(e.index)
        elif isinstance(e, Call):
            for a in e.args:
                walk(a)
        elif isinstance(e, Conditional):
            walk(e.then)
            walk(e.cond)
            walk(e.otherwise)

    walk(expr)
    return found


# --- evaluation --------------------------------------------------------------

def _truthy(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    raise CodeEvalError(f"expected a boolean, got {type(v).__name__}")


def _num(v: Any) -> Any:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return v
    raise CodeEvalError(f"expected a number, got {type(v).__name__}")


def _call(func: str, args: list[Any]) -> Any:
    def arity(n: int, m: int | None = None) -> None:
        hi = m if m is not None else n
        if not (n <= len(args) <= hi):
            raise CodeEvalError(f"{func}() takes {n}{'-' + str(hi) if hi != n else ''} arguments")

    if func == "length" or func == "count":
        arity(1)
        v = args[0]
        if isinstance(v, (list, str, dict)):
            return len(v)
        raise CodeEvalError(f"{func}() needs a list, string, or map")
    if func == "lower":
        arity(1)
        if not isinstance(args[0], str):
            raise CodeEvalError("lower() needs a string")
        return args[0].lower()
    if func == "trim":
        arity(1)
        if not isinstance(args[0], str):
            raise CodeEvalError("trim() needs a string")
        return args[0].strip()
    if func == "split":
        arity(1, 2)
        if not isinstance(args[0], str):
            raise CodeEvalError("split() needs a string")
        if len(args) == 2:
            if not isinstance(args[1], str) or not args[1]:
                raise CodeEvalError("split() separator must be a nonempty string")
            return args[0].split(args[1])
        return args[0].split()
    if func == "contains":
        arity(2)
        hay, needle = args
        if isinstance(hay, str):
            if not isinstance(needle, str):
                raise CodeEvalError("contains() on a string needs a string needle")
            return needle in hay
        if isinstance(hay, list):
            return needle in hay
        raise CodeEvalError("contains() needs a string or list haystack")
    if func == "distinct":
        arity(1)
        if not isinstance(args[0], list):
            raise CodeEvalError("distinct() needs a list")
        seen = []
        for v in args[0]:
            if v not in seen:
                seen.append(v)
        return seen
    if func == "concat":
        arity(1, 2)
        if not isinstance(args[0], list):
            raise CodeEvalError("concat() needs a list")
        xs = args[0]
        if xs and all(isinstance(x, list) for x in xs):
            out: list[Any] = []
            for x in xs:
                out.extend(x)
            return out
        sep = args[1] if len(args) == 2 else ", "
        if not isinstance(sep, str):
            raise CodeEvalError("concat() separator must be a string")
        return sep.join(x if isinstance(x, str) else str(x) for x in xs)
    raise CodeEvalError(f"unknown function {func!r}")


def evaluate(expr: Expr, bindings: dict[str, Any]) -> Any:
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Path):
        value: Any = bindings
        for i, part in enumerate(expr.parts):
            if isinstance(value, dict) and part in value:
                value = value[part]
            else:
                raise CodeEvalError(f"missing attribute {'.'.join(expr.parts[:i + 1])!r}")
        return value
    if isinstance(expr, ListLiteral):
        return [evaluate(item, bindings) for item in expr.items]
    if isinstance(expr, MapLiteral):
        return {k: evaluate(v, bindings) for k, v in expr.entries}
    if isinstance(expr, Unary):
        if expr.op == "not":
            return not _truthy(evaluate(expr.operand, bindings))
        return -_num(evaluate(expr.operand, bindings))
    if isinstance(expr, Binary):
        if expr.op == "and":
            return _truthy(evaluate(expr.left, bindings)) and _truthy(evaluate(expr.right, bindings))
        if expr.op == "or":
            return _truthy(evaluate(expr.left, bindings)) or _truthy(evaluate(expr.right, bindings))
        left = evaluate(expr.left, bindings)
        right = evaluate(expr.right, bindings)
        if expr.op == "==":
            return left == right
        if expr.op == "!=":
            return left != right
        if expr.op in ("<", "<=", ">", ">="):
            if isinstance(left, str) and isinstance(right, str):
                pass
            else:
                left, right = _num(left), _num(right)
            if expr.op == "<":
                return left < right
            if expr.op == "<=":
                return left <= right
            if expr.op == ">":
                return left > right
            return left >= right
        if expr.op == "+":
            if isinstance(left, str) and isinstance(right, str):
                return left + right
            if isinstance(left, list) and isinstance(right, list):
                return left + right
            return _num(left) + _num(right)
        if expr.op == "-":
            return _num(left) - _num(right)
        if expr.op == "*":
            return _num(left) * _num(right)
        if expr.op == "/":
            if _num(right) == 0:
                raise CodeEvalError("division by zero")
            return _num(left) / _num(right)
        if expr.op == "%":
            if _num(right) == 0:
                raise CodeEvalError("modulo by zero")
            return _num(left) % _num(right)
    if isinstance(expr, Index):
        target = evaluate(expr.target, bindings)
        idx = evaluate(expr.index, bindings)
        if isinstance(target, list):
            if not isinstance(idx, int) or isinstance(idx, bool):
                raise CodeEvalError("list index must be an integer")
            if not (-len(target) <= idx < len(target)):
                raise CodeEvalError(f"index {idx} out of range")
            return target[idx]
        if isinstance(target, dict):
            if not isinstance(idx, str):
                raise CodeEvalError("map index must be a string")
            if idx not in target:
                raise CodeEvalError(f"missing key {idx!r}")
            return target[idx]
        raise CodeEvalError("only lists and maps can be indexed")
    if isinstance(expr, Call):
        return _call(expr.func, [evaluate(a, bindings) for a in expr.args])
    if isinstance(expr, Conditional):
        if _truthy(evaluate(expr.cond, bindings)):
            return evaluate(expr.then, bindings)
        return evaluate(expr.otherwise, bindings)
    raise CodeEvalError(f"cannot evaluate {expr!r}")
