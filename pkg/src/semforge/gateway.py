"""Provider-agnostic chat client: structured output, token budgets, mocks.

The mock provider is fully deterministic (ordered regex rules, first match
wins) so every pipeline behavior is testable offline. Real providers speak
the OpenAI-compatible chat API, configured via SEMFORGE_LLM_BASE_URL and
SEMFORGE_LLM_API_KEY.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import yaml

from .spec import OutputSchema, SchemaType

SAFETY_MARGIN_TOKENS = 64
SPAN_KEEP_TOKENS = 32  # retained head/tail when a span is cut to its floor
ELLIPSIS = " … "


class ProviderError(RuntimeError):
    pass


class Timeout(ProviderError):
    pass


class SchemaViolation(ValueError):
    def __init__(self, attribute: str, reason: str):
        super().__init__(f"{attribute}: {reason}")
        self.attribute = attribute
        self.reason = reason


class BudgetInfeasible(ValueError):
    """Context limit cannot be met even with every span cut to its floor;
    the caller should drop sample documents entirely."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def to_obj(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ModelProfile:
    model_name: str
    context_limit_tokens: int = 128_000
    provider: str = "mock"  # mock | http_openai_compatible


@dataclass(frozen=True)
class MockRule:
    match: str
    response_template: str


class Provider(Protocol):
    def complete(self, messages: list[ChatMessage], model: str) -> str: ...


class MockProvider:
    """Regex-rule provider: first rule whose pattern matches the joined
    conversation text answers; the template may expand capture groups."""

    def __init__(self, rules: list[MockRule]):
        self.rules = [(re.compile(r.match, re.DOTALL), r.response_template) for r in rules]
        self._lock = threading.Lock()
        self.call_count = 0
        self.calls: list[str] = []

    def complete(self, messages: list[ChatMessage], model: str) -> str:
        text = "\n".join(m.content for m in messages)
        with self._lock:
            self.call_count += 1
            self.calls.append(text)
        for pattern, template in self.rules:
            m = pattern.search(text)
            if m:
                return m.expand(template)
        raise ProviderError("no mock rule matched the prompt")

    def reset_counter(self) -> None:
        with self._lock:
            self.call_count = 0
            self.calls = []


def load_mock_rules(path: str | Path) -> list[MockRule]:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError("mock rules file must be a YAML list")
    rules = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "match" not in item or "response" not in item:
            raise ValueError(f"rule {i}: needs 'match' and 'response'")
        rules.append(MockRule(str(item["match"]), str(item["response"])))
    return rules


class NullProvider:
    """Placeholder when no provider is configured; structural pipelines
    (unnest, split, code ops) never call it."""

    def complete(self, messages: list[ChatMessage], model: str) -> str:
        raise ProviderError("no LLM provider configured "
                            "(set SEMFORGE_LLM_BASE_URL or pass mock rules)")


class HttpProvider:
    """OpenAI-compatible chat completions over HTTP."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 timeout: float = 120.0):
        self.base_url = (base_url or os.environ.get("SEMFORGE_LLM_BASE_URL", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("SEMFORGE_LLM_API_KEY", "")
        self.timeout = timeout
        if not self.base_url:
            raise ProviderError("SEMFORGE_LLM_BASE_URL is not set")

    def complete(self, messages: list[ChatMessage], model: str) -> str:
        import httpx

        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                headers={"Authorization": f"Bearer {self.api_key}"},
                json={"model": model, "messages": [m.to_obj() for m in messages]},
                timeout=self.timeout,
            )
        except httpx.TimeoutException as e:
            raise Timeout(str(e)) from e
        except httpx.HTTPError as e:
            raise ProviderError(str(e)) from e
        if resp.status_code != 200:
            raise ProviderError(f"provider returned {resp.status_code}: {resp.text[:500]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as e:
            raise ProviderError(f"malformed provider response: {e}") from e


# --- token accounting --------------------------------------------------------

Tokenizer = Callable[[str], int]


def _heuristic_tokens(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


class Gateway:
    """Shared front door for every LLM interaction in the engine."""

    def __init__(self, provider: Provider, tokenizers: dict[str, Tokenizer] | None = None):
        self.provider = provider
        self.tokenizers = tokenizers or {}

    def count_tokens(self, text: str, profile: ModelProfile) -> int:
        tok = self.tokenizers.get(profile.model_name)
        if tok is not None:
            return tok(text)
        return _heuristic_tokens(text)

    def total_tokens(self, messages: list[ChatMessage], profile: ModelProfile) -> int:
        return sum(self.count_tokens(m.content, profile) for m in messages)

    def complete_text(self, messages: list[ChatMessage], profile: ModelProfile) -> str:
        return self.provider.complete(messages, profile.model_name)

    def complete_structured(self, messages: list[ChatMessage], schema: OutputSchema,
                            profile: ModelProfile) -> dict[str, Any]:
        """Ask for one fenced JSON object matching `schema`; parse with a
        repair pass; coerce and validate. One automatic re-ask on violation."""
        instruction = ChatMessage("system", schema_instruction(schema))
        convo = list(messages) + [instruction]
        reply = self.provider.complete(convo, profile.model_name)
        try:
            return parse_structured_reply(reply, schema)
        except SchemaViolation as violation:
            retry = convo + [
                ChatMessage("assistant", reply),
                ChatMessage("user",
                            f"Your reply violated the schema ({violation}). "
                            "Reply again with exactly one fenced JSON object matching the schema."),
            ]
            reply = self.provider.complete(retry, profile.model_name)
            return parse_structured_reply(reply, schema)

    # --- context fitting ------------------------------------------------

    def fit_to_context(self, messages: list[ChatMessage],
                       sample_doc_spans: list[tuple[int, int, int]],
                       limit: int, profile: ModelProfile) -> list[ChatMessage]:
        """Shrink embedded sample documents until the conversation fits.

        Spans address (message_index=0, start, end) character ranges in the
        first message only. Overflow plus a safety margin is split equally
        across spans (remainder one token each to the first spans); each
        span loses a centered middle slice, replaced by an ellipsis, always
        keeping a nonempty head and tail. Later messages are untouched.
        """
        total = self.total_tokens(messages, profile)
        if total <= limit:
            return list(messages)
        if not sample_doc_spans:
            raise BudgetInfeasible(f"no spans to truncate; need {total - limit} fewer tokens")
        spans = sorted(sample_doc_spans, key=lambda s: s[1])
        first = messages[0].content
        prev_end = 0
        for mi, start, end in spans:
            if mi != 0:
                raise ValueError("sample_doc_spans must address the first message")
            if not (0 <= start < end <= len(first)) or start < prev_end:
                raise ValueError("spans must be in-range and non-overlapping")
            prev_end = end

        span_texts = [first[s:e] for _, s, e in spans]
        floors = [self._floor_version(t, profile) for t in span_texts]
        caps = [self.count_tokens(t, profile) - self.count_tokens(f, profile)
                for t, f in zip(span_texts, floors)]
        caps = [max(0, c) for c in caps]

        min_total = self.total_tokens(
            [ChatMessage(messages[0].role, _splice(first, spans, floors))] + messages[1:], profile)
        if min_total > limit:
            raise BudgetInfeasible(
                f"even fully truncated the conversation needs {min_total} tokens (limit {limit})")

        overflow = total - limit + SAFETY_MARGIN_TOKENS
        targets = _water_fill(overflow, caps)
        new_texts = [self._truncate_middle(t, target, profile) if target > 0 else t
                     for t, target in zip(span_texts, targets)]
        fitted = ChatMessage(messages[0].role, _splice(first, spans, new_texts))
        result = [fitted] + list(messages[1:])
        if self.total_tokens(result, profile) > limit:
            # ceil interactions ate the margin; fall back to the floor state
            result = [ChatMessage(messages[0].role, _splice(first, spans, floors))] + list(messages[1:])
        return result

    def _chars_for_tokens(self, text: str, tokens: int, profile: ModelProfile,
                          from_start: bool) -> int:
        """Smallest char count whose standalone token count reaches `tokens`."""
        if tokens <= 0:
            return 0
        lo, hi = 1, len(text)
        count = (lambda k: self.count_tokens(text[:k], profile)) if from_start \
            else (lambda k: self.count_tokens(text[len(text) - k:], profile))
        if count(hi) < tokens:
            return hi
        while lo < hi:
            mid = (lo + hi) // 2
            if count(mid) >= tokens:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def _floor_version(self, text: str, profile: ModelProfile) -> str:
        """Span cut to its minimum: head/tail of 32 tokens each when the
        span has at least 64, else a single leading/trailing character."""
        n = self.count_tokens(text, profile)
        if n >= 2 * SPAN_KEEP_TOKENS:
            head = self._chars_for_tokens(text, SPAN_KEEP_TOKENS, profile, True)
            tail = self._chars_for_tokens(text, SPAN_KEEP_TOKENS, profile, False)
        else:
            head = tail = 1
        if head + tail >= len(text):
            return text
        return text[:head] + ELLIPSIS + text[len(text) - tail:]

    def _truncate_middle(self, text: str, target: int, profile: ModelProfile) -> str:
        """Remove a centered middle slice worth `target` tokens (binary
        search on character width; tokenizers are not character-linear)."""
        n = self.count_tokens(text, profile)
        if n >= 2 * SPAN_KEEP_TOKENS:
            min_head = self._chars_for_tokens(text, SPAN_KEEP_TOKENS, profile, True)
            min_tail = self._chars_for_tokens(text, SPAN_KEEP_TOKENS, profile, False)
        else:
            min_head = min_tail = 1
        wmax = len(text) - min_head - min_tail
        if wmax <= 0:
            return text

        def attempt(width: int) -> str:
            start = max(min_head, (len(text) - width) // 2)
            if start + width > len(text) - min_tail:
                start = len(text) - min_tail - width
            return text[:start] + ELLIPSIS + text[start + width:]

        def achieved(width: int) -> int:
            return n - self.count_tokens(attempt(width), profile)

        if achieved(wmax) < target:
            return attempt(wmax)
        lo, hi = 1, wmax
        while lo < hi:
            mid = (lo + hi) // 2
            if achieved(mid) >= target:
                hi = mid
            else:
                lo = mid + 1
        return attempt(lo)


def _splice(first: str, spans: list[tuple[int, int, int]], replacements: list[str]) -> str:
    out = []
    pos = 0
    for (_, start, end), repl in zip(spans, replacements):
        out.append(first[pos:start])
        out.append(repl)
        pos = end
    out.append(first[pos:])
    return "".join(out)


def _water_fill(amount: int, caps: list[int]) -> list[int]:
    """Split `amount` equally across spans, remainder one each to the first
    spans; spans that hit their cap spill the excess to the others."""
    k = len(caps)
    targets = [0] * k
    active = [i for i in range(k) if caps[i] > 0]
    remaining = amount
    while remaining > 0 and active:
        share, rem = divmod(remaining, len(active))
        provisional = {}
        for rank, i in enumerate(active):
            provisional[i] = share + (1 if rank < rem else 0)
        saturated = [i for i in active if targets[i] + provisional[i] >= caps[i]]
        if not saturated:
            for i in active:
                targets[i] += provisional[i]
            break
        for i in saturated:
            remaining -= caps[i] - targets[i]
            targets[i] = caps[i]
            active.remove(i)
    return targets


# --- structured reply parsing -------------------------------------------------

def schema_instruction(schema: OutputSchema) -> str:
    lines = [f"- {name}: {stype.to_text()}" for name, stype in schema.attrs]
    return (
        "Respond with exactly one fenced JSON object (```json ... ```) "
        "containing these attributes and nothing else:\n" + "\n".join(lines)
    )


_FENCE = re.compile(r"```(?:[A-Za-z0-9_-]+)?\s*(.*?)```", re.DOTALL)
_TRAILING_COMMA = re.compile(r",\s*([}\]])")


def _repair_candidates(reply: str) -> list[str]:
    candidates = []
    fenced = _FENCE.search(reply)
    if fenced:
        candidates.append(fenced.group(1).strip())
    stripped = reply.strip()
    candidates.append(stripped)
    start, end = stripped.find("{"), stripped.rfind("}")
    if start != -1 and end > start:
        candidates.append(stripped[start:end + 1])
    more = []
    for c in candidates:
        fixed = _TRAILING_COMMA.sub(r"\1", c)
        if fixed != c:
            more.append(fixed)
        if "'" in c and '"' not in c:
            more.append(_TRAILING_COMMA.sub(r"\1", c.replace("'", '"')))
    return candidates + more


_CONSTRAINED_SCALARS = ("boolean", "integer", "number", "enum")


def parse_structured_reply(reply: str, schema: OutputSchema) -> dict[str, Any]:
    obj: Any = _NO
    for candidate in _repair_candidates(reply):
        try:
            obj = json.loads(candidate)
            break
        except json.JSONDecodeError:
            continue
    if obj is _NO:
        if len(schema.attrs) == 1:
            # bare-token replies ("TRUE", "Medium") against a one-attribute
            # schema whose type constrains the token form
            name, stype = schema.attrs[0]
            if stype.kind in _CONSTRAINED_SCALARS:
                coerced = _coerce_scalar(reply.strip().strip("`").strip(), stype)
                if coerced is not _NO:
                    return {name: coerced}
        raise SchemaViolation("*", "reply is not valid JSON")
    if not isinstance(obj, dict):
        if len(schema.attrs) == 1:
            name, stype = schema.attrs[0]
            coerced = _coerce(obj, stype)
            if coerced is not _NO:
                return {name: coerced}
            raise SchemaViolation(name, f"could not interpret reply as {stype.to_text()}")
        raise SchemaViolation("*", "reply is not a JSON object")
    out: dict[str, Any] = {}
    for name, stype in schema.attrs:
        if name not in obj:
            raise SchemaViolation(name, "missing attribute")
        coerced = _coerce(obj[name], stype)
        if coerced is _NO:
            raise SchemaViolation(name, f"expected {stype.to_text()}, got {obj[name]!r}")
        out[name] = coerced
    return out


_NO = object()  # sentinel: coercion failed

_TRUE_WORDS = ("true", "yes")
_FALSE_WORDS = ("false", "no")


def _coerce_scalar(value: Any, stype: SchemaType) -> Any:
    if stype.kind == "boolean":
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.strip().lower().rstrip(".")
            if low in _TRUE_WORDS:
                return True
            if low in _FALSE_WORDS:
                return False
        return _NO
    if stype.kind == "integer":
        if isinstance(value, bool):
            return _NO
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(value.strip())
            except ValueError:
                return _NO
        return _NO
    if stype.kind == "number":
        if isinstance(value, bool):
            return _NO
        if isinstance(value, (int, float)):
            return value
        if isinstance(value, str):
            try:
                return float(value.strip())
            except ValueError:
                return _NO
        return _NO
    if stype.kind == "string":
        if isinstance(value, str):
            return value
        if isinstance(value, (int, float, bool)):
            return json.dumps(value)
        return _NO
    if stype.kind == "enum":
        if not isinstance(value, str):
            return _NO
        for literal in stype.enum_values:
            if value.strip().lower() == literal.lower():
                return literal
        return _NO
    return _NO


def _coerce(value: Any, stype: SchemaType) -> Any:
    if stype.kind == "list":
        items = value if isinstance(value, list) else [value]
        out = []
        for item in items:
            coerced = _coerce_scalar(item, stype.item)
            if coerced is _NO:
                return _NO
            out.append(coerced)
        return out
    if stype.kind == "object_list":
        if not isinstance(value, list):
            return _NO
        out = []
        for item in value:
            if not isinstance(item, dict):
                return _NO
            row = {}
            for fname, ftype in stype.fields:
                if fname not in item:
                    return _NO
                coerced = _coerce_scalar(item[fname], ftype)
                if coerced is _NO:
                    return _NO
                row[fname] = coerced
            out.append(row)
        return out
    return _coerce_scalar(value, stype)
