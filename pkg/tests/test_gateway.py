import math
import random
import re

import pytest
from hypothesis import given, strategies as st

from semforge.gateway import (BudgetInfeasible, ChatMessage, Gateway, MockProvider,
                              MockRule, ModelProfile, ProviderError, SchemaViolation,
                              parse_structured_reply, schema_instruction)
from semforge.spec import OutputSchema

from tests.conftest import ScriptedProvider, mock_gateway

PROFILE = ModelProfile("mock-small", 128_000, "mock")


class TestMockProvider:
    def test_first_match_wins_and_counts(self):
        gw = mock_gateway([("alpha", "A"), ("alpha|beta", "B"), ("[\\s\\S]*", "D")])
        assert gw.complete_text([ChatMessage("user", "alpha beta")], PROFILE) == "A"
        assert gw.complete_text([ChatMessage("user", "beta")], PROFILE) == "B"
        assert gw.complete_text([ChatMessage("user", "zzz")], PROFILE) == "D"
        assert gw.provider.call_count == 3

    def test_capture_group_expansion(self):
        gw = mock_gateway([(r"name=(\w+)", r'{"who": "\1"}')])
        out = gw.complete_structured([ChatMessage("user", "name=ada")],
                                     OutputSchema.of({"who": "string"}), PROFILE)
        assert out == {"who": "ada"}

    def test_determinism(self):
        gw = mock_gateway([("x", "same"), ("[\\s\\S]*", "dflt")])
        msgs = [ChatMessage("user", "x marks")]
        assert all(gw.complete_text(msgs, PROFILE) == "same" for _ in range(5))


class TestTokenCounting:
    def test_empty(self):
        gw = mock_gateway([])
        assert gw.count_tokens("", PROFILE) == 0

    def test_eight_bytes_is_two(self):
        gw = mock_gateway([])
        assert gw.count_tokens("abcdefgh", PROFILE) == 2

    def test_ceil(self):
        gw = mock_gateway([])
        assert gw.count_tokens("abc", PROFILE) == 1
        assert gw.count_tokens("abcde", PROFILE) == 2

    @given(st.text(max_size=60), st.text(max_size=60))
    def test_additive_monotone(self, a, b):
        gw = mock_gateway([])
        assert gw.count_tokens(a + b, PROFILE) >= max(gw.count_tokens(a, PROFILE),
                                                      gw.count_tokens(b, PROFILE))


class TestStructured:
    def test_fenced_json(self):
        schema = OutputSchema.of({"themes": "list[string]", "supporting_quotes": "list[string]"})
        reply = '```json\n{"themes": ["pace"], "supporting_quotes": ["talks too fast"]}\n```'
        out = parse_structured_reply(reply, schema)
        assert out == {"themes": ["pace"], "supporting_quotes": ["talks too fast"]}

    def test_bare_true_boolean_coercion(self):
        out = parse_structured_reply("TRUE", OutputSchema.of({"keep": "boolean"}))
        assert out == {"keep": True}

    def test_enum_canonicalized(self):
        schema = OutputSchema.of({"level": "enum(low, medium, high)"})
        out = parse_structured_reply('{"level": "Medium"}', schema)
        assert out == {"level": "medium"}

    def test_integer_string_coerced(self):
        out = parse_structured_reply('{"n": "42"}', OutputSchema.of({"n": "integer"}))
        assert out == {"n": 42}

    def test_trailing_comma_repaired(self):
        out = parse_structured_reply('{"a": "x",}', OutputSchema.of({"a": "string"}))
        assert out == {"a": "x"}

    def test_missing_attribute_violation(self):
        with pytest.raises(SchemaViolation) as err:
            parse_structured_reply('{"other": 1}', OutputSchema.of({"a": "string"}))
        assert err.value.attribute == "a"

    def test_object_list(self):
        schema = OutputSchema.of({"meds": "list[{name: string, dose: string}]"})
        out = parse_structured_reply('{"meds": [{"name": "x", "dose": "200mg"}]}', schema)
        assert out["meds"][0]["dose"] == "200mg"

    def test_scalar_wrapped_into_list(self):
        out = parse_structured_reply('{"themes": "pace"}',
                                     OutputSchema.of({"themes": "list[string]"}))
        assert out == {"themes": ["pace"]}

    def test_one_reask_then_error(self):
        replies = iter(['not json at all {', '{"a": "fixed"}'])
        provider = ScriptedProvider(lambda text: next(replies))
        gw = Gateway(provider)
        out = gw.complete_structured([ChatMessage("user", "q")],
                                     OutputSchema.of({"a": "string"}), PROFILE)
        assert out == {"a": "fixed"}
        assert provider.call_count == 2

    def test_reask_failure_raises(self):
        provider = ScriptedProvider(lambda text: "garbage {{{")
        gw = Gateway(provider)
        with pytest.raises(SchemaViolation):
            gw.complete_structured([ChatMessage("user", "q")],
                                   OutputSchema.of({"a": "list[string]"}), PROFILE)
        assert provider.call_count == 2

    def test_schema_instruction_lists_attrs(self):
        text = schema_instruction(OutputSchema.of({"a": "string", "b": "integer"}))
        assert "- a: string" in text and "- b: integer" in text


def spanned_message(span_texts, sep="#SEP#"):
    """First-message content with known span positions."""
    content = ""
    spans = []
    for text in span_texts:
        content += sep
        start = len(content)
        content += text
        spans.append((0, start, start + len(text)))
    content += sep
    return content, spans


def extract_spans(content, k, sep="#SEP#"):
    parts = content.split(sep)
    assert len(parts) == k + 2
    return parts[1:-1]


class TestFitToContext:
    def setup_method(self):
        self.gw = mock_gateway([])

    def tok(self, s):
        return self.gw.count_tokens(s, PROFILE)

    def test_under_limit_identity(self):
        msgs = [ChatMessage("user", "short"), ChatMessage("assistant", "ok")]
        out = self.gw.fit_to_context(msgs, [], 1000, PROFILE)
        assert out == msgs

    def test_two_equal_spans_reduced_equally(self):
        span = "word " * 400  # 2000 chars -> 500 tokens
        content, spans = spanned_message([span, span])
        msgs = [ChatMessage("user", content), ChatMessage("user", "tail msg")]
        total = self.gw.total_tokens(msgs, PROFILE)
        limit = total - 100  # overflow 100 before margin
        out = self.gw.fit_to_context(msgs, spans, limit, PROFILE)
        assert self.gw.total_tokens(out, PROFILE) <= limit
        assert out[1] == msgs[1]
        new_spans = extract_spans(out[0].content, 2)
        reductions = [self.tok(span) - self.tok(ns) for ns in new_spans]
        assert abs(reductions[0] - reductions[1]) <= 1
        for ns in new_spans:
            assert "…" in ns
            assert ns.split("…")[0].strip()
            assert ns.split("…")[-1].strip()

    def test_three_span_remainder_rule(self):
        # oracle for the remainder rule: overflow 10 over 3 spans -> 4,3,3
        from semforge.gateway import _water_fill
        assert _water_fill(10, [100, 100, 100]) == [4, 3, 3]
        assert _water_fill(9, [100, 100, 100]) == [3, 3, 3]
        assert _water_fill(11, [100, 100, 100]) == [4, 4, 3]

    def test_water_fill_saturation_spills(self):
        from semforge.gateway import _water_fill
        assert _water_fill(10, [2, 100, 100]) == [2, 4, 4]

    def test_idempotent(self):
        span = "tok " * 500
        content, spans = spanned_message([span])
        msgs = [ChatMessage("user", content)]
        limit = self.gw.total_tokens(msgs, PROFILE) - 50
        once = self.gw.fit_to_context(msgs, spans, limit, PROFILE)
        twice = self.gw.fit_to_context(once, spans, limit, PROFILE)
        assert once == twice

    def test_budget_infeasible(self):
        span = "word " * 100
        content, spans = spanned_message([span])
        msgs = [ChatMessage("user", content)]
        with pytest.raises(BudgetInfeasible):
            self.gw.fit_to_context(msgs, spans, 10, PROFILE)

    def test_no_spans_over_limit(self):
        msgs = [ChatMessage("user", "x" * 4000)]
        with pytest.raises(BudgetInfeasible):
            self.gw.fit_to_context(msgs, [], 100, PROFILE)

    def test_floor_keeps_head_and_tail(self):
        span = "abcd " * 300  # 1500 chars, 375 tokens
        content, spans = spanned_message([span])
        msgs = [ChatMessage("user", content)]
        # force cut to floor: limit just above the floored total
        floored = self.gw._floor_version(span, PROFILE)
        min_total = self.tok(content.replace(span, floored))
        out = self.gw.fit_to_context(msgs, spans, min_total + 70, PROFILE)
        new_span = extract_spans(out[0].content, 1)[0]
        head, tail = new_span.split("…")[0], new_span.split("…")[-1]
        assert self.tok(head) >= 32
        assert self.tok(tail) >= 32
