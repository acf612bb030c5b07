import json
import random
import re

import pytest

from semforge.gateway import Gateway, ModelProfile
from semforge.model import Document, canonical_json
from semforge.operators import (OpContext, ResolveTooManyPairs, cluster_by_matches,
                                jaccard, predicted_reduce_batches, run_filter,
                                run_gather, run_map, run_operation, run_reduce,
                                run_resolve, run_split, run_unnest, split_text)
from semforge.spec import OperationSpec, OutputSchema, ResolveConfig, SplitConfig

from tests.conftest import ScriptedProvider, mock_gateway

PROFILE = ModelProfile("mock-small", 128_000, "mock")


def ctx_for(gateway, profile=PROFILE, parallel=1):
    return OpContext(gateway=gateway, profile=profile, max_parallel=parallel)


def docs_with(attr, values):
    return [Document(f"d{i}", {attr: v}) for i, v in enumerate(values)]


class TestMap:
    def map_op(self):
        return OperationSpec(
            name="extract", kind="map",
            prompt="Extract complaint themes and their supporting quotes. {{ input.review }}",
            output_schema=OutputSchema.of({"themes": "list[string]",
                                           "supporting_quotes": "list[string]"}))

    def test_adds_attributes_preserving_order(self):
        gw = mock_gateway([
            ("fast", '{"themes": ["pace"], "supporting_quotes": ["talks too fast"]}'),
            ("[\\s\\S]*", '{"themes": ["other"], "supporting_quotes": []}'),
        ])
        docs = docs_with("review", ["too fast", "fine course"])
        out = run_map(self.map_op(), docs, ctx_for(gw))
        assert [d.id for d in out] == ["d0", "d1"]
        assert out[0].attrs["themes"] == ["pace"]
        assert list(out[0].attrs) == ["review", "themes", "supporting_quotes"]

    def test_zero_docs_zero_calls(self):
        gw = mock_gateway([("[\\s\\S]*", "{}")])
        out = run_map(self.map_op(), [], ctx_for(gw))
        assert out == []
        assert gw.provider.call_count == 0

    def test_ten_docs_ten_calls(self):
        gw = mock_gateway([("[\\s\\S]*", '{"themes": [], "supporting_quotes": []}')])
        docs = docs_with("review", [f"review {i}" for i in range(10)])
        run_map(self.map_op(), docs, ctx_for(gw))
        assert gw.provider.call_count == 10

    def test_error_marks_doc_and_continues(self):
        gw = mock_gateway([("good", '{"themes": ["t"], "supporting_quotes": []}')])
        docs = docs_with("review", ["good one", "no rule matches this"])
        out = run_map(self.map_op(), docs, ctx_for(gw))
        assert len(out) == 2
        assert "_error.extract" in out[1].attrs
        assert "themes" not in out[1].attrs

    def test_existing_key_overwritten_in_place(self):
        gw = mock_gateway([("[\\s\\S]*", '{"themes": ["new"], "supporting_quotes": []}')])
        docs = [Document("d0", {"themes": ["old"], "review": "x"})]
        out = run_map(self.map_op(), docs, ctx_for(gw))
        assert out[0].attrs["themes"] == ["new"]
        assert list(out[0].attrs) == ["themes", "review", "supporting_quotes"]


class TestFilter:
    def filter_op(self):
        return OperationSpec(name="keep_relevant", kind="filter",
                             prompt="Keep? {{ input.n }}",
                             output_schema=OutputSchema.of({"keep": "boolean"}))

    def test_all_true_identity(self):
        gw = mock_gateway([("[\\s\\S]*", "true")])
        docs = docs_with("n", list(range(4)))
        out = run_filter(self.filter_op(), docs, ctx_for(gw))
        assert out == docs
        assert all("keep" not in d.attrs for d in out)

    def test_all_false_empty(self):
        gw = mock_gateway([("[\\s\\S]*", "false")])
        assert run_filter(self.filter_op(), docs_with("n", [1, 2]), ctx_for(gw)) == []

    def test_alternating_keeps_even_indices(self):
        # mock fixture oracle: keep even n
        gw = mock_gateway([(r"Keep\? (0|2|4|6|8)\b", "TRUE"), ("[\\s\\S]*", "FALSE")])
        docs = docs_with("n", list(range(10)))
        out = run_filter(self.filter_op(), docs, ctx_for(gw))
        assert [d.attrs["n"] for d in out] == [0, 2, 4, 6, 8]
        assert gw.provider.call_count == 10

    def test_fail_open_on_error(self):
        gw = mock_gateway([(r"Keep\? 0", "true")])  # doc 1 matches no rule
        docs = docs_with("n", [0, 1])
        out = run_filter(self.filter_op(), docs, ctx_for(gw))
        assert len(out) == 2
        assert "_error.keep_relevant" in out[1].attrs


class TestReduce:
    def reduce_op(self):
        return OperationSpec(
            name="summarize", kind="reduce", reduce_key="theme",
            prompt="Summarize theme {{ reduce_key }}: "
                   "{% for r in inputs %}<{{ r.quote }}>{% endfor %}",
            output_schema=OutputSchema.of({"summary": "string"}))

    def test_one_output_per_group_first_appearance_order(self):
        gw = mock_gateway([("[\\s\\S]*", '{"summary": "s"}')])
        docs = [Document(f"d{i}", {"theme": t, "quote": f"q{i}"})
                for i, t in enumerate(["b", "a", "b", "c", "a"])]
        out = run_reduce(self.reduce_op(), docs, ctx_for(gw))
        assert [d.attrs["theme"] for d in out] == ["b", "a", "c"]
        assert all(d.attrs["summary"] == "s" for d in out)

    def test_single_group_single_call(self):
        gw = mock_gateway([("[\\s\\S]*", '{"summary": "s"}')])
        docs = [Document(f"d{i}", {"theme": "t", "quote": "q"}) for i in range(5)]
        run_reduce(self.reduce_op(), docs, ctx_for(gw))
        assert gw.provider.call_count == 1

    def test_missing_key_groups_as_null(self):
        gw = mock_gateway([("[\\s\\S]*", '{"summary": "s"}')])
        docs = [Document("d0", {"quote": "q"}), Document("d1", {"theme": None, "quote": "r"})]
        out = run_reduce(self.reduce_op(), docs, ctx_for(gw))
        assert len(out) == 1
        assert out[0].attrs["theme"] is None

    def test_folding_batch_count_matches_oracle(self):
        # small context forces folding; oracle below repacks independently
        profile = ModelProfile("mock-small", 120, "mock")
        gw = mock_gateway([("[\\s\\S]*", '{"summary": "acc"}')])
        docs = [Document(f"d{i}", {"theme": "t", "quote": "x" * 100}) for i in range(7)]
        op = self.reduce_op()

        def render(batch, acc):
            body = "".join(f"<{d.attrs['quote']}>" for d in batch)
            text = f'Summarize theme t: {body}'
            if acc is not None:
                text += "\n\nPreviously accumulated output: " + canonical_json(acc)
            return text

        def oracle_batches():
            remaining = list(docs)
            acc = None
            batches = 0
            while remaining:
                size = 0
                for k in range(len(remaining), 0, -1):
                    if gw.count_tokens(render(remaining[:k], acc), profile) <= 120:
                        size = k
                        break
                size = max(size, 1)
                batches += 1
                acc = {"summary": "acc"}
                remaining = remaining[size:]
            return batches

        expected = oracle_batches()
        assert expected > 1
        out = run_reduce(op, docs, ctx_for(gw, profile))
        assert gw.provider.call_count == expected
        assert len(out) == 1
        assert predicted_reduce_batches(op, docs, ctx_for(gw, profile),
                                        {"summary": "acc"}) == expected

    def test_accumulated_binding_renderable(self):
        profile = ModelProfile("mock-small", 60, "mock")
        gw = mock_gateway([("[\\s\\S]*", '{"summary": "z"}')])
        op = OperationSpec(
            name="s", kind="reduce", reduce_key="theme",
            prompt="K {{ reduce_key }} {% for r in inputs %}<{{ r.quote }}>{% endfor %}",
            output_schema=OutputSchema.of({"summary": "string"}))
        docs = [Document(f"d{i}", {"theme": "t", "quote": "y" * 80}) for i in range(3)]
        out = run_reduce(op, docs, ctx_for(gw, profile))
        assert len(out) == 1 and out[0].attrs["summary"] == "z"


class TestResolve:
    def resolve_op(self, threshold=0.0, target="theme"):
        return OperationSpec(
            name="dedupe", kind="resolve",
            resolve_config=ResolveConfig(
                compare_prompt="MATCH? A={{ input1.%s }} B={{ input2.%s }}" % (target, target),
                resolution_prompt="CANON: {% for v in inputs %}[{{ v." + target + " }}]{% endfor %}",
                target_attribute=target,
                blocking_threshold=threshold))

    def test_paper_example_merges_variants(self):
        gw = mock_gateway([
            (r"MATCH\?[\s\S]*talks too fast[\s\S]*speaks quickly", "True"),
            (r"MATCH\?[\s\S]*speaks quickly[\s\S]*talks too fast", "True"),
            (r"MATCH\?", "False"),
            ("CANON:", '{"theme": "professor speaks too fast"}'),
        ])
        docs = docs_with("theme", ["professor talks too fast", "professor speaks quickly",
                                   "too much homework"])
        out = run_resolve(self.resolve_op(), docs, ctx_for(gw))
        assert out[0].attrs["theme"] == "professor speaks too fast"
        assert out[1].attrs["theme"] == "professor speaks too fast"
        assert out[2].attrs["theme"] == "too much homework"

    def test_zero_or_one_value_no_calls(self):
        gw = mock_gateway([("[\\s\\S]*", "True")])
        out = run_resolve(self.resolve_op(), docs_with("theme", ["only"]), ctx_for(gw))
        assert out[0].attrs["theme"] == "only"
        assert gw.provider.call_count == 0

    def test_transitive_closure_small_brute_force(self):
        # (a,b) and (b,c) accepted, (a,c) rejected -> one cluster by transitivity
        gw = mock_gateway([
            (r"MATCH\? A=a B=b", "True"),
            (r"MATCH\? A=b B=c", "True"),
            (r"MATCH\?", "False"),
            ("CANON:", '{"theme": "abc"}'),
        ])
        docs = docs_with("theme", ["a", "b", "c"])
        out = run_resolve(self.resolve_op(), docs, ctx_for(gw))
        assert [d.attrs["theme"] for d in out] == ["abc", "abc", "abc"]

    def test_randomized_closure_matches_union_find_oracle(self):
        for seed in range(30):
            rnd = random.Random(seed)
            n = rnd.randint(2, 8)
            values = [f"val{i}" for i in range(n)]
            decision = {}
            for i in range(n):
                for j in range(i + 1, n):
                    decision[(i, j)] = rnd.random() < 0.4

            def fake(text):
                m = re.search(r"MATCH\? A=val(\d+) B=val(\d+)", text)
                if m:
                    i, j = sorted((int(m.group(1)), int(m.group(2))))
                    return "True" if decision[(i, j)] else "False"
                m = re.search(r"CANON: ?((?:\[val\d+\])+)", text)
                if m:
                    first = re.search(r"val\d+", m.group(1)).group(0)
                    return json.dumps({"theme": f"canon-{first}"})
                raise AssertionError(f"unexpected prompt: {text[:80]}")

            provider = ScriptedProvider(fake)
            gw = Gateway(provider)
            docs = docs_with("theme", values)
            out = run_resolve(self.resolve_op(), docs, ctx_for(gw))

            # brute-force union-find closure
            parent = list(range(n))

            def find(x):
                while parent[x] != x:
                    x = parent[x]
                return x

            for (i, j), matched in decision.items():
                if matched:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
            expected_clusters = {}
            for i in range(n):
                expected_clusters.setdefault(find(i), []).append(i)

            for members in expected_clusters.values():
                outputs = {out[i].attrs["theme"] for i in members}
                assert len(outputs) == 1
                if len(members) >= 2:
                    assert outputs.pop() == f"canon-val{min(members)}"
                else:
                    assert outputs.pop() == f"val{members[0]}"

            pair_count = n * (n - 1) // 2
            multi = sum(1 for m in expected_clusters.values() if len(m) >= 2)
            assert provider.call_count == pair_count + multi

    def test_list_valued_elementwise(self):
        gw = mock_gateway([
            (r"MATCH\?[\s\S]*fast[\s\S]*quick", "True"),
            (r"MATCH\?", "False"),
            ("CANON:", '{"themes": "pace"}'),
        ])
        op = self.resolve_op(target="themes")
        docs = [Document("d0", {"themes": ["fast", "hw"]}),
                Document("d1", {"themes": ["quick"]})]
        out = run_resolve(op, docs, ctx_for(gw))
        assert out[0].attrs["themes"] == ["pace", "hw"]
        assert out[1].attrs["themes"] == ["pace"]

    def test_blocking_threshold_prunes(self):
        gw = mock_gateway([(r"MATCH\?", "False")])
        docs = docs_with("theme", ["alpha beta", "alpha gamma", "delta"])
        run_resolve(self.resolve_op(threshold=0.3), docs, ctx_for(gw))
        # only the pair sharing "alpha" passes jaccard >= 0.3
        assert gw.provider.call_count == 1

    def test_pair_cap(self, monkeypatch):
        monkeypatch.setattr("semforge.operators.MAX_RESOLVE_COMPARISONS", 2)
        gw = mock_gateway([(r"[\s\S]*", "False")])
        docs = docs_with("theme", ["a", "b", "c"])  # 3 pairs > cap 2
        with pytest.raises(ResolveTooManyPairs):
            run_resolve(self.resolve_op(), docs, ctx_for(gw))

    def test_comparison_error_counts_as_non_match(self):
        gw = mock_gateway([("CANON:", '{"theme": "x"}')])  # no MATCH rule -> errors
        docs = docs_with("theme", ["a", "b"])
        out = run_resolve(self.resolve_op(), docs, ctx_for(gw))
        assert [d.attrs["theme"] for d in out] == ["a", "b"]

    def test_jaccard(self):
        assert jaccard("professor talks fast", "professor talks fast") == 1.0
        assert jaccard("a b", "c d") == 0.0
        assert jaccard("", "") == 1.0
        assert 0.0 < jaccard("knee pain", "pain") < 1.0


class TestUnnest:
    def unnest_op(self):
        return OperationSpec(name="explode", kind="unnest", unnest_attribute="symptoms")

    def test_mixed_lengths(self):
        docs = [Document("a", {"symptoms": ["s1", "s2"], "keep": 1}),
                Document("b", {"symptoms": []}),
                Document("c", {"symptoms": ["s3", "s4", "s5"]})]
        out = run_unnest(self.unnest_op(), docs)
        assert len(out) == 5
        assert [d.id for d in out] == ["a#0", "a#1", "c#0", "c#1", "c#2"]
        assert out[0].attrs == {"symptoms": "s1", "keep": 1}

    def test_all_empty(self):
        docs = [Document("a", {"symptoms": []}), Document("b", {"symptoms": None})]
        assert run_unnest(self.unnest_op(), docs) == []

    def test_non_list_singleton(self):
        out = run_unnest(self.unnest_op(), [Document("a", {"symptoms": "just one"})])
        assert len(out) == 1
        assert out[0].attrs["symptoms"] == "just one"

    def test_selectivity_fixture(self, symptoms_dataset):
        out = run_unnest(self.unnest_op(), symptoms_dataset.docs)
        assert len(symptoms_dataset.docs) == 10
        assert len(out) == 47


class TestSplitGather:
    def test_under_budget_identity(self):
        gw = mock_gateway([])
        op = OperationSpec(name="s", kind="split", split_config=SplitConfig("src", 1000))
        docs = [Document("a", {"src": "short text"})]
        out = run_split(op, docs, ctx_for(gw))
        assert len(out) == 1
        assert out[0].attrs["src"] == "short text"
        assert out[0].attrs["_chunk_index"] == 0
        assert out[0].attrs["_parent_id"] == "a"

    def test_reassembly_oracle(self):
        gw = mock_gateway([])
        count = lambda t: gw.count_tokens(t, PROFILE)
        text = " ".join(f"word{i}" for i in range(2000))  # ~2500+ tokens
        assert count(text) > 2500
        chunks = split_text(text, 1000, count)
        assert len(chunks) >= 3
        assert "".join(chunks) == text
        assert all(count(c) <= 1000 for c in chunks)

    def test_hard_cut_without_whitespace(self):
        gw = mock_gateway([])
        count = lambda t: gw.count_tokens(t, PROFILE)
        text = "x" * 1000
        chunks = split_text(text, 50, count)
        assert "".join(chunks) == text
        assert all(count(c) <= 50 for c in chunks)

    def test_split_map_reduce_restores_count(self):
        profile = ModelProfile("mock-small", 1000, "mock")
        gw = mock_gateway([
            ("EXTRACT", '{"points": ["p"]}'),
            ("UNIFY", '{"points": ["merged"]}'),
        ])
        docs = [Document(f"d{i}", {"src": ("tok " * 600)}) for i in range(4)]
        split = OperationSpec(name="s", kind="split", split_config=SplitConfig("src", 100))
        mapped = OperationSpec(name="m", kind="map", prompt="EXTRACT {{ input.src }}",
                               output_schema=OutputSchema.of({"points": "list[string]"}))
        reduce_op = OperationSpec(name="u", kind="reduce", reduce_key="_parent_id",
                                  prompt="UNIFY {% for r in inputs %}{{ r.points }}{% endfor %}",
                                  output_schema=OutputSchema.of({"points": "list[string]"}))
        ctx = ctx_for(gw, profile)
        out = run_split(split, docs, ctx)
        assert len(out) > 4
        out = run_map(mapped, out, ctx)
        out = run_reduce(reduce_op, out, ctx)
        assert len(out) == 4  # one row per original document

    def test_gather_groups_by_parent(self):
        docs = [Document("a#0", {"_parent_id": "a", "_chunk_index": 0}),
                Document("b#0", {"_parent_id": "b", "_chunk_index": 0}),
                Document("a#1", {"_parent_id": "a", "_chunk_index": 1})]
        out = run_gather(docs)
        assert [d.id for d in out] == ["a#0", "a#1", "b#0"]


class TestCodeOps:
    def test_code_filter_contains(self):
        op = OperationSpec(name="cf", kind="code_filter",
                           code_expr='contains(lower(input.summary), "back pain")')
        docs = [Document("a", {"summary": "Back Pain noted"}),
                Document("b", {"summary": "headache"})]
        out = run_operation(op, docs, ctx_for(mock_gateway([])))
        assert [d.id for d in out] == ["a"]

    def test_code_map_length(self):
        op = OperationSpec(name="cm", kind="code_map",
                           code_expr="{n: length(input.symptoms)}")
        out = run_operation(op, [Document("a", {"symptoms": ["a", "b"]})],
                            ctx_for(mock_gateway([])))
        assert out[0].attrs["n"] == 2

    def test_code_reduce_count(self):
        op = OperationSpec(
            name="cr", kind="code_reduce", reduce_key="k",
            code_expr="{count: count(inputs)}")
        docs = [Document(f"d{i}", {"k": "g", "xs": v})
                for i, v in enumerate([["knee pain"], ["knee pain"], ["back pain"]])]
        out = run_operation(op, docs, ctx_for(mock_gateway([])))
        assert out[0].attrs == {"k": "g", "count": 3}

    def test_code_reduce_distinct_values(self):
        # distinct over the multiset of per-doc values
        op = OperationSpec(
            name="cr", kind="code_reduce", reduce_key="k",
            code_expr="{values: distinct([inputs[0].x, inputs[1].x, inputs[2].x])}")
        docs = [Document(f"d{i}", {"k": "g", "x": v})
                for i, v in enumerate(["knee pain", "knee pain", "back pain"])]
        out = run_operation(op, docs, ctx_for(mock_gateway([])))
        assert out[0].attrs["values"] == ["knee pain", "back pain"]

    def test_code_map_error_marked(self):
        op = OperationSpec(name="cm", kind="code_map", code_expr="{n: input.gone}")
        out = run_operation(op, [Document("a", {})], ctx_for(mock_gateway([])))
        assert "_error.cm" in out[0].attrs


class TestParallelismDeterminism:
    def test_order_preserved_bound_1_vs_16(self):
        rules = [(f"R{i}\\b", json.dumps({"themes": [f"t{i}"], "supporting_quotes": []}))
                 for i in range(20)] + [("[\\s\\S]*", '{"themes": [], "supporting_quotes": []}')]
        op = OperationSpec(name="m", kind="map", prompt="{{ input.review }}",
                           output_schema=OutputSchema.of({"themes": "list[string]",
                                                          "supporting_quotes": "list[string]"}))
        docs = docs_with("review", [f"R{i} text" for i in range(20)])
        out1 = run_map(op, docs, ctx_for(mock_gateway(rules), parallel=1))
        out16 = run_map(op, docs, ctx_for(mock_gateway(rules), parallel=16))
        assert [d.attrs for d in out1] == [d.attrs for d in out16]
        assert [d.attrs["themes"] for d in out1] == [[f"t{i}"] for i in range(20)]
