import pytest
from hypothesis import given, strategies as st

from semforge.templates import (ForLoop, Interp, Literal, MissingPath, NotIterable,
                                TemplateSyntaxError, parse_template, stringify)


class TestParse:
    def test_literal_and_interp(self):
        t = parse_template("Extract from {{ input.src }}")
        assert isinstance(t.nodes[0], Literal)
        assert t.nodes[0].text == "Extract from "
        assert isinstance(t.nodes[1], Interp)
        assert t.nodes[1].path == ["input", "src"]

    def test_unclosed_brace_positioned(self):
        with pytest.raises(TemplateSyntaxError) as err:
            parse_template("{{ input.src }")
        assert err.value.line == 1
        assert err.value.col == 1

    def test_for_loop_ast(self):
        # oracle: hand-built ast
        t = parse_template("{% for doc in inputs %}{{ doc.theme }}{% endfor %}")
        assert t.nodes == [ForLoop("doc", ["inputs"],
                                   [Interp(["doc", "theme"])])]

    def test_nested_once_allowed(self):
        src = ("{% for d in inputs %}{% for s in d %}{{ s.x }}{% endfor %}{% endfor %}")
        parse_template(src)

    def test_triple_nesting_rejected(self):
        src = ("{% for a in xs %}{% for b in a %}{% for c in b %}"
               "{{ c }}{% endfor %}{% endfor %}{% endfor %}")
        with pytest.raises(TemplateSyntaxError):
            parse_template(src)

    def test_stray_endfor(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("text {% endfor %}")

    def test_missing_endfor(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("{% for d in inputs %}{{ d.x }}")

    def test_bad_path(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("{{ input..src }}")
        with pytest.raises(TemplateSyntaxError):
            parse_template("{{ 1bad }}")

    def test_error_position_multiline(self):
        with pytest.raises(TemplateSyntaxError) as err:
            parse_template("line one\nline two {{ broken")
        assert err.value.line == 2
        assert err.value.col == 10


class TestRender:
    def test_interp_string_verbatim(self):
        t = parse_template("{{ input.src }}")
        assert t.render({"input": {"src": "hello"}}) == "hello"

    def test_loop_in_input_order(self):
        t = parse_template("{% for doc in inputs %}[{{ doc.theme }}]{% endfor %}")
        ctx = {"inputs": [{"theme": "a"}, {"theme": "b"}, {"theme": "c"}]}
        assert t.render(ctx) == "[a][b][c]"

    def test_missing_path_named(self):
        t = parse_template("{{ input.gone }}")
        with pytest.raises(MissingPath) as err:
            t.render({"input": {}})
        assert err.value.path == "input.gone"

    def test_loop_over_non_list(self):
        t = parse_template("{% for x in input.v %}{{ x }}{% endfor %}")
        with pytest.raises(NotIterable):
            t.render({"input": {"v": "not a list"}})

    def test_stringification_rules(self):
        t = parse_template("{{ i.a }}|{{ i.b }}|{{ i.c }}|{{ i.d }}|{{ i.e }}")
        out = t.render({"i": {"a": True, "b": 3, "c": 2.5, "d": ["x", 1],
                              "e": {"k": "v"}}})
        assert out == 'true|3|2.5|["x",1]|{"k":"v"}'

    def test_null_renders_as_null(self):
        assert stringify(None) == "null"


class TestStaticPaths:
    def test_loop_var_substitution(self):
        t = parse_template("{% for doc in inputs %}{{ doc.theme }}{% endfor %}")
        assert t.referenced_paths() == [("inputs",), ("inputs", "[]", "theme")]

    def test_plain_paths(self):
        t = parse_template("{{ input.src }} and {{ reduce_key }}")
        assert t.referenced_paths() == [("input", "src"), ("reduce_key",)]


@given(st.text(max_size=200).filter(lambda s: "{{" not in s and "{%" not in s))
def test_literal_templates_render_to_themselves(source):
    t = parse_template(source)
    assert t.render({}) == source


@given(st.dictionaries(st.sampled_from(["a", "b", "c"]),
                       st.one_of(st.text(max_size=10), st.integers()), min_size=3))
def test_render_deterministic(attrs):
    t = parse_template("x {{ input.a }} y {{ input.b }} z {{ input.c }}")
    ctx = {"input": attrs}
    assert t.render(ctx) == t.render(ctx)
