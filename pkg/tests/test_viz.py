import random

from hypothesis import given, strategies as st

from semforge.viz import VizSpec, render_text_chart, viz_spec_for_column, viz_specs_for_rows


def counts(spec: VizSpec) -> int:
    return sum(b.count for b in spec.bins) + spec.overflow_count


class TestNumeric:
    def test_seven_equal_width_bins(self):
        spec = viz_spec_for_column("n", list(range(70)))
        assert spec.chart == "histogram7"
        assert len(spec.bins) == 7
        assert [b.count for b in spec.bins] == [10] * 7

    def test_degenerate_single_bin(self):
        spec = viz_spec_for_column("n", [5, 5, 5])
        assert len(spec.bins) == 1
        assert spec.bins[0].count == 3

    def test_boundary_goes_to_higher_bin(self):
        # range [0, 7), width 1: value 1.0 sits on the edge of bins 0/1 -> bin 1
        spec = viz_spec_for_column("n", [0.0, 1.0, 7.0])
        assert spec.bins[0].count == 1
        assert spec.bins[1].count == 1
        assert spec.bins[6].count == 1  # max lands in the last bin

    def test_counts_sum_to_nonnull(self):
        values = [1.5, None, 2.5, 99.0, None, -3.0]
        assert counts(viz_spec_for_column("n", values)) == 4


class TestBoolean:
    def test_all_true_87(self):
        spec = viz_spec_for_column("trust", [True] * 87)
        assert spec.chart == "bar2_boolean"
        assert [(b.label, b.count) for b in spec.bins] == [("true", 87), ("false", 0)]

    def test_mixed(self):
        spec = viz_spec_for_column("b", [True, False, False, None])
        assert [(b.label, b.count) for b in spec.bins] == [("true", 1), ("false", 2)]


class TestCategorical:
    def test_three_levels(self):
        col = ["low", "medium", "high", "low"] * 5
        spec = viz_spec_for_column("level", col)
        assert spec.chart == "bar_top7_categories"
        assert len(spec.bins) == 3
        assert spec.overflow_count == 0

    def test_top7_with_overflow_and_ties_lexicographic(self):
        col = []
        for i, label in enumerate("abcdefghij"):  # 10 categories
            col += [label] * 5  # all tied at 5
        col += ["a"] * 40  # make it categorical: 90 values, 10 distinct
        spec = viz_spec_for_column("c", col)
        assert spec.chart == "bar_top7_categories"
        assert [b.label for b in spec.bins] == ["a", "b", "c", "d", "e", "f", "g"]
        assert spec.overflow_count == 15  # h, i, j at 5 each
        assert counts(spec) == 90

    def test_strict_threshold_flip(self):
        cat_49 = [f"c{i}" for i in range(49)] + ["c0"] * 51
        not_cat = [f"c{i}" for i in range(50)] + ["c0"] * 50
        assert viz_spec_for_column("x", cat_49).chart == "bar_top7_categories"
        assert viz_spec_for_column("x", not_cat).chart == "histogram7_char_counts"


class TestFreeTextAndLists:
    def test_multi_word_word_counts(self):
        col = [f"some text with {i} extra words here {'pad ' * i}" for i in range(20)]
        spec = viz_spec_for_column("t", col)
        assert spec.chart == "histogram7_word_counts"
        assert counts(spec) == 20

    def test_single_word_char_counts(self):
        col = [f"w{'x' * i}" for i in range(20)]
        spec = viz_spec_for_column("t", col)
        assert spec.chart == "histogram7_char_counts"

    def test_list_lengths(self):
        spec = viz_spec_for_column("xs", [[1], [1, 2], [1, 2, 3], []])
        assert spec.chart == "histogram7"
        assert counts(spec) == 4

    def test_mixed_none(self):
        assert viz_spec_for_column("m", [1, "a"]).chart == "none"
        assert viz_spec_for_column("m", [{"k": 1}]).chart == "none"


@given(st.lists(st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False,
                                               width=32),
                          st.booleans(), st.text(max_size=12),
                          st.lists(st.integers(), max_size=3)),
                max_size=60))
def test_total_plus_overflow_equals_nonnull(values):
    spec = viz_spec_for_column("col", values)
    nonnull = sum(1 for v in values if v is not None)
    if spec.chart == "none":
        return
    assert counts(spec) == nonnull


def test_permutation_invariant():
    rnd = random.Random(1)
    values = [rnd.choice(["a", "b", "c", None]) for _ in range(50)]
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert viz_spec_for_column("c", values).to_obj() == viz_spec_for_column("c", shuffled).to_obj()


def test_specs_for_rows_column_order():
    rows = [{"a": 1, "b": "x"}, {"b": "y", "c": True}]
    specs = viz_specs_for_rows(rows)
    assert [s.column for s in specs] == ["a", "b", "c"]


def test_text_chart_renders():
    spec = viz_spec_for_column("level", ["low", "low", "high"] * 4)
    out = render_text_chart(spec)
    assert "level" in out and "low" in out
